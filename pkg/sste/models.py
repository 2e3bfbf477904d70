from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

TRACE_COLUMNS = ["step", "loss", "flip_rate", "aod", "predicted_aod", "delta_f1", "delta_f2", "beta_mean"]


class ProjectionName(str, Enum):
    """Enumeration of available N:M pruning functions."""
    HARD_THRESHOLD = "hard_threshold"
    SOFT_THRESHOLD = "soft_threshold"


class RescaleRecipe(str, Enum):
    """How the per-tensor scale β of a soft-thresholded weight is chosen."""
    NONE = "none"
    KEEP_L1 = "keep_l1"
    MIN_MSE = "min_mse"


class LayerMode(str, Enum):
    """Weight path of a linear layer."""
    DENSE = "dense"
    HARD_STE = "hard_ste"
    SR_STE = "sr_ste"
    S_STE = "s_ste"

    @property
    def is_sparse(self) -> bool:
        return self is not LayerMode.DENSE


class Task(str, Enum):
    """Experiment tasks runnable from the CLI."""
    TOY = "toy"
    SYNTHETIC_REGRESSION = "synthetic_regression"
    SYNTHETIC_CLASSIFICATION = "synthetic_classification"
    CHAR_LM_FFN = "char_lm_ffn"


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


class ScheduleKind(str, Enum):
    CONSTANT = "constant"
    COSINE = "cosine"


class Provenance(str, Enum):
    """Whether a sparsified gradient is the input itself or a random draw."""
    EXACT = "exact"
    SAMPLED = "sampled"


class PruneConfig(BaseModel):
    """N:M pattern, threshold interpolation and rescale recipe governing all projections."""
    n: int = Field(default=2, ge=1, description="Kept entries per block")
    m: int = Field(default=4, ge=2, description="Block size along the last axis")
    gamma: float = Field(
        default=0.0,
        ge=0.0,
        le=1.0,
        description="Soft threshold interpolation: 0 → |t_(m-n)|, 1 → |t_(m-n+1)|",
    )
    rescale: RescaleRecipe = Field(
        default=RescaleRecipe.MIN_MSE,
        description="Scale recipe for soft-thresholded weights",
    )

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def check_pattern(self) -> "PruneConfig":
        if not 1 <= self.n < self.m:
            raise ValueError(f"N:M pattern needs 1 <= n < m, got {self.n}:{self.m}")
        return self


class ScaleEntry(BaseModel):
    """One frozen (or, in the dynamic ablation, live) scale in a ScaleRegistry."""
    beta: float
    frozen: bool = True
    recipe: RescaleRecipe = RescaleRecipe.MIN_MSE
    degenerate: bool = Field(
        default=False,
        description="True when the soft-thresholded tensor was identically zero and β fell back to 1",
    )


class StepTrace(BaseModel):
    """Diagnostics captured at one traced training step."""
    step: int
    loss: float
    lr: float = 0.0
    flip_rate: Optional[float] = None
    flips: Optional[int] = None
    mask_digests: Dict[str, str] = Field(default_factory=dict)
    aod: Optional[float] = None
    predicted_aod: Optional[float] = None
    delta_f1: Optional[float] = None
    delta_f2: Optional[float] = None
    betas: Dict[str, float] = Field(default_factory=dict, description="Scale per S-STE weight after the step")
    beta_mean: Optional[float] = None


class RunSummary(BaseModel):
    """Summary statistics of a finished run."""
    final_train_loss: float
    val_loss: float
    mean_flip_rate: Optional[float] = None
    early_flip_rate: Optional[float] = None
    final_flip_rate: Optional[float] = None
    negative_aod_fraction: Optional[float] = None
    aod_ecdf: List[Tuple[float, float]] = Field(default_factory=list)


class RunRecord(BaseModel):
    """Time series and summary of a single run."""
    name: str
    config: Dict[str, Any] = Field(default_factory=dict, description="Flat config snapshot")
    seed: int
    traces: List[StepTrace] = Field(default_factory=list)
    summary: Optional[RunSummary] = None
    trajectory: List[List[float]] = Field(
        default_factory=list,
        description="Dense weights per step; only filled for the toy problem",
    )
    effective_trajectory: List[List[float]] = Field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        """Trace table with the CSV schema columns, missing quantities as NaN."""
        rows = [trace.model_dump(include=set(TRACE_COLUMNS)) for trace in self.traces]
        frame = pd.DataFrame(rows, columns=TRACE_COLUMNS)
        return frame.astype({"step": "int64"})


class SummaryRow(BaseModel):
    """One row of an ablation summary table."""
    name: str
    mode: LayerMode
    final_train_loss: float
    val_loss: float
    mean_flip_rate: Optional[float] = None
    final_flip_rate: Optional[float] = None

    model_config = ConfigDict(use_enum_values=True)


class Expectation(BaseModel):
    """A directional finding checked softly against a summary table."""
    name: str
    holds: bool
    detail: str = ""
