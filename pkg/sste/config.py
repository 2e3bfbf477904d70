"""Experiment configuration: nested sections, stored on disk as flat dotted-key JSON."""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import ConfigError
from .lowprec import parse_format
from .models import LayerMode, OptimizerKind, PruneConfig, RescaleRecipe, ScheduleKind, Task
from .mvue import BLOCK as MVUE_BLOCK

DEFAULT_LAMBDA_W = 2e-4

SECTIONS = ("prune", "rescale", "sr_ste", "mvue", "fp8", "optim", "train", "model", "data")
_SECTION_CONFIG = ConfigDict(use_enum_values=True, extra="forbid", validate_assignment=True)


class PruneSection(BaseModel):
    """N:M pattern and soft-threshold interpolation."""
    n: int = Field(default=2, ge=1, description="Kept entries per block")
    m: int = Field(default=4, ge=2, description="Block size")
    gamma: float = Field(default=0.0, ge=0.0, le=1.0, description="Threshold interpolation coefficient")

    model_config = _SECTION_CONFIG

    @model_validator(mode="after")
    def check_pattern(self) -> "PruneSection":
        if self.n >= self.m:
            raise ValueError(f"N:M pattern needs n < m, got {self.n}:{self.m}")
        return self


class RescaleSection(BaseModel):
    recipe: RescaleRecipe = Field(default=RescaleRecipe.MIN_MSE, description="Scale recipe for S-STE weights")
    freeze: bool = Field(default=True, description="Freeze β at the first forward; false recomputes it every step")

    model_config = _SECTION_CONFIG


class SrSteSection(BaseModel):
    lambda_w: Optional[float] = Field(
        default=None,
        ge=0.0,
        description="Decay strength on pruned weights; required for SR-STE runs started from the CLI",
    )

    model_config = _SECTION_CONFIG


class MvueSection(BaseModel):
    gradz: bool = Field(default=False, description="Sparsify ∇Zᵀ in the weight-gradient GEMM")
    weights: bool = Field(default=False, description="Sparsify S(W)ᵀ in the input-gradient GEMM (ablation)")

    model_config = _SECTION_CONFIG


class Fp8Section(BaseModel):
    forward: str = Field(default="none", description="Format for X and w̃: e4m3, e5m2, e3m4 or none")
    backward: str = Field(default="none", description="Format for gradients: e4m3, e5m2, e3m4 or none")

    model_config = _SECTION_CONFIG

    @model_validator(mode="after")
    def check_formats(self) -> "Fp8Section":
        parse_format(self.forward)
        parse_format(self.backward)
        return self


class OptimSection(BaseModel):
    kind: OptimizerKind = Field(default=OptimizerKind.SGD)
    lr: float = Field(default=0.1, ge=0.0)
    schedule: ScheduleKind = Field(default=ScheduleKind.COSINE)
    warmup_steps: int = Field(default=0, ge=0)
    min_lr_ratio: float = Field(default=0.1, ge=0.0, le=1.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)

    model_config = _SECTION_CONFIG


class TrainSection(BaseModel):
    steps: int = Field(default=300, ge=1)
    batch_size: int = Field(default=32, ge=1)
    probe_size: int = Field(default=128, ge=1, description="Fixed probe batch for AoD and ΔF diagnostics")
    trace_stride: int = Field(default=1, ge=1, description="Trace every k-th step")
    decompose: bool = Field(default=True, description="Record ΔF₁ and ΔF₂")
    dense_finetune_fraction: float = Field(
        default=0.0,
        ge=0.0,
        lt=1.0,
        description="Final fraction of steps trained with dense weights",
    )
    checkpoint_every: int = Field(default=0, ge=0, description="Checkpoint cadence in steps; 0 disables")
    resume_from: Optional[str] = Field(default=None, description="Checkpoint directory to resume from")

    model_config = _SECTION_CONFIG


class ModelSection(BaseModel):
    hidden: List[int] = Field(default_factory=lambda: [32, 32], description="MLP hidden widths")
    activation: str = Field(default="relu", pattern="^(relu|gelu)$")
    sparse_head: bool = Field(default=False, description="Also sparsify the MLP output layer")
    d_model: int = Field(default=16, ge=1)
    d_ff: int = Field(default=64, ge=1)
    n_blocks: int = Field(default=2, ge=1)

    model_config = _SECTION_CONFIG


class DataSection(BaseModel):
    n_train: int = Field(default=512, ge=1)
    n_val: int = Field(default=256, ge=1)
    input_dim: int = Field(default=16, ge=1)
    output_dim: int = Field(default=1, ge=1)
    noise: float = Field(default=0.0, ge=0.0)
    context: int = Field(default=3, ge=1, description="Characters of context for the char-LM task")
    toy_start: List[float] = Field(default_factory=lambda: [0.2, 0.1], min_length=2, max_length=2)

    model_config = _SECTION_CONFIG


class ExperimentConfig(BaseModel):
    """Everything needed to reproduce one run from the config and its seed."""
    name: str = Field(default="run", min_length=1)
    task: Task = Field(default=Task.SYNTHETIC_REGRESSION)
    mode: LayerMode = Field(default=LayerMode.DENSE)
    seed: int = Field(default=0, ge=0)
    dtype: str = Field(default="float32", pattern="^(float32|float64)$")
    output_dir: Optional[str] = Field(default=None, description="Run directory; defaults under SSTE_OUTPUT_ROOT")

    prune: PruneSection = Field(default_factory=PruneSection)
    rescale: RescaleSection = Field(default_factory=RescaleSection)
    sr_ste: SrSteSection = Field(default_factory=SrSteSection)
    mvue: MvueSection = Field(default_factory=MvueSection)
    fp8: Fp8Section = Field(default_factory=Fp8Section)
    optim: OptimSection = Field(default_factory=OptimSection)
    train: TrainSection = Field(default_factory=TrainSection)
    model: ModelSection = Field(default_factory=ModelSection)
    data: DataSection = Field(default_factory=DataSection)

    model_config = ConfigDict(use_enum_values=True, extra="forbid", validate_assignment=True)

    @model_validator(mode="after")
    def check_mvue_batch(self) -> "ExperimentConfig":
        # ∇Zᵀ is sparsified along the batch axis in blocks of four
        if not self.mvue.gradz or Task(self.task) is Task.TOY:
            return self
        batch = min(self.train.batch_size, self.data.n_train)
        if batch % MVUE_BLOCK:
            raise ValueError(f"mvue.gradz needs a minibatch divisible by {MVUE_BLOCK}, got {batch}")
        return self

    @property
    def layer_mode(self) -> LayerMode:
        return LayerMode(self.mode)

    @property
    def lambda_w(self) -> float:
        return DEFAULT_LAMBDA_W if self.sr_ste.lambda_w is None else self.sr_ste.lambda_w

    def prune_config(self) -> PruneConfig:
        return PruneConfig(n=self.prune.n, m=self.prune.m, gamma=self.prune.gamma, rescale=self.rescale.recipe)

    def require_explicit_lambda(self) -> None:
        """SR-STE is sensitive to λ_W, so runs started from files or flags must set it."""
        if self.layer_mode is LayerMode.SR_STE and self.sr_ste.lambda_w is None:
            raise ConfigError("SR-STE runs need sr_ste.lambda_w (use --lambda-w; 2e-4 is the usual choice)")

    def to_flat(self) -> Dict[str, Any]:
        """Namespaced ``{"section.key": value}`` form, sorted by key."""
        flat: Dict[str, Any] = {}
        for key, value in self.model_dump(mode="json").items():
            if isinstance(value, dict):
                for sub_key, sub_value in value.items():
                    flat[f"{key}.{sub_key}"] = sub_value
            else:
                flat[key] = value
        return dict(sorted(flat.items()))

    @classmethod
    def from_flat(cls, flat: Dict[str, Any]) -> "ExperimentConfig":
        nested: Dict[str, Any] = {}
        for key, value in flat.items():
            section, dot, sub_key = key.partition(".")
            if not dot:
                if section in SECTIONS:
                    raise ConfigError(f"'{key}' is a section; use dotted keys such as '{key}.<field>'")
                nested[key] = value
                continue
            if section not in SECTIONS or "." in sub_key:
                raise ConfigError(f"Unknown configuration key '{key}'")
            nested.setdefault(section, {})[sub_key] = value
        return cls.parse_nested(nested)

    @classmethod
    def parse_nested(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"Invalid experiment configuration: {e}") from e

    def with_overrides(self, overrides: Dict[str, Any]) -> "ExperimentConfig":
        """Copy with flat dotted-key overrides applied (``None`` values are skipped)."""
        flat = self.to_flat()
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in flat:
                raise ConfigError(f"Unknown configuration key '{key}'")
            flat[key] = value
        return type(self).from_flat(flat)

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), indent=2)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        try:
            flat = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read configuration from {path}: {e}") from e
        if not isinstance(flat, dict):
            raise ConfigError(f"{path}: configuration must be a JSON object")
        return cls.from_flat(flat)


DEFAULT_CONFIG = ExperimentConfig()
