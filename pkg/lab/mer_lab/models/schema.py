from dataclasses import dataclass, field, asdict, replace
from typing import Any, Dict, List, Optional

import numpy as np

from ..utils.validators import (
    ConfigError,
    require_choice,
    require_non_negative,
    require_positive,
)

BASELINE_REGULARIZERS = ("none", "dropout", "feature_noise", "weight_decay", "label_smoothing")
ALIGNMENT_METRICS = ("cka-linear", "cka-rbf", "procrustes")


@dataclass(frozen=True)
class MerConfig:
    """Hyperparameters of the feature-entropy regularizer."""

    gamma: float = 1.0
    eps: float = 1e-4
    alpha_marg: float = 1.0
    alpha_spec: float = 1.0
    lam: float = 3.0

    def __post_init__(self):
        require_positive(self.gamma, "mer.gamma")
        require_positive(self.eps, "mer.eps")
        require_non_negative(self.alpha_marg, "mer.alpha_marg")
        require_non_negative(self.alpha_spec, "mer.alpha_spec")
        require_non_negative(self.lam, "mer.lambda")

    def marginal_only(self) -> "MerConfig":
        return replace(self, alpha_spec=0.0)

    def spectral_only(self) -> "MerConfig":
        return replace(self, alpha_marg=0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "gamma": self.gamma,
            "eps": self.eps,
            "alpha_marg": self.alpha_marg,
            "alpha_spec": self.alpha_spec,
            "lambda": self.lam,
        }


@dataclass
class MerBreakdown:
    marginal_loss: float
    spectral_loss: float
    combined: float
    per_dim_sigma: np.ndarray
    correlation_logdet: float

    def to_dict(self, digits: Optional[int] = None) -> Dict[str, Any]:
        def fmt(value: float) -> float:
            return float(f"{value:.{digits}g}") if digits else float(value)

        return {
            "marginal_loss": fmt(self.marginal_loss),
            "spectral_loss": fmt(self.spectral_loss),
            "combined": fmt(self.combined),
            "correlation_logdet": fmt(self.correlation_logdet),
            "per_dim_sigma": [fmt(s) for s in self.per_dim_sigma],
        }


@dataclass
class EntropyDecomposition:
    ld_entropy: float
    marginal_term: float
    spectral_term: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class BaselineReg:
    """One of the standard regularizers applied per encoder; `value` is p, sigma, w or s."""

    name: str = "none"
    value: float = 0.0

    def __post_init__(self):
        require_choice(self.name, BASELINE_REGULARIZERS, "baseline_reg.name")
        require_non_negative(self.value, "baseline_reg.value")
        if self.name == "dropout" and not self.value < 1.0:
            raise ConfigError(f"dropout probability must be < 1, got {self.value}")
        if self.name == "label_smoothing" and not self.value < 1.0:
            raise ConfigError(f"label smoothing must be < 1, got {self.value}")

    @classmethod
    def parse(cls, text: str) -> "BaselineReg":
        """Parse `name` or `name=value`, e.g. `dropout=0.2`."""
        name, _, value = text.partition("=")
        defaults = {"dropout": 0.2, "feature_noise": 0.5, "weight_decay": 1e-3, "label_smoothing": 0.1}
        try:
            number = float(value) if value else defaults.get(name.strip(), 0.0)
        except ValueError:
            raise ConfigError(f"invalid baseline regularizer value '{value}'")
        return cls(name=name.strip(), value=number)

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "value": self.value}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 48
    epochs: int = 100
    seed: int = 0
    hidden_widths: List[int] = field(default_factory=lambda: [64, 64])
    embedding_dim: int = 16
    validation_fraction: float = 0.1
    mer_enabled: bool = False
    mer: MerConfig = field(default_factory=MerConfig)
    baseline_reg: BaselineReg = field(default_factory=BaselineReg)
    unimodal: bool = False
    input_dims: Optional[List[int]] = None

    def __post_init__(self):
        require_positive(self.learning_rate, "learning_rate")
        require_positive(self.batch_size, "batch_size")
        require_positive(self.epochs, "epochs")
        require_positive(self.embedding_dim, "embedding_dim")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError(
                f"validation_fraction must be in (0, 1), got {self.validation_fraction}"
            )
        for width in self.hidden_widths:
            require_positive(width, "hidden_widths")

    @property
    def active_mer(self) -> Optional[MerConfig]:
        return self.mer if self.mer_enabled else None

    def with_overrides(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "hidden_widths": list(self.hidden_widths),
            "embedding_dim": self.embedding_dim,
            "validation_fraction": self.validation_fraction,
            "mer": {"enabled": self.mer_enabled, **self.mer.to_dict()},
            "baseline_reg": self.baseline_reg.to_dict(),
            "unimodal": self.unimodal,
            "input_dims": None if self.input_dims is None else list(self.input_dims),
        }


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 4
    num_modalities: int = 2
    modality_names: List[str] = field(default_factory=lambda: ["video", "audio"])
    input_dims: List[int] = field(default_factory=lambda: [32, 24])
    num_source_domains: int = 2
    samples_per_domain: int = 600
    invariant_strength: float = 0.8
    cooccurrence_strength: float = 2.0
    cooccurrence_nuisance: float = 2.0
    noise_std: List[float] = field(default_factory=lambda: [0.8, 0.8])
    latent_dim: int = 8
    latent_noise_var: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.num_source_domains < 1:
            raise ConfigError(f"num_source_domains must be >= 1, got {self.num_source_domains}")
        require_positive(self.num_modalities, "num_modalities")
        require_positive(self.samples_per_domain, "samples_per_domain")
        require_positive(self.latent_dim, "latent_dim")
        require_non_negative(self.invariant_strength, "invariant_strength")
        require_non_negative(self.cooccurrence_strength, "cooccurrence_strength")
        require_non_negative(self.cooccurrence_nuisance, "cooccurrence_nuisance")
        require_non_negative(self.latent_noise_var, "latent_noise_var")
        for key in ("modality_names", "input_dims", "noise_std"):
            if len(getattr(self, key)) != self.num_modalities:
                raise ConfigError(
                    f"{key} needs {self.num_modalities} entries, got {len(getattr(self, key))}"
                )
        if len(set(self.modality_names)) != self.num_modalities:
            raise ConfigError("modality_names must be distinct")
        for dim in self.input_dims:
            require_positive(dim, "input_dims")
        for std in self.noise_std:
            require_non_negative(std, "noise_std")

    def to_dict(self) -> Dict[str, Any]:
        result = asdict(self)
        for key in ("modality_names", "input_dims", "noise_std"):
            result[key] = list(result[key])
        return result


@dataclass(frozen=True)
class Corruption:
    """Test-time corruption of one encoder output: Gaussian noise of `sigma` or a full drop."""

    kind: str
    modality: str
    sigma: float = 0.0

    def __post_init__(self):
        require_choice(self.kind, ("noise", "drop"), "corruption kind")
        require_non_negative(self.sigma, "corruption sigma")

    @property
    def label(self) -> str:
        if self.kind == "noise":
            return f"noise:{self.modality}:{self.sigma:g}"
        return f"drop:{self.modality}"

    @classmethod
    def parse(cls, text: str) -> "Corruption":
        """`noise:<modality>:<sigma>` or `drop:<modality>`."""
        parts = text.split(":")
        if parts[0] == "noise" and len(parts) == 3:
            try:
                return cls("noise", parts[1], float(parts[2]))
            except ValueError:
                raise ConfigError(f"invalid noise level in corruption '{text}'")
        if parts[0] == "drop" and len(parts) == 2:
            return cls("drop", parts[1])
        raise ConfigError(f"invalid corruption '{text}'; use noise:<modality>:<sigma> or drop:<modality>")


@dataclass
class AlignmentReport:
    metric_name: str
    per_class_scores: Dict[int, float]
    mean_score: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "metric": self.metric_name,
            "per_class": {int(k): float(v) for k, v in self.per_class_scores.items()},
            "mean": float(self.mean_score),
        }


@dataclass
class ProbeResult:
    accuracy: float
    num_domains: int
    confusion: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {
            "accuracy": float(self.accuracy),
            "num_domains": int(self.num_domains),
            "confusion": self.confusion.astype(int).tolist(),
        }


@dataclass
class StandaloneAccuracy:
    source_heldout: float
    target: float

    def to_dict(self) -> Dict[str, Any]:
        return {"source_heldout": float(self.source_heldout), "target": float(self.target)}


@dataclass
class EpochMetrics:
    epoch: int
    total: float
    ce: float
    mer_marg: float
    mer_spec: float
    src_val_acc: float
    tgt_acc: float

    COLUMNS = ("epoch", "total", "ce", "mer_marg", "mer_spec", "src_val_acc", "tgt_acc")

    def as_row(self) -> List[Any]:
        return [getattr(self, column) for column in self.COLUMNS]
