import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from ..models.schema import MerConfig
from ..utils.linalg import SeededRng, gaussian_matrix
from ..utils.validators import ContractError
from . import regularizer

logger = logging.getLogger(__name__)

TOLERANCE = 1e-5


def central_difference(func: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    """Numerical gradient of a scalar function by central differences, entry by entry."""
    grad = np.zeros_like(x, dtype=np.float64)
    probe = np.array(x, dtype=np.float64, copy=True)
    for i in range(probe.size):
        original = probe.flat[i]
        probe.flat[i] = original + step
        upper = func(probe)
        probe.flat[i] = original - step
        lower = func(probe)
        probe.flat[i] = original
        grad.flat[i] = (upper - lower) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12))


def random_batch(rng: SeededRng, n: int, d: int) -> np.ndarray:
    """
    Correlated batch whose column scales straddle gamma = 1, so the hinge is
    active on some dimensions and inactive on others.
    """
    base = gaussian_matrix(rng, n, d)
    mixing = np.eye(d) + 0.4 * gaussian_matrix(rng, d, d)
    scales = 0.3 + 1.7 * rng.uniform(d)
    return (base @ mixing) * scales + gaussian_matrix(rng, 1, d)


@dataclass
class GradCheckCase:
    component: str
    seed: int
    error: float

    def to_dict(self) -> Dict[str, object]:
        return {"component": self.component, "seed": self.seed, "relative_error": self.error}


@dataclass
class GradCheckReport:
    cases: List[GradCheckCase]
    tolerance: float

    @property
    def worst(self) -> GradCheckCase:
        return max(self.cases, key=lambda case: case.error)

    @property
    def passed(self) -> bool:
        return all(case.error < self.tolerance for case in self.cases)

    def failures(self) -> List[GradCheckCase]:
        return [case for case in self.cases if not case.error < self.tolerance]

    def to_dict(self) -> Dict[str, object]:
        worst_by_component = {}
        for case in self.cases:
            current = worst_by_component.get(case.component)
            if current is None or case.error > current.error:
                worst_by_component[case.component] = case
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "checks": len(self.cases),
            "worst": self.worst.to_dict(),
            "worst_by_component": {k: v.to_dict() for k, v in worst_by_component.items()},
            "failing_seeds": sorted({case.seed for case in self.failures()}),
        }


def run_grad_check(
    n: int = 16,
    d: int = 8,
    seeds: int = 20,
    step: float = 1e-5,
    cfg: Optional[MerConfig] = None,
    tolerance: float = TOLERANCE,
) -> GradCheckReport:
    """Compare analytic marginal, spectral and combined gradients against central differences."""
    if seeds < 1:
        raise ContractError("need ≥1 seed")
    if n < 2 or d < 1:
        raise ContractError(f"grad check needs n >= 2 and d >= 1, got n={n}, d={d}")
    if not step > 0:
        raise ContractError(f"step must be > 0, got {step}")
    cfg = cfg or MerConfig()

    checks = {
        "marginal": (
            lambda z: regularizer.marginal_loss(z, cfg.gamma, cfg.eps)[0],
            lambda z: regularizer.marginal_grad(z, cfg.gamma, cfg.eps),
        ),
        "spectral": (
            lambda z: regularizer.spectral_loss(z, cfg.eps)[0],
            lambda z: regularizer.spectral_grad(z, cfg.eps),
        ),
        "combined": (
            lambda z: regularizer.mer_loss(z, cfg).combined,
            lambda z: regularizer.mer_loss_grad(z, cfg)[1],
        ),
    }

    cases = []
    for seed in range(seeds):
        z = random_batch(SeededRng(seed), n, d)
        for component, (loss_fn, grad_fn) in checks.items():
            error = relative_error(grad_fn(z), central_difference(loss_fn, z, step))
            cases.append(GradCheckCase(component=component, seed=seed, error=error))
            if not error < tolerance:
                logger.warning("✗ %s gradient off by %.3e at seed %d", component, error, seed)
    report = GradCheckReport(cases=cases, tolerance=tolerance)
    logger.info("Gradient check worst case: %s", report.worst.to_dict())
    return report
