"""
Representation diagnostics: effective rank, singular-value spectrum,
cross-domain alignment (CKA linear / RBF, Procrustes) and linear probes.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import pdist, squareform

from ..models.schema import ALIGNMENT_METRICS, AlignmentReport, ProbeResult, StandaloneAccuracy
from ..utils.linalg import SeededRng, center_columns, column_mean_std, singular_values
from ..utils.validators import (
    ContractError,
    DegenerateError,
    MissingClassError,
    as_matrix,
    require_labels,
    require_same_rows,
)

logger = logging.getLogger(__name__)

SPECTRUM_FLOOR = 1e-12
PROBE_EPOCHS = 200
PROBE_LR = 0.1
PROBE_TEST_FRACTION = 0.2


def rankme(z) -> float:
    """exp of the Shannon entropy of the normalized singular values (0 ln 0 := 0)."""
    z = as_matrix(z, "z")
    sv = singular_values(z)
    tolerance = 1e-12 * max(z.shape)
    if sv.size == 0 or sv[0] <= tolerance:
        raise DegenerateError("rankme needs at least one non-zero singular value")
    p = sv / sv.sum()
    p = p[p > 0]
    return float(np.exp(-np.sum(p * np.log(p))))


def spectrum(z) -> np.ndarray:
    """ln(sigma_i / sigma_1), descending; zero singular values map to ln(1e-12)."""
    z = as_matrix(z, "z")
    sv = singular_values(z)
    if sv.size == 0 or sv[0] <= 0:
        raise DegenerateError("spectrum of a zero matrix is undefined")
    return np.log(np.maximum(sv / sv[0], SPECTRUM_FLOOR))


def _require_pair(x, y) -> Tuple[np.ndarray, np.ndarray]:
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    require_same_rows(x, y)
    if x.shape[0] < 3:
        raise ContractError(f"alignment metrics need at least 3 rows, got {x.shape[0]}")
    return x, y


def cka_linear(x, y) -> float:
    x, y = _require_pair(x, y)
    xc = center_columns(x)
    yc = center_columns(y)
    denominator = np.linalg.norm(xc.T @ xc) * np.linalg.norm(yc.T @ yc)
    if denominator == 0:
        raise DegenerateError("linear CKA is undefined for constant features")
    return float(np.linalg.norm(yc.T @ xc) ** 2 / denominator)


def _center_gram(gram: np.ndarray) -> np.ndarray:
    centered = gram - gram.mean(axis=0, keepdims=True)
    return centered - centered.mean(axis=1, keepdims=True)


def _rbf_gram(x: np.ndarray, bandwidth: Optional[float]) -> np.ndarray:
    distances = pdist(x)
    if bandwidth is None:
        bandwidth = float(np.median(distances))
        if bandwidth == 0:
            raise DegenerateError("median pairwise distance is 0; rows are identical")
    elif not bandwidth > 0:
        raise ContractError(f"RBF bandwidth must be > 0, got {bandwidth}")
    return np.exp(-squareform(distances) ** 2 / (2.0 * bandwidth**2))


def cka_rbf(x, y, bandwidth: Union[str, float, None] = "median") -> float:
    """CKA on double-centered RBF Gram matrices; bandwidth 'median' or a fixed value."""
    x, y = _require_pair(x, y)
    fixed = None if bandwidth in (None, "median") else float(bandwidth)
    kx = _center_gram(_rbf_gram(x, fixed))
    ky = _center_gram(_rbf_gram(y, fixed))
    denominator = np.linalg.norm(kx) * np.linalg.norm(ky)
    if denominator == 0:
        raise DegenerateError("RBF CKA is undefined for constant kernels")
    return float(np.sum(kx * ky) / denominator)


def procrustes_similarity(x, y) -> float:
    """Nuclear norm of the cross-matrix of centered, unit-Frobenius representations."""
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    require_same_rows(x, y)
    width = max(x.shape[1], y.shape[1])
    x = np.pad(x, ((0, 0), (0, width - x.shape[1])))
    y = np.pad(y, ((0, 0), (0, width - y.shape[1])))
    xc = center_columns(x)
    yc = center_columns(y)
    nx = np.linalg.norm(xc)
    ny = np.linalg.norm(yc)
    if nx == 0 or ny == 0:
        raise DegenerateError("Procrustes similarity is undefined for constant features")
    return float(np.linalg.norm((xc / nx).T @ (yc / ny), ord="nuc"))


def alignment(x, y, metric: str) -> float:
    if metric == "cka-linear":
        return cka_linear(x, y)
    if metric == "cka-rbf":
        return cka_rbf(x, y)
    if metric == "procrustes":
        return procrustes_similarity(x, y)
    raise ContractError(f"unknown alignment metric '{metric}'; expected one of {', '.join(ALIGNMENT_METRICS)}")


def class_conditional_alignment(
    x_src, y_src, x_tgt, y_tgt, metric: str, rng: SeededRng
) -> AlignmentReport:
    """Per-class alignment between source and target, averaged over classes."""
    x_src = as_matrix(x_src, "x_src")
    x_tgt = as_matrix(x_tgt, "x_tgt")
    y_src = require_labels(y_src, x_src.shape[0])
    y_tgt = require_labels(y_tgt, x_tgt.shape[0])

    scores: Dict[int, float] = {}
    for label in sorted(set(y_src.tolist()) | set(y_tgt.tolist())):
        src_idx = np.flatnonzero(y_src == label)
        tgt_idx = np.flatnonzero(y_tgt == label)
        if src_idx.size == 0:
            raise MissingClassError(label, "source")
        if tgt_idx.size == 0:
            raise MissingClassError(label, "target")
        n_c = min(src_idx.size, tgt_idx.size)
        if n_c < 3:
            raise ContractError(f"class {label} needs at least 3 samples on each side, got {n_c}")
        if src_idx.size > n_c:
            src_idx = src_idx[rng.choice(src_idx.size, n_c)]
        if tgt_idx.size > n_c:
            tgt_idx = tgt_idx[rng.choice(tgt_idx.size, n_c)]
        scores[label] = alignment(x_src[src_idx], x_tgt[tgt_idx], metric)

    mean_score = float(np.mean(list(scores.values())))
    return AlignmentReport(metric_name=metric, per_class_scores=scores, mean_score=mean_score)


def stratified_split(labels: np.ndarray, test_fraction: float, rng: SeededRng) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded per-class split; every class keeps at least one sample on each side."""
    train, test = [], []
    for label in np.unique(labels):
        idx = np.flatnonzero(labels == label)
        idx = idx[rng.permutation(idx.size)]
        n_test = int(round(test_fraction * idx.size))
        n_test = min(max(n_test, 1), idx.size - 1) if idx.size > 1 else 0
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


@dataclass
class SoftmaxProbe:
    """Multinomial logistic regression on standardized frozen features."""

    weights: np.ndarray
    bias: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def logits(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.means) / self.stds) @ self.weights + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        if y.size == 0:
            return 0.0
        return float(np.mean(self.predict(x) == y))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def fit_softmax_probe(
    x: np.ndarray, y: np.ndarray, num_classes: int, epochs: int = PROBE_EPOCHS, lr: float = PROBE_LR
) -> SoftmaxProbe:
    """Full-batch gradient descent on softmax cross-entropy, zero-initialized."""
    means, stds = column_mean_std(x, 1e-8)
    xs = (x - means) / stds
    weights = np.zeros((x.shape[1], num_classes))
    bias = np.zeros(num_classes)
    targets = np.eye(num_classes)[y]
    n = x.shape[0]
    for _ in range(epochs):
        residual = (softmax(xs @ weights + bias) - targets) / n
        weights -= lr * (xs.T @ residual)
        bias -= lr * residual.sum(axis=0)
    return SoftmaxProbe(weights=weights, bias=bias, means=means, stds=stds)


def domain_probe(
    features_per_domain: Sequence[np.ndarray],
    rng: SeededRng,
    epochs: int = PROBE_EPOCHS,
    lr: float = PROBE_LR,
) -> ProbeResult:
    """Predict domain identity from frozen features; higher accuracy = more domain-specific."""
    if len(features_per_domain) < 2:
        raise ContractError(f"domain probe needs at least 2 domains, got {len(features_per_domain)}")
    blocks = [as_matrix(f, f"domain {i}") for i, f in enumerate(features_per_domain)]
    widths = {b.shape[1] for b in blocks}
    if len(widths) != 1:
        raise ContractError(f"domains have different feature widths: {sorted(widths)}")
    for i, block in enumerate(blocks):
        if block.shape[0] < 10:
            raise ContractError(f"domain {i} has {block.shape[0]} samples; the probe needs at least 10")

    x = np.vstack(blocks)
    y = np.concatenate([np.full(b.shape[0], i) for i, b in enumerate(blocks)])
    train_idx, test_idx = stratified_split(y, PROBE_TEST_FRACTION, rng)
    probe = fit_softmax_probe(x[train_idx], y[train_idx], len(blocks), epochs, lr)

    predicted = probe.predict(x[test_idx])
    confusion = np.zeros((len(blocks), len(blocks)), dtype=np.int64)
    np.add.at(confusion, (y[test_idx], predicted), 1)
    accuracy = float(np.trace(confusion) / confusion.sum())
    logger.debug("domain probe accuracy %.4f over %d domains", accuracy, len(blocks))
    return ProbeResult(accuracy=accuracy, num_domains=len(blocks), confusion=confusion)


def standalone_probe(
    source_features,
    source_labels,
    target_features,
    target_labels,
    rng: SeededRng,
    num_classes: Optional[int] = None,
    epochs: int = PROBE_EPOCHS,
    lr: float = PROBE_LR,
) -> StandaloneAccuracy:
    """Class probe on one frozen encoder: fit on source, score held-out source and target."""
    xs = as_matrix(source_features, "source_features")
    xt = as_matrix(target_features, "target_features")
    ys = require_labels(source_labels, xs.shape[0])
    yt = require_labels(target_labels, xt.shape[0])
    if xs.shape[1] != xt.shape[1]:
        raise ContractError(f"source and target widths differ: {xs.shape[1]} vs {xt.shape[1]}")
    if xs.shape[0] < 10:
        raise ContractError(f"standalone probe needs at least 10 source samples, got {xs.shape[0]}")
    k = num_classes or int(max(ys.max(), yt.max() if yt.size else 0)) + 1

    train_idx, test_idx = stratified_split(ys, PROBE_TEST_FRACTION, rng)
    probe = fit_softmax_probe(xs[train_idx], ys[train_idx], k, epochs, lr)
    return StandaloneAccuracy(
        source_heldout=probe.accuracy(xs[test_idx], ys[test_idx]),
        target=probe.accuracy(xt, yt),
    )


def spectrum_rows(z) -> List[Tuple[int, float]]:
    return list(enumerate(spectrum(z).tolist()))
