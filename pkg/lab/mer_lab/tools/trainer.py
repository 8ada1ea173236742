"""
Deterministic late-fusion trainer.

Objective per minibatch:

    total = CE(g([z_1, ..., z_M]), y) + lambda * sum_m L_MER(z_m)  (+ weight decay)

with z_m = f_m(x_m) the encoder outputs. The MER gradient enters each
encoder's backward pass at its output.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..models.network import AdamState, FusionModel, ModelDims, Mlp
from ..models.schema import Corruption, EpochMetrics, MerBreakdown, StandaloneAccuracy, TrainConfig
from ..utils.linalg import SeededRng, gaussian_matrix
from ..utils.validators import ContractError, ShapeError, as_matrix, ensure_finite, require_labels
from . import diagnostics
from .regularizer import mer_loss_grad, mer_loss
from .synthgen import DatasetBundle, DomainData, subset_modalities

logger = logging.getLogger(__name__)


def init_model(dims: ModelDims, seed: int) -> FusionModel:
    """He-style Gaussian init (scale sqrt(2 / fan_in)), zero biases."""
    for width in list(dims.input_dims) + list(dims.hidden_widths) + [dims.embedding_dim, dims.num_classes]:
        if width < 1:
            raise ContractError(f"layer widths must be positive, got {width}")
    rng = SeededRng(seed)

    def layer(fan_in: int, fan_out: int) -> Tuple[np.ndarray, np.ndarray]:
        return gaussian_matrix(rng, fan_in, fan_out) * math.sqrt(2.0 / fan_in), np.zeros(fan_out)

    encoders = []
    for input_dim in dims.input_dims:
        widths = [input_dim] + list(dims.hidden_widths) + [dims.embedding_dim]
        weights, biases = zip(*(layer(a, b) for a, b in zip(widths[:-1], widths[1:])))
        encoders.append(Mlp(list(weights), list(biases)))
    fused = dims.embedding_dim * len(dims.input_dims)
    weight, bias = layer(fused, dims.num_classes)
    return FusionModel(encoders, weight, bias, dims.names)


def _check_batch(model: FusionModel, batch: Sequence[np.ndarray]) -> List[np.ndarray]:
    if len(batch) != len(model.encoders):
        raise ShapeError(f"model has {len(model.encoders)} modalities, batch has {len(batch)}")
    blocks = [as_matrix(x, f"modality {m}") for m, x in enumerate(batch)]
    rows = {b.shape[0] for b in blocks}
    if len(rows) != 1:
        raise ShapeError(f"batch row counts differ across modalities: {sorted(rows)}")
    for m, (block, encoder) in enumerate(zip(blocks, model.encoders)):
        if block.shape[1] != encoder.input_dim:
            raise ShapeError(
                f"modality {m}: encoder expects {encoder.input_dim} features, got {block.shape[1]}"
            )
    return blocks


def encode(model: FusionModel, batch: Sequence[np.ndarray]) -> List[np.ndarray]:
    blocks = _check_batch(model, batch)
    return [encoder.forward(x)[-1] for encoder, x in zip(model.encoders, blocks)]


def classify(model: FusionModel, encoder_outputs: Sequence[np.ndarray]) -> np.ndarray:
    return np.hstack(encoder_outputs) @ model.classifier_weight + model.classifier_bias


def forward(model: FusionModel, batch: Sequence[np.ndarray]) -> Tuple[List[np.ndarray], np.ndarray]:
    outputs = encode(model, batch)
    return outputs, ensure_finite(classify(model, outputs), "logits")


def predict(model: FusionModel, batch: Sequence[np.ndarray]) -> np.ndarray:
    return np.argmax(forward(model, batch)[1], axis=1)


def accuracy(model: FusionModel, domain: DomainData) -> float:
    if domain.size == 0:
        return 0.0
    return float(np.mean(predict(model, domain.features) == domain.labels))


@dataclass
class LossBreakdown:
    ce: float
    total: float
    mer: List[Optional[MerBreakdown]] = field(default_factory=list)
    weight_decay: float = 0.0

    @property
    def mer_marg(self) -> float:
        return float(sum(b.marginal_loss for b in self.mer if b is not None))

    @property
    def mer_spec(self) -> float:
        return float(sum(b.spectral_loss for b in self.mer if b is not None))

    @property
    def mer_combined(self) -> float:
        return float(sum(b.combined for b in self.mer if b is not None))


def _targets(labels: np.ndarray, num_classes: int, smoothing: float) -> np.ndarray:
    onehot = np.eye(num_classes)[labels]
    if smoothing > 0:
        return (1.0 - smoothing) * onehot + smoothing / num_classes
    return onehot


def loss_and_grads(
    model: FusionModel,
    batch: Sequence[np.ndarray],
    labels,
    cfg: TrainConfig,
    rng: Optional[SeededRng] = None,
    training: bool = True,
) -> Tuple[LossBreakdown, List[np.ndarray]]:
    """
    Losses and parameter gradients (aligned with model.parameters()).

    Dropout and feature noise need `rng` and act only when `training`.
    """
    blocks = _check_batch(model, batch)
    n = blocks[0].shape[0]
    labels = require_labels(labels, n, model.num_classes)
    reg = cfg.baseline_reg
    mer_cfg = cfg.active_mer

    caches = [encoder.forward(x) for encoder, x in zip(model.encoders, blocks)]
    outputs = [cache[-1] for cache in caches]

    mer_breakdowns: List[Optional[MerBreakdown]] = []
    mer_grads: List[Optional[np.ndarray]] = []
    for z in outputs:
        if mer_cfg is None:
            mer_breakdowns.append(None)
            mer_grads.append(None)
        elif mer_cfg.lam > 0:
            breakdown, grad = mer_loss_grad(z, mer_cfg)
            mer_breakdowns.append(breakdown)
            mer_grads.append(mer_cfg.lam * grad)
        else:
            mer_breakdowns.append(mer_loss(z, mer_cfg))
            mer_grads.append(None)

    fused_inputs = outputs
    masks: List[Optional[np.ndarray]] = [None] * len(outputs)
    if training and reg.name in ("dropout", "feature_noise") and reg.value > 0:
        if rng is None:
            raise ContractError(f"{reg.name} needs an rng during training")
        fused_inputs = []
        for m, z in enumerate(outputs):
            if reg.name == "dropout":
                masks[m] = (rng.uniform(z.shape) >= reg.value) / (1.0 - reg.value)
                fused_inputs.append(z * masks[m])
            else:
                fused_inputs.append(z + reg.value * gaussian_matrix(rng, *z.shape))

    fused = np.hstack(fused_inputs)
    logits = fused @ model.classifier_weight + model.classifier_bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    smoothing = reg.value if reg.name == "label_smoothing" else 0.0
    targets = _targets(labels, model.num_classes, smoothing)
    ce = float(-np.sum(targets * log_probs) / n)

    decay = 0.0
    if reg.name == "weight_decay" and reg.value > 0:
        decay = 0.5 * reg.value * float(sum(np.sum(w * w) for w in model.weight_matrices()))

    mer_total = sum(b.combined for b in mer_breakdowns if b is not None)
    lam = mer_cfg.lam if mer_cfg is not None else 0.0
    total = ce + lam * mer_total + decay

    grad_logits = (np.exp(log_probs) - targets) / n
    grad_cls_w = fused.T @ grad_logits
    grad_cls_b = grad_logits.sum(axis=0)
    grad_fused = grad_logits @ model.classifier_weight.T

    grads: List[np.ndarray] = []
    for m, (encoder, cache) in enumerate(zip(model.encoders, caches)):
        grad_z = grad_fused[:, model.classifier_slice(m)]
        if masks[m] is not None:
            grad_z = grad_z * masks[m]
        if mer_grads[m] is not None:
            grad_z = grad_z + mer_grads[m]
        weight_grads, bias_grads = encoder.backward(cache, grad_z)
        for gw, gb in zip(weight_grads, bias_grads):
            grads.extend([gw, gb])
    grads.extend([grad_cls_w, grad_cls_b])

    if decay:
        for i, (param, is_weight) in enumerate(zip(model.parameters(), model.is_weight())):
            if is_weight:
                grads[i] = grads[i] + reg.value * param

    losses = LossBreakdown(ce=ce, total=float(total), mer=mer_breakdowns, weight_decay=decay)
    return losses, grads


def adam_step(
    model: FusionModel, grads: Sequence[np.ndarray], state: AdamState, lr: float
) -> Tuple[FusionModel, AdamState]:
    params = model.parameters()
    if len(grads) != len(params):
        raise ShapeError(f"expected {len(params)} gradients, got {len(grads)}")
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for param, grad, m, v in zip(params, grads, state.first, state.second):
        if grad.shape != param.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match parameter {param.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        param -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        ensure_finite(param, "parameter after Adam step")
    return model, state


def _minibatches(n: int, batch_size: int, rng: SeededRng) -> List[np.ndarray]:
    """Shuffled near-equal batches (sizes differ by at most 1)."""
    order = rng.permutation(n)
    count = max(1, math.ceil(n / batch_size))
    return np.array_split(order, count)


def _merge(domains: Sequence[DomainData], name: str) -> DomainData:
    modalities = len(domains[0].features)
    return DomainData(
        name=name,
        features=[np.vstack([d.features[m] for d in domains]) for m in range(modalities)],
        labels=np.concatenate([d.labels for d in domains]),
    )


def source_split(dataset: DatasetBundle, cfg: TrainConfig) -> Tuple[DomainData, DomainData]:
    """Seeded per-source-domain train/validation split, pooled across sources."""
    rng = SeededRng(cfg.seed).child(1)
    train, val = [], []
    for s, domain in enumerate(dataset.sources):
        train_idx, val_idx = diagnostics.stratified_split(domain.labels, cfg.validation_fraction, rng.child(s))
        train.append(domain.take(train_idx))
        val.append(domain.take(val_idx))
    return _merge(train, "source_train"), _merge(val, "source_val")


@dataclass
class TrainResult:
    """In-memory run record: per-epoch metrics and the selected checkpoint."""

    metrics: List[EpochMetrics]
    model: FusionModel
    best_epoch: int
    config: TrainConfig

    @property
    def best(self) -> EpochMetrics:
        return self.metrics[self.best_epoch]


def _epoch_losses(model: FusionModel, batches: List[np.ndarray], data: DomainData, cfg: TrainConfig):
    totals = np.zeros(4)
    for idx in batches:
        losses, _ = loss_and_grads(
            model, [f[idx] for f in data.features], data.labels[idx], cfg, training=False
        )
        totals += (losses.total, losses.ce, losses.mer_marg, losses.mer_spec)
    return totals / len(batches)


def train(model: FusionModel, dataset: DatasetBundle, cfg: TrainConfig) -> TrainResult:
    """
    Minibatch Adam on the pooled source training split.

    Row e of the metrics holds losses averaged over epoch e's minibatches with
    the parameters at the start of the epoch, and accuracies after its updates.
    The returned model is the checkpoint with the best source-validation accuracy.
    """
    if not dataset.sources or sum(d.size for d in dataset.sources) == 0:
        raise ContractError("training needs at least one non-empty source domain")
    train_data, val_data = source_split(dataset, cfg)
    if train_data.size < 2:
        raise ContractError(f"source training split has {train_data.size} samples; need at least 2")
    target = dataset.target

    rng = SeededRng(cfg.seed).child(2)
    state = AdamState.for_model(model)
    metrics: List[EpochMetrics] = []
    best_epoch, best_acc, best_model = -1, -1.0, model.copy()

    for epoch in range(cfg.epochs):
        batches = _minibatches(train_data.size, cfg.batch_size, rng)
        total, ce, marg, spec = _epoch_losses(model, batches, train_data, cfg)
        for idx in batches:
            _, grads = loss_and_grads(
                model, [f[idx] for f in train_data.features], train_data.labels[idx], cfg, rng=rng
            )
            adam_step(model, grads, state, cfg.learning_rate)

        val_acc = accuracy(model, val_data)
        tgt_acc = accuracy(model, target)
        metrics.append(EpochMetrics(epoch, total, ce, marg, spec, val_acc, tgt_acc))
        if val_acc > best_acc:
            best_epoch, best_acc, best_model = epoch, val_acc, model.copy()
        logger.debug(
            "epoch %d total=%.4f ce=%.4f marg=%.4f spec=%.4f val=%.4f tgt=%.4f",
            epoch, total, ce, marg, spec, val_acc, tgt_acc,
        )

    logger.info(
        "✓ Trained %s for %d epochs; best source-val %.4f at epoch %d (target %.4f)",
        "+".join(model.modality_names), cfg.epochs, best_acc, best_epoch, metrics[best_epoch].tgt_acc,
    )
    return TrainResult(metrics=metrics, model=best_model, best_epoch=best_epoch, config=cfg)


def model_dims(dataset: DatasetBundle, cfg: TrainConfig) -> ModelDims:
    if cfg.input_dims is not None and list(cfg.input_dims) != dataset.input_dims:
        raise ContractError(
            f"config input_dims {list(cfg.input_dims)} do not match data dims {dataset.input_dims}"
        )
    return ModelDims(
        input_dims=dataset.input_dims,
        hidden_widths=list(cfg.hidden_widths),
        embedding_dim=cfg.embedding_dim,
        num_classes=dataset.num_classes,
        modality_names=dataset.modality_names,
    )


def train_fusion(dataset: DatasetBundle, cfg: TrainConfig) -> TrainResult:
    return train(init_model(model_dims(dataset, cfg), cfg.seed), dataset, cfg)


def train_unimodal(dataset: DatasetBundle, modality: str, cfg: TrainConfig) -> TrainResult:
    """Independently trained single-modality model with the same recipe."""
    single = subset_modalities(dataset, [modality])
    unimodal_cfg = cfg.with_overrides(input_dims=None)
    return train(init_model(model_dims(single, unimodal_cfg), cfg.seed), single, unimodal_cfg)


def standalone_probe(
    model: FusionModel, modality: str, dataset: DatasetBundle, cfg: TrainConfig, rng: SeededRng
) -> StandaloneAccuracy:
    """Linear probe on one frozen encoder: source-train features in, held-out source and target out."""
    m = model.modality_index(modality)
    train_data, _ = source_split(dataset, cfg)
    source_features = model.encoders[m].forward(train_data.features[dataset.modality_names.index(modality)])[-1]
    target = dataset.target
    target_features = model.encoders[m].forward(target.features[dataset.modality_names.index(modality)])[-1]
    return diagnostics.standalone_probe(
        source_features, train_data.labels, target_features, target.labels, rng,
        num_classes=dataset.num_classes,
    )


def corrupted_evaluate(
    model: FusionModel, domain: DomainData, corruption: Corruption, rng: SeededRng
) -> float:
    """Fused accuracy with one encoder's output noised or zeroed before fusion."""
    m = model.modality_index(corruption.modality)
    outputs = encode(model, domain.features)
    if corruption.kind == "drop":
        outputs[m] = np.zeros_like(outputs[m])
    elif corruption.sigma > 0:
        outputs[m] = outputs[m] + corruption.sigma * gaussian_matrix(rng, *outputs[m].shape)
    predicted = np.argmax(classify(model, outputs), axis=1)
    return float(np.mean(predicted == domain.labels)) if domain.size else 0.0
