from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..utils.validators import ContractError, ShapeError


class Mlp:
    """Rectifier MLP: ReLU on hidden layers, identity on the output layer."""

    def __init__(self, weights: List[np.ndarray], biases: List[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ContractError("an MLP needs matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(weights, biases)):
            if w.shape[1] != b.shape[0]:
                raise ShapeError(f"layer {i}: weight width {w.shape[1]} vs bias {b.shape[0]}")
            if i and weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"layer {i}: expects {w.shape[0]} inputs, previous layer gives {weights[i - 1].shape[1]}"
                )
        self.weights = weights
        self.biases = biases

    @property
    def widths(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def forward(self, x: np.ndarray) -> List[np.ndarray]:
        """Activations of every layer, input first and output last."""
        activations = [x]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out = activations[-1] @ w + b
            activations.append(out if i == last else np.maximum(out, 0.0))
        return activations

    def backward(self, activations: List[np.ndarray], grad_out: np.ndarray):
        """Parameter gradients given d(loss)/d(output); returns (weight_grads, bias_grads)."""
        weight_grads = [None] * len(self.weights)
        bias_grads = [None] * len(self.biases)
        grad = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            weight_grads[i] = activations[i].T @ grad
            bias_grads[i] = grad.sum(axis=0)
            if i:
                grad = (grad @ self.weights[i].T) * (activations[i] > 0)
        return weight_grads, bias_grads

    def parameters(self) -> List[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params


class FusionModel:
    """Per-modality encoders, concatenated and fed to one linear classifier."""

    def __init__(
        self,
        encoders: List[Mlp],
        classifier_weight: np.ndarray,
        classifier_bias: np.ndarray,
        modality_names: Sequence[str],
    ):
        if len(encoders) != len(modality_names):
            raise ContractError("one modality name per encoder is required")
        fused = sum(e.output_dim for e in encoders)
        if classifier_weight.shape[0] != fused:
            raise ShapeError(
                f"classifier expects {classifier_weight.shape[0]} inputs, encoders give {fused}"
            )
        self.encoders = encoders
        self.classifier_weight = classifier_weight
        self.classifier_bias = classifier_bias
        self.modality_names = list(modality_names)

    @property
    def num_classes(self) -> int:
        return self.classifier_weight.shape[1]

    def modality_index(self, name: str) -> int:
        if name not in self.modality_names:
            raise ContractError(
                f"unknown modality '{name}'; model has {', '.join(self.modality_names)}"
            )
        return self.modality_names.index(name)

    def classifier_slice(self, modality: int) -> slice:
        start = sum(e.output_dim for e in self.encoders[:modality])
        return slice(start, start + self.encoders[modality].output_dim)

    def parameters(self) -> List[np.ndarray]:
        """Live references in a fixed order: encoders (w, b per layer), then classifier."""
        params = []
        for encoder in self.encoders:
            params.extend(encoder.parameters())
        params.extend([self.classifier_weight, self.classifier_bias])
        return params

    def weight_matrices(self) -> List[np.ndarray]:
        mats = []
        for encoder in self.encoders:
            mats.extend(encoder.weights)
        mats.append(self.classifier_weight)
        return mats

    def is_weight(self) -> List[bool]:
        """Per-parameter flag, aligned with parameters(): True for weight matrices."""
        flags = []
        for encoder in self.encoders:
            flags.extend([True, False] * len(encoder.weights))
        flags.extend([True, False])
        return flags

    def copy(self) -> "FusionModel":
        return FusionModel(
            encoders=[
                Mlp([w.copy() for w in e.weights], [b.copy() for b in e.biases])
                for e in self.encoders
            ],
            classifier_weight=self.classifier_weight.copy(),
            classifier_bias=self.classifier_bias.copy(),
            modality_names=self.modality_names,
        )

    def load_parameters(self, values: Sequence[np.ndarray]) -> None:
        params = self.parameters()
        if len(values) != len(params):
            raise ShapeError(f"expected {len(params)} parameter arrays, got {len(values)}")
        for target, value in zip(params, values):
            if target.shape != value.shape:
                raise ShapeError(f"parameter shape {value.shape} does not match {target.shape}")
            target[...] = value


@dataclass
class AdamState:
    """Bias-corrected Adam moments, one accumulator pair per parameter."""

    first: List[np.ndarray]
    second: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: FusionModel) -> "AdamState":
        params = model.parameters()
        return cls(first=[np.zeros_like(p) for p in params], second=[np.zeros_like(p) for p in params])


@dataclass
class ModelDims:
    input_dims: List[int]
    hidden_widths: List[int] = field(default_factory=lambda: [64, 64])
    embedding_dim: int = 16
    num_classes: int = 4
    modality_names: Optional[List[str]] = None

    @property
    def names(self) -> List[str]:
        if self.modality_names is not None:
            return list(self.modality_names)
        return [f"m{i}" for i in range(len(self.input_dims))]
