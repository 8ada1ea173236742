"""
Run directory layout:

    config.yml                      replayable config snapshot
    metrics.csv                     one row per epoch
    diagnostics.yml                 final diagnostics report
    manifest.yml                    data source, best epoch, file index
    checkpoint/                     selected parameters as FeatureFiles
    features/<domain>/<modality>.feat + labels.txt
    unimodal/<modality>/metrics.csv
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np

from .models.network import FusionModel, Mlp
from .models.schema import EpochMetrics, TrainConfig
from .utils import config_utils, feature_io
from .utils.validators import ContractError

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.yml"
METRICS_FILE = "metrics.csv"
DIAGNOSTICS_FILE = "diagnostics.yml"
MANIFEST_FILE = "manifest.yml"
CHECKPOINT_DIR = "checkpoint"
FEATURES_DIR = "features"
UNIMODAL_DIR = "unimodal"

RUN_COMPLETE = "complete"
RUN_FAILED = "failed"


class RunStore:
    """Reads and writes the artifacts of one training run."""

    def __init__(self, run_dir: Union[str, Path]):
        self.run_dir = Path(run_dir)
        self.created = False

    def create(self) -> "RunStore":
        try:
            self.run_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ContractError(f"cannot create run directory {self.run_dir}: {e}")
        self.created = True
        return self

    def path(self, *parts: str) -> Path:
        return self.run_dir.joinpath(*parts)

    def write_config(self, cfg: TrainConfig) -> Path:
        return feature_io.write_yaml(self.path(CONFIG_FILE), cfg.to_dict())

    def read_config(self) -> TrainConfig:
        return config_utils.load_train_config(self._require(CONFIG_FILE))

    def write_metrics(self, metrics: List[EpochMetrics], *subdir: str) -> Path:
        return feature_io.write_csv(
            self.path(*subdir, METRICS_FILE), EpochMetrics.COLUMNS, [m.as_row() for m in metrics]
        )

    def write_diagnostics(self, report: Dict[str, Any]) -> Path:
        return feature_io.write_yaml(self.path(DIAGNOSTICS_FILE), report)

    def write_manifest(self, manifest: Dict[str, Any]) -> Path:
        return feature_io.write_yaml(self.path(MANIFEST_FILE), manifest)

    def read_manifest(self) -> Dict[str, Any]:
        manifest = feature_io.read_yaml(self._require(MANIFEST_FILE))
        if not isinstance(manifest, dict):
            raise ContractError(f"{self.path(MANIFEST_FILE)}: expected a mapping")
        return manifest

    def write_features(self, domain: str, modality: str, z: np.ndarray) -> Path:
        return feature_io.write_features(self.path(FEATURES_DIR, domain, f"{modality}.feat"), z)

    def write_feature_labels(self, domain: str, labels: np.ndarray) -> Path:
        return feature_io.write_labels(self.path(FEATURES_DIR, domain, "labels.txt"), labels)

    def save_checkpoint(self, model: FusionModel) -> Path:
        """One FeatureFile per parameter; biases are stored as 1-row matrices."""
        ckpt = self.path(CHECKPOINT_DIR)
        layout = {"modality_names": list(model.modality_names), "encoders": []}
        for name, encoder in zip(model.modality_names, model.encoders):
            layout["encoders"].append({"modality": name, "layers": len(encoder.weights)})
            for i, (w, b) in enumerate(zip(encoder.weights, encoder.biases)):
                feature_io.write_features(ckpt / f"{name}_w{i}.feat", w)
                feature_io.write_features(ckpt / f"{name}_b{i}.feat", b[None, :])
        feature_io.write_features(ckpt / "classifier_w.feat", model.classifier_weight)
        feature_io.write_features(ckpt / "classifier_b.feat", model.classifier_bias[None, :])
        feature_io.write_yaml(ckpt / "layout.yml", layout)
        return ckpt

    def load_checkpoint(self) -> FusionModel:
        ckpt = self.path(CHECKPOINT_DIR)
        layout = feature_io.read_yaml(self._require(CHECKPOINT_DIR, "layout.yml"))
        encoders = []
        for entry in layout["encoders"]:
            name, layers = entry["modality"], int(entry["layers"])
            weights = [feature_io.read_features(ckpt / f"{name}_w{i}.feat") for i in range(layers)]
            biases = [feature_io.read_features(ckpt / f"{name}_b{i}.feat")[0] for i in range(layers)]
            encoders.append(Mlp(weights, biases))
        return FusionModel(
            encoders,
            feature_io.read_features(ckpt / "classifier_w.feat"),
            feature_io.read_features(ckpt / "classifier_b.feat")[0],
            layout["modality_names"],
        )

    def _require(self, *parts: str) -> Path:
        path = self.path(*parts)
        if not path.is_file():
            raise ContractError(f"missing run artifact: {path}")
        return path
