import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from .models.network import FusionModel
from .models.schema import ALIGNMENT_METRICS, TrainConfig
from .run_store import MANIFEST_FILE, RUN_COMPLETE, RUN_FAILED, RunStore
from .tools import diagnostics, trainer
from .tools.synthgen import DatasetBundle, load_bundle
from .utils.linalg import SeededRng
from .utils.validators import ContractError
from .workflow_supervisor import WorkflowSupervisor

logger = logging.getLogger(__name__)


def encoder_report(
    model: FusionModel, modality: str, dataset: DatasetBundle, cfg: TrainConfig, rng: SeededRng
) -> Dict[str, Any]:
    """Diagnostics of one frozen encoder: target RankMe, source/target alignment, domain and class probes."""
    m = model.modality_index(modality)
    column = dataset.modality_names.index(modality)
    outputs = {d.name: model.encoders[m].forward(d.features[column])[-1] for d in dataset.domains}
    target = dataset.target
    source_features = np.vstack([outputs[d.name] for d in dataset.sources])
    source_labels = np.concatenate([d.labels for d in dataset.sources])

    report: Dict[str, Any] = {"rankme_target": diagnostics.rankme(outputs[target.name])}
    report["alignment"] = {
        metric: diagnostics.class_conditional_alignment(
            source_features, source_labels, outputs[target.name], target.labels, metric, rng.child(i)
        ).to_dict()
        for i, metric in enumerate(ALIGNMENT_METRICS)
    }
    report["domain_probe"] = diagnostics.domain_probe(
        [outputs[d.name] for d in dataset.domains], rng.child(len(ALIGNMENT_METRICS))
    ).to_dict()
    report["standalone_probe"] = trainer.standalone_probe(
        model, modality, dataset, cfg, rng.child(len(ALIGNMENT_METRICS) + 1)
    ).to_dict()
    return report


class ExperimentRunner:
    """Train, export, diagnose and persist one run on a serialized dataset."""

    def __init__(self, cfg: TrainConfig, run_dir: Union[str, Path]):
        self.cfg = cfg
        self.store = RunStore(run_dir)
        self.supervisor = WorkflowSupervisor()

    def run(self, data_dir: Union[str, Path]) -> Dict[str, Any]:
        state: Dict[str, Any] = {"data_dir": str(data_dir), "error": None}
        steps = [
            ("Loading data", self._load_data, True),
            ("Training fusion model", self._train_fusion, True),
            ("Exporting encoder features", self._export_features, True),
            ("Training unimodal models", self._train_unimodal, self.cfg.unimodal),
            ("Computing diagnostics", self._diagnose, True),
            ("Persisting run record", self._persist, True),
        ]
        try:
            for name, func, enabled in steps:
                state = self.supervisor.supervise_step(name, func, state, enabled=enabled)
        except Exception:
            self._record_failed_run(state)
            raise
        logger.debug("step timings: %s", self.supervisor.timings())
        return state

    def _record_failed_run(self, state: Dict[str, Any]) -> None:
        if not self.store.created:
            return
        self.store.write_manifest(
            {
                "data_dir": state["data_dir"],
                "status": RUN_FAILED,
                "error": state.get("error"),
                "steps": list(self.supervisor.history),
            }
        )
        logger.info("Failure recorded in %s", self.store.path(MANIFEST_FILE))

    def _load_data(self, state: Dict[str, Any]) -> Dict[str, Any]:
        state["dataset"] = load_bundle(state["data_dir"])
        trainer.model_dims(state["dataset"], self.cfg)
        self.store.create()
        return state

    def _train_fusion(self, state: Dict[str, Any]) -> Dict[str, Any]:
        state["result"] = trainer.train_fusion(state["dataset"], self.cfg)
        return state

    def _export_features(self, state: Dict[str, Any]) -> Dict[str, Any]:
        model = state["result"].model
        dataset: DatasetBundle = state["dataset"]
        for domain in dataset.domains:
            for name, z in zip(model.modality_names, trainer.encode(model, domain.features)):
                self.store.write_features(domain.name, name, z)
            self.store.write_feature_labels(domain.name, domain.labels)
        return state

    def _train_unimodal(self, state: Dict[str, Any]) -> Dict[str, Any]:
        state["unimodal"] = {
            name: trainer.train_unimodal(state["dataset"], name, self.cfg)
            for name in state["dataset"].modality_names
        }
        return state

    def _diagnose(self, state: Dict[str, Any]) -> Dict[str, Any]:
        dataset: DatasetBundle = state["dataset"]
        result = state["result"]
        rng = SeededRng(self.cfg.seed).child(3)
        report: Dict[str, Any] = {
            "best_epoch": result.best_epoch,
            "fused_accuracy": {"source_val": result.best.src_val_acc, "target": result.best.tgt_acc},
            "fusion": {
                name: encoder_report(result.model, name, dataset, self.cfg, rng.child(m))
                for m, name in enumerate(result.model.modality_names)
            },
        }
        if state.get("unimodal"):
            offset = len(dataset.modality_names)
            report["unimodal"] = {}
            for m, (name, uni) in enumerate(state["unimodal"].items()):
                entry = encoder_report(uni.model, name, dataset, self.cfg, rng.child(offset + m))
                entry["accuracy"] = {"source_val": uni.best.src_val_acc, "target": uni.best.tgt_acc}
                report["unimodal"][name] = entry
        state["diagnostics"] = report
        return state

    def _persist(self, state: Dict[str, Any]) -> Dict[str, Any]:
        result = state["result"]
        self.store.write_config(self.cfg)
        self.store.write_metrics(result.metrics)
        for name, uni in (state.get("unimodal") or {}).items():
            self.store.write_metrics(uni.metrics, "unimodal", name)
        self.store.write_diagnostics(state["diagnostics"])
        self.store.save_checkpoint(result.model)
        self.store.write_manifest(
            {
                "data_dir": state["data_dir"],
                "status": RUN_COMPLETE,
                "best_epoch": result.best_epoch,
                "epochs": len(result.metrics),
                "modalities": list(result.model.modality_names),
                "domains": [d.name for d in state["dataset"].domains],
            }
        )
        logger.info("✓ Run record written to %s", self.store.run_dir)
        return state


def evaluate_robustness(
    store: RunStore, corruptions: List, seed: Optional[int] = None
) -> List[List[Any]]:
    """Rows (condition, accuracy, drop-from-clean) on the target domain, clean row first."""
    manifest = store.read_manifest()
    if manifest.get("status") == RUN_FAILED:
        error = manifest.get("error") or {}
        raise ContractError(f"run in {store.run_dir} did not complete: {error.get('error_message', 'unknown error')}")
    cfg = store.read_config()
    model = store.load_checkpoint()
    dataset = load_bundle(manifest["data_dir"])
    if dataset.modality_names != model.modality_names:
        raise ContractError(f"run was trained on {model.modality_names}, data has {dataset.modality_names}")
    target = dataset.target

    clean = trainer.accuracy(model, target)
    rows: List[List[Any]] = [["clean", clean, 0.0]]
    rng = SeededRng(cfg.seed if seed is None else seed).child(4)
    for i, corruption in enumerate(corruptions):
        acc = trainer.corrupted_evaluate(model, target, corruption, rng.child(i))
        rows.append([corruption.label, acc, clean - acc])
    return rows
