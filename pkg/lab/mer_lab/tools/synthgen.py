"""
Synthetic multimodal domain-generalization data.

Every sample carries two label signals:
  - an invariant channel U_m e_y per modality, identical in every domain;
  - a co-occurrence channel A_m (c + s_m rho nu), driven by a latent c shared
    by all modalities whose class means are fixed across source domains and
    deranged in the target domain, so it misleads at test time.

The label-free offset nu enters modalities with alternating sign s_m, so any
single modality sees c buried under it while the sum over a pair cancels it.
rho = 0 leaves c fully visible per modality.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from ..models.schema import SynthConfig
from ..utils import config_utils, feature_io
from ..utils.linalg import SeededRng, column_mean_std, gaussian_matrix
from ..utils.validators import ContractError, require_labels

logger = logging.getLogger(__name__)

TARGET_DOMAIN = "target"


@dataclass
class DomainData:
    name: str
    features: List[np.ndarray]
    labels: np.ndarray

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    def validate(self, num_classes: int) -> None:
        for m, block in enumerate(self.features):
            if block.shape[0] != self.size:
                raise ContractError(
                    f"domain {self.name}: modality {m} has {block.shape[0]} rows, labels have {self.size}"
                )
        require_labels(self.labels, self.size, num_classes)

    def take(self, index: np.ndarray) -> "DomainData":
        return DomainData(self.name, [f[index] for f in self.features], self.labels[index])


@dataclass
class GeneratorParams:
    dictionaries: List[np.ndarray]
    mixing: List[np.ndarray]
    latent_means: np.ndarray
    target_permutation: np.ndarray


@dataclass
class DatasetBundle:
    """S source domains followed by one target domain."""

    domains: List[DomainData]
    config: SynthConfig
    generator: Optional[GeneratorParams] = None

    def __post_init__(self):
        for domain in self.domains:
            domain.validate(self.config.num_classes)

    @property
    def sources(self) -> List[DomainData]:
        return [d for d in self.domains if d.name != TARGET_DOMAIN]

    @property
    def target(self) -> DomainData:
        for domain in self.domains:
            if domain.name == TARGET_DOMAIN:
                return domain
        raise ContractError("bundle has no target domain")

    @property
    def modality_names(self) -> List[str]:
        return list(self.config.modality_names)

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def input_dims(self) -> List[int]:
        return [block.shape[1] for block in self.domains[0].features]


def source_domain_name(index: int) -> str:
    return f"source_{index}"


def _unit_columns(m: np.ndarray) -> np.ndarray:
    return m / np.linalg.norm(m, axis=0, keepdims=True)


def _orthonormal_map(rng: SeededRng, rows: int, cols: int) -> np.ndarray:
    if rows >= cols:
        q, _ = np.linalg.qr(gaussian_matrix(rng, rows, cols))
        return q
    q, _ = np.linalg.qr(gaussian_matrix(rng, cols, rows))
    return q.T


def derangement(rng: SeededRng, k: int) -> np.ndarray:
    """Random permutation without fixed points."""
    while True:
        perm = rng.permutation(k)
        if np.all(perm != np.arange(k)):
            return perm


def nuisance_sign(m: int) -> float:
    return 1.0 if m % 2 == 0 else -1.0


def _sample_domain(
    name: str, cfg: SynthConfig, params: GeneratorParams, class_means: np.ndarray, rng: SeededRng
) -> DomainData:
    n = cfg.samples_per_domain
    labels = (np.arange(n) % cfg.num_classes)[rng.permutation(n)]
    latent = class_means[labels] + np.sqrt(cfg.latent_noise_var) * gaussian_matrix(rng, n, cfg.latent_dim)
    nuisance = cfg.cooccurrence_nuisance * gaussian_matrix(rng, n, cfg.latent_dim)
    features = []
    for m in range(cfg.num_modalities):
        invariant = params.dictionaries[m][:, labels].T
        cooccurrence = (latent + nuisance_sign(m) * nuisance) @ params.mixing[m].T
        noise = cfg.noise_std[m] * gaussian_matrix(rng, n, cfg.input_dims[m])
        features.append(
            cfg.invariant_strength * invariant + cfg.cooccurrence_strength * cooccurrence + noise
        )
    return DomainData(name=name, features=features, labels=labels.astype(np.int64))


def generate(cfg: SynthConfig) -> DatasetBundle:
    root = SeededRng(cfg.seed)
    draw = root.child(0)
    params = GeneratorParams(
        dictionaries=[
            _unit_columns(gaussian_matrix(draw, dim, cfg.num_classes)) for dim in cfg.input_dims
        ],
        mixing=[_orthonormal_map(draw, dim, cfg.latent_dim) for dim in cfg.input_dims],
        latent_means=_unit_columns(gaussian_matrix(draw, cfg.latent_dim, cfg.num_classes)).T,
        target_permutation=derangement(draw, cfg.num_classes),
    )

    domains = [
        _sample_domain(source_domain_name(s), cfg, params, params.latent_means, root.child(1 + s))
        for s in range(cfg.num_source_domains)
    ]
    target_means = params.latent_means[params.target_permutation]
    domains.append(
        _sample_domain(TARGET_DOMAIN, cfg, params, target_means, root.child(1 + cfg.num_source_domains))
    )
    logger.info(
        "✓ Generated %d source domains + target, %d samples each, modalities %s",
        cfg.num_source_domains,
        cfg.samples_per_domain,
        ", ".join(cfg.modality_names),
    )
    return DatasetBundle(domains=domains, config=cfg, generator=params)


def subset_modalities(bundle: DatasetBundle, names: Sequence[str]) -> DatasetBundle:
    """Bundle restricted to the named modalities, in the given order."""
    index = [bundle.modality_names.index(n) if n in bundle.modality_names else -1 for n in names]
    for name, i in zip(names, index):
        if i < 0:
            raise ContractError(f"unknown modality '{name}'")
    cfg = bundle.config
    sub_cfg = SynthConfig(
        **{
            **cfg.to_dict(),
            "num_modalities": len(index),
            "modality_names": [cfg.modality_names[i] for i in index],
            "input_dims": [bundle.input_dims[i] for i in index],
            "noise_std": [cfg.noise_std[i] for i in index],
        }
    )
    domains = [DomainData(d.name, [d.features[i] for i in index], d.labels) for d in bundle.domains]
    return DatasetBundle(domains=domains, config=sub_cfg, generator=None)


def _column_stds(block: np.ndarray) -> np.ndarray:
    if block.shape[0] < 2:
        return np.zeros(block.shape[1])
    return column_mean_std(block, 0.0)[1]


def _standardized(block: np.ndarray) -> np.ndarray:
    stds = _column_stds(block)
    # constant columns stay zero and count as uncorrelated
    return (block - block.mean(axis=0)) / np.where(stds > 0, stds, 1.0)


def _mean_abs_cross_correlation(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape[0] < 2:
        return 0.0
    corr = _standardized(a).T @ _standardized(b) / (a.shape[0] - 1)
    return float(np.mean(np.abs(corr)))


def describe(bundle: DatasetBundle) -> Dict[str, Any]:
    """Per-domain summary: class counts, per-modality feature statistics, cross-modal correlation."""
    summary: Dict[str, Any] = {}
    names = bundle.modality_names
    for domain in bundle.domains:
        counts = np.bincount(domain.labels, minlength=bundle.num_classes)
        modalities = {}
        for name, block in zip(names, domain.features):
            stds = _column_stds(block)
            modalities[name] = {
                "means": block.mean(axis=0).tolist(),
                "stds": stds.tolist(),
                "mean_std": float(stds.mean()),
            }
        cross = {}
        for i in range(len(names)):
            for j in range(i + 1, len(names)):
                cross[f"{names[i]}~{names[j]}"] = _mean_abs_cross_correlation(
                    domain.features[i], domain.features[j]
                )
        summary[domain.name] = {
            "samples": domain.size,
            "class_counts": counts.tolist(),
            "modalities": modalities,
            "cross_modal_abs_correlation": cross,
        }
    return summary


METADATA_FILE = "metadata.yml"
GENERATOR_DIR = "generator"
LABEL_FILE = "labels.txt"


def save_bundle(bundle: DatasetBundle, out_dir: Union[str, Path]) -> Path:
    """Write one directory per domain (a FeatureFile per modality + labels.txt) and metadata.yml."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ContractError(f"cannot create output directory {out}: {e}")
    for domain in bundle.domains:
        for name, block in zip(bundle.modality_names, domain.features):
            feature_io.write_features(out / domain.name / f"{name}.feat", block)
        feature_io.write_labels(out / domain.name / LABEL_FILE, domain.labels)

    if bundle.generator is not None:
        params = bundle.generator
        gen = out / GENERATOR_DIR
        for name, u, a in zip(bundle.modality_names, params.dictionaries, params.mixing):
            feature_io.write_features(gen / f"dictionary_{name}.feat", u)
            feature_io.write_features(gen / f"mixing_{name}.feat", a)
        feature_io.write_features(gen / "latent_means.feat", params.latent_means)
        feature_io.write_labels(gen / "target_permutation.txt", params.target_permutation)

    feature_io.write_yaml(
        out / METADATA_FILE,
        {
            "format": feature_io.MAGIC.decode("ascii"),
            "config": bundle.config.to_dict(),
            "domains": [d.name for d in bundle.domains],
            "samples": {d.name: d.size for d in bundle.domains},
        },
    )
    logger.info("✓ Wrote %d domains to %s", len(bundle.domains), out)
    return out


def load_bundle(data_dir: Union[str, Path]) -> DatasetBundle:
    root = Path(data_dir)
    meta_path = root / METADATA_FILE
    if not meta_path.is_file():
        raise ContractError(f"missing {METADATA_FILE} in data directory {root}")
    meta = feature_io.read_yaml(meta_path) or {}
    if not isinstance(meta, dict) or "config" not in meta or "domains" not in meta:
        raise ContractError(f"{meta_path}: expected 'config' and 'domains' entries")
    cfg = config_utils.synth_config_from_dict(meta["config"])

    domains = []
    for name in meta["domains"]:
        labels = feature_io.read_labels(root / name / LABEL_FILE)
        features = [feature_io.read_features(root / name / f"{m}.feat") for m in cfg.modality_names]
        for m, block in zip(cfg.modality_names, features):
            if block.shape[0] != labels.shape[0]:
                raise ContractError(
                    f"{root / name}: {m}.feat has {block.shape[0]} rows, labels.txt has {labels.shape[0]}"
                )
        domains.append(DomainData(name=name, features=features, labels=labels))
    if TARGET_DOMAIN not in meta["domains"]:
        raise ContractError(f"{root}: bundle has no '{TARGET_DOMAIN}' domain")

    generator = None
    gen = root / GENERATOR_DIR
    if gen.is_dir():
        generator = GeneratorParams(
            dictionaries=[feature_io.read_features(gen / f"dictionary_{m}.feat") for m in cfg.modality_names],
            mixing=[feature_io.read_features(gen / f"mixing_{m}.feat") for m in cfg.modality_names],
            latent_means=feature_io.read_features(gen / "latent_means.feat"),
            target_permutation=feature_io.read_labels(gen / "target_permutation.txt"),
        )
    return DatasetBundle(domains=domains, config=cfg, generator=generator)
