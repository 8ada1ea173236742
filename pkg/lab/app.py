"""
Command handlers. Each takes the parsed argparse namespace, writes its
report (YAML) or table (CSV) to stdout or ``--out`` and returns an exit code.
"""
import logging
import statistics
import sys
import time
from dataclasses import replace
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from mer_lab.experiment import ExperimentRunner, evaluate_robustness
from mer_lab.models.network import ModelDims
from mer_lab.models.schema import (
    ALIGNMENT_METRICS,
    BaselineReg,
    Corruption,
    MerConfig,
    TrainConfig,
)
from mer_lab.run_store import RunStore
from mer_lab.tools import diagnostics, regularizer, synthgen, trainer
from mer_lab.tools.gradient_check import run_grad_check
from mer_lab.utils import config_utils, feature_io
from mer_lab.utils.linalg import SeededRng, gaussian_matrix
from mer_lab.utils.validators import ConfigError, UsageError

logger = logging.getLogger(__name__)

SWEEP_PARAMS = ("lambda", "alpha_marg", "alpha_spec")
DIAGNOSE_METRICS = ("rankme",) + ALIGNMENT_METRICS
BENCH_REPS = 20


def emit(text: str, out: Optional[str] = None) -> None:
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        logger.info("✓ Wrote %s", path)
    else:
        sys.stdout.write(text)


def parse_list(text: str, convert: Callable[[str], Any] = str, name: str = "list") -> List[Any]:
    items = [item.strip() for item in (text or "").split(",") if item.strip()]
    try:
        return [convert(item) for item in items]
    except ValueError:
        raise UsageError(f"invalid value in {name}: '{text}'")


def cmd_grad_check(args) -> int:
    logger.info("--- Checking MER gradients against central differences ---")
    report = run_grad_check(n=args.n, d=args.d, seeds=args.seeds, step=args.step)
    emit(feature_io.dump_yaml(report.to_dict()), args.out)
    if report.passed:
        logger.info("✓ All %d checks below %.0e", len(report.cases), report.tolerance)
        return 0
    worst = report.worst
    logger.error(
        "✗ Gradient check failed: worst %s error %.3e at seed %d",
        worst.component, worst.error, worst.seed,
    )
    return 2


def cmd_losses(args) -> int:
    z = feature_io.read_features(args.input)
    cfg = MerConfig(gamma=args.gamma, eps=args.eps, alpha_marg=args.alpha_marg, alpha_spec=args.alpha_spec)
    breakdown = regularizer.mer_loss(z, cfg)
    emit(feature_io.dump_yaml(breakdown.to_dict(digits=12)), args.out)
    return 0


def cmd_decompose(args) -> int:
    z = feature_io.read_features(args.input)
    emit(feature_io.dump_yaml(regularizer.entropy_decomposition(z, args.eps).to_dict()), args.out)
    return 0


def cmd_diagnose(args) -> int:
    metrics = parse_list(args.metrics, name="--metrics")
    if not metrics:
        raise UsageError("--metrics needs at least one metric")
    for metric in metrics:
        if metric not in DIAGNOSE_METRICS:
            raise UsageError(f"unknown metric '{metric}'; expected one of {', '.join(DIAGNOSE_METRICS)}")

    a = feature_io.read_features(args.a)
    b = feature_io.read_features(args.b) if args.b else None
    labels_a = feature_io.read_labels(args.labels_a, a.shape[0]) if args.labels_a else None
    labels_b = feature_io.read_labels(args.labels_b, b.shape[0]) if args.labels_b and b is not None else None
    paired_labels = labels_a is not None and labels_b is not None
    if args.class_conditional and not paired_labels:
        raise UsageError("class-conditional alignment needs --b, --labels-a and --labels-b")
    class_conditional = args.class_conditional or paired_labels

    report: Dict[str, Any] = {}
    rng = SeededRng(args.seed)
    for i, metric in enumerate(metrics):
        if metric == "rankme":
            report[metric] = {"a": diagnostics.rankme(a)}
            if b is not None:
                report[metric]["b"] = diagnostics.rankme(b)
            continue
        if b is None:
            raise UsageError(f"metric '{metric}' compares two inputs; pass --b")
        if class_conditional:
            report[metric] = diagnostics.class_conditional_alignment(
                a, labels_a, b, labels_b, metric, rng.child(i)
            ).to_dict()
        else:
            report[metric] = diagnostics.alignment(a, b, metric)
    emit(feature_io.dump_yaml(report), args.out)
    return 0


def cmd_spectrum(args) -> int:
    z = feature_io.read_features(args.input)
    emit(feature_io.csv_text(("index", "log_normalized_sv"), diagnostics.spectrum_rows(z)), args.out)
    return 0


def cmd_synth(args) -> int:
    cfg = config_utils.load_synth_config(args.config)
    logger.info("--- Generating synthetic bundle (seed %d) ---", cfg.seed)
    bundle = synthgen.generate(cfg)
    out = synthgen.save_bundle(bundle, args.out)
    feature_io.write_yaml(out / "summary.yml", synthgen.describe(bundle))
    return 0


def resolve_train_config(args) -> TrainConfig:
    """Config file, then CLI overrides: --mer enables the regularizer, --baseline-reg and --seed replace."""
    cfg = config_utils.load_train_config(args.config)
    changes: Dict[str, Any] = {}
    if getattr(args, "mer", False):
        changes["mer_enabled"] = True
    if getattr(args, "baseline_reg", None):
        changes["baseline_reg"] = BaselineReg.parse(args.baseline_reg)
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    return cfg.with_overrides(**changes) if changes else cfg


def cmd_train(args) -> int:
    cfg = resolve_train_config(args)
    state = ExperimentRunner(cfg, args.out).run(args.data)
    best = state["result"].best
    logger.info("✓ Best epoch %d: source-val %.4f, target %.4f", best.epoch, best.src_val_acc, best.tgt_acc)
    return 0


def _run_many(cfgs: Sequence[TrainConfig], dataset, workers: int) -> List[trainer.TrainResult]:
    """Independent training runs; results come back in input order."""
    if workers <= 1:
        return [trainer.train_fusion(dataset, cfg) for cfg in cfgs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda cfg: trainer.train_fusion(dataset, cfg), cfgs))


def _run_averaged(
    cfgs: Sequence[TrainConfig], dataset, seeds: int, workers: int
) -> List[List[float]]:
    """Per config: [mean best src_val_acc, mean best tgt_acc] over seeds cfg.seed .. cfg.seed + seeds - 1."""
    if seeds < 1:
        raise UsageError("need ≥1 seed")
    runs = [cfg.with_overrides(seed=cfg.seed + s) for cfg in cfgs for s in range(seeds)]
    results = _run_many(runs, dataset, workers)
    rows = []
    for i in range(len(cfgs)):
        group = results[i * seeds:(i + 1) * seeds]
        rows.append(
            [float(np.mean([r.best.src_val_acc for r in group])), float(np.mean([r.best.tgt_acc for r in group]))]
        )
    return rows


def sweep_config(base: TrainConfig, param: str, value: float) -> TrainConfig:
    mer = replace(base.mer, **{{"lambda": "lam"}.get(param, param): value})
    return base.with_overrides(mer=mer, mer_enabled=True)


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        raise UsageError(f"--param must be one of {', '.join(SWEEP_PARAMS)}")
    values = parse_list(args.values, float, "--values")
    if not values:
        raise UsageError("empty value list")
    base = resolve_train_config(args)
    dataset = synthgen.load_bundle(args.data)
    cfgs = [sweep_config(base, args.param, v) for v in values]
    logger.info("--- Sweeping %s over %s, %d seed(s) each ---", args.param, values, args.seeds)
    averaged = _run_averaged(cfgs, dataset, args.seeds, args.workers)
    rows = [[v, *acc] for v, acc in zip(values, averaged)]
    emit(feature_io.csv_text((args.param, "src_val_acc", "tgt_acc"), rows), args.out)
    return 0


def comparison_configs(base: TrainConfig) -> Dict[str, TrainConfig]:
    plain = base.with_overrides(mer_enabled=False, baseline_reg=BaselineReg())
    cfgs = {"none": plain}
    for name in ("dropout", "feature_noise", "weight_decay", "label_smoothing"):
        cfgs[name] = plain.with_overrides(baseline_reg=BaselineReg.parse(name))
    cfgs["mer_marginal_only"] = plain.with_overrides(mer_enabled=True, mer=base.mer.marginal_only())
    cfgs["mer_spectral_only"] = plain.with_overrides(mer_enabled=True, mer=base.mer.spectral_only())
    cfgs["mer"] = plain.with_overrides(mer_enabled=True, mer=base.mer)
    return cfgs


def cmd_compare(args) -> int:
    base = resolve_train_config(args)
    dataset = synthgen.load_bundle(args.data)
    cfgs = comparison_configs(base)
    if args.methods:
        wanted = parse_list(args.methods, name="--methods")
        unknown = [m for m in wanted if m not in cfgs]
        if unknown:
            raise UsageError(f"unknown method(s) {', '.join(unknown)}; expected {', '.join(cfgs)}")
        cfgs = {m: cfgs[m] for m in wanted}
    logger.info("--- Comparing %d regularizers, %d seed(s) each ---", len(cfgs), args.seeds)
    averaged = _run_averaged(list(cfgs.values()), dataset, args.seeds, args.workers)
    rows = [[name, *acc] for name, acc in zip(cfgs, averaged)]
    emit(feature_io.csv_text(("method", "src_val_acc", "tgt_acc"), rows), args.out)
    return 0


def median_seconds(func: Callable[[], Any], reps: int) -> float:
    times = []
    for _ in range(reps):
        start = time.perf_counter()
        func()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def bench_rows(n: int, d_list: Sequence[int], reps: int = BENCH_REPS, seed: int = 0) -> List[List[Any]]:
    """Per D: (D, MER loss+grad, spectral loss+grad, toy forward+backward, overhead, spectral scaling)."""
    if reps < BENCH_REPS:
        raise ConfigError(f"bench needs at least {BENCH_REPS} repetitions, got {reps}")
    rng = SeededRng(seed)
    mer_cfg = MerConfig()
    toy_cfg = TrainConfig(batch_size=n)
    rows: List[List[Any]] = []
    spectral_by_d: Dict[int, float] = {}
    for d in d_list:
        if d < 1:
            raise ConfigError(f"bench dimensions must be positive, got {d}")
        z = gaussian_matrix(rng.child(d), n, d)
        mer_seconds = median_seconds(lambda: regularizer.mer_loss_grad(z, mer_cfg), reps)
        spectral_seconds = median_seconds(lambda: regularizer.mer_loss_grad(z, mer_cfg.spectral_only()), reps)

        model = trainer.init_model(ModelDims(input_dims=[d], embedding_dim=d, num_classes=4), seed)
        x = gaussian_matrix(rng.child(d + 1), n, d)
        labels = np.arange(n) % 4
        toy_seconds = median_seconds(lambda: trainer.loss_and_grads(model, [x], labels, toy_cfg), reps)

        half = spectral_by_d.get(d // 2) if d % 2 == 0 else None
        scaling = spectral_seconds / half if half else ""
        spectral_by_d[d] = spectral_seconds
        rows.append([d, mer_seconds, spectral_seconds, toy_seconds, mer_seconds / toy_seconds, scaling])
        logger.info("D=%d: mer %.4fs, toy %.4fs", d, mer_seconds, toy_seconds)
    return rows


def cmd_bench(args) -> int:
    d_list = parse_list(args.d_list, int, "--d-list")
    if not d_list:
        raise UsageError("--d-list needs at least one dimension")
    rows = bench_rows(args.n, d_list, args.reps)
    header = ("d", "mer_seconds", "spectral_seconds", "toy_seconds", "overhead_fraction", "spectral_scaling")
    emit(feature_io.csv_text(header, rows), args.out)
    return 0


def default_corruptions(modalities: Sequence[str]) -> List[Corruption]:
    corruptions = []
    for name in modalities:
        corruptions.extend([Corruption("noise", name, 0.5), Corruption("noise", name, 1.0)])
    corruptions.extend(Corruption("drop", name) for name in modalities)
    return corruptions


def cmd_robustness(args) -> int:
    store = RunStore(args.run)
    if args.corruptions:
        corruptions = [Corruption.parse(c) for c in parse_list(args.corruptions, name="--corruptions")]
    else:
        corruptions = default_corruptions(store.read_manifest().get("modalities", []))
    rows = evaluate_robustness(store, corruptions)
    emit(feature_io.csv_text(("condition", "accuracy", "drop"), rows), args.out)
    return 0
