"""Experiment grid execution: config parsing, trial runs, score and plot tables.

A run crosses every estimator variant with every noise level and repeat,
derives one seed per (noise index, repeat) so all variants see the same
noised labels, and writes a flat trial table.  Trials are independent and
may execute on a thread pool; rows are buffered and written in canonical
order, so the output never depends on scheduling.

Resource caps are soft, desk-scale limits: memory is estimated from the
problem shape before a trial starts, wall time is measured after it ends.
Over-cap trials are recorded with a status instead of aborting the grid.
"""

from __future__ import annotations

import csv
import itertools
import json
import struct
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import EnvelopeCurve, EstimateInterval
from .data import (
    Dataset,
    GaussianMixtureSpec,
    derive_seed,
    generate_gaussian_mixture,
    inject_label_noise,
    load_dataset,
    save_dataset,
)
from .estimators import (
    DEFAULT_GRIDS,
    METHODS,
    SINGLE_SET_METHODS,
    EstimatorConfig,
    EstimatorError,
    GeometryCache,
    estimate,
    format_float,
)
from .scoring import (
    CurveEstimate,
    ScoreReport,
    TrialResult,
    aggregate_trials,
    area_scores,
    best_per_method,
)

TRIAL_HEADER = [
    "dataset", "transformation", "method", "variant", "rho", "seed",
    "lower", "upper", "status", "wall_time_ms",
]
SCORE_HEADER = [
    "dataset", "transformation", "method", "variant",
    "L", "L_left", "L_right", "U", "U_left", "U_right", "L_std", "U_std",
]
BEST_HEADER = ["dataset", "transformation", "method", "score", "variant", "value"]

_METRIC_ALIASES = {
    "squared_euclidean": "squared_euclidean",
    "squared_l2": "squared_euclidean",
    "cosine": "cosine",
}


class ConfigError(Exception):
    """The experiment configuration is malformed or inconsistent."""


@dataclass
class ExperimentConfig:
    """Everything a grid run needs; see ``parse_config`` for the file schema."""

    train_path: str
    eval_path: str
    fmt: str = "bin"
    num_classes: int | None = None
    csv_header: bool = False
    dataset_name: str = ""
    transformation: str = "raw"
    sota: float = 0.0
    rho_count: int = 11
    rho_min: float = 0.0
    rho_max: float = 1.0
    repeats: int = 10
    master_seed: int = 0
    threads: int = 1
    trial_time_limit_ms: int = 0  # 0 disables the cap
    trial_memory_limit_mb: int = 0
    estimators: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.fmt not in ("bin", "csv", "idx"):
            raise ConfigError(f"dataset.format must be bin, csv or idx, got {self.fmt!r}")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        if self.rho_count < 2:
            raise ConfigError(f"rho.count must be >= 2, got {self.rho_count}")
        if not 0.0 <= self.rho_min < self.rho_max <= 1.0:
            raise ConfigError(f"need 0 <= rho.min < rho.max <= 1, got [{self.rho_min}, {self.rho_max}]")
        if not 0.0 <= self.sota <= 1.0:
            raise ConfigError(f"sota must be in [0, 1], got {self.sota}")
        if not self.dataset_name:
            self.dataset_name = Path(self.train_path.split("@")[0]).stem

    def rho_grid(self) -> list[float]:
        span = self.rho_max - self.rho_min
        steps = self.rho_count - 1
        return [self.rho_min + (i * span) / steps for i in range(self.rho_count)]


def _parse_scalar(key: str, value: str):
    value = value.strip()
    if key in ("dataset.classes", "rho.count", "repeats", "master_seed", "threads",
               "limits.trial_ms", "limits.trial_mb"):
        return int(value)
    if key in ("sota", "rho.min", "rho.max"):
        return float(value)
    if key == "dataset.csv_header":
        if value.lower() not in ("true", "false", "0", "1"):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value.lower() in ("true", "1")
    return value


def parse_config(text: str) -> ExperimentConfig:
    """Parse the key/value experiment schema.

    Lines are ``key = value`` with ``#`` comments.  Keys: dataset.{train,
    eval,format,classes,name,csv_header}, sota, transformation,
    rho.{count,min,max}, repeats, master_seed, threads,
    limits.{trial_ms,trial_mb}, and indexed estimator entries
    ``estimators[i].{method,k,metric,bandwidth,scaling,schedule,d}`` whose
    k/metric/bandwidth/scaling values may be comma lists (swept as a grid).
    """
    flat: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        flat[key.strip()] = value.strip()

    estimators: dict[int, dict[str, str]] = {}
    plain: dict[str, str] = {}
    for key, value in flat.items():
        if key.startswith("estimators["):
            idx_part, _, fld = key.partition("].")
            if not fld:
                raise ConfigError(f"bad estimator key {key!r}")
            try:
                idx = int(idx_part[len("estimators["):])
            except ValueError:
                raise ConfigError(f"bad estimator index in {key!r}") from None
            estimators.setdefault(idx, {})[fld] = value
        else:
            plain[key] = value

    known = {
        "dataset.train": "train_path",
        "dataset.eval": "eval_path",
        "dataset.format": "fmt",
        "dataset.classes": "num_classes",
        "dataset.name": "dataset_name",
        "dataset.csv_header": "csv_header",
        "transformation": "transformation",
        "sota": "sota",
        "rho.count": "rho_count",
        "rho.min": "rho_min",
        "rho.max": "rho_max",
        "repeats": "repeats",
        "master_seed": "master_seed",
        "threads": "threads",
        "limits.trial_ms": "trial_time_limit_ms",
        "limits.trial_mb": "trial_memory_limit_mb",
    }
    kwargs = {}
    for key, value in plain.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[known[key]] = _parse_scalar(key, value)
    for required in ("dataset.train", "dataset.eval"):
        if known[required] not in kwargs:
            raise ConfigError(f"missing required key {required!r}")
    if "sota" not in kwargs:
        raise ConfigError("missing required key 'sota' (this framework never fabricates it)")
    kwargs["estimators"] = [estimators[i] for i in sorted(estimators)]
    if not kwargs["estimators"]:
        raise ConfigError("at least one estimators[i].method entry is required")
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Grid expansion
# ---------------------------------------------------------------------------


def _split_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def expand_estimators(entries: list[dict]) -> list[EstimatorConfig]:
    """Cross every entry's hyper-parameter lists; omitted fields use defaults."""
    variants: list[EstimatorConfig] = []
    for pos, entry in enumerate(entries):
        entry = dict(entry)
        method = entry.pop("method", None)
        if method not in METHODS:
            raise ConfigError(f"estimators[{pos}]: unknown method {method!r}")
        defaults = DEFAULT_GRIDS[method]

        def axis(fld: str, conv, default_key: str | None = None):
            raw = entry.pop(fld, None)
            if raw is not None:
                return [conv(v) for v in _split_list(str(raw))]
            if default_key is not None and default_key in defaults:
                return list(defaults[default_key])
            return [None]

        def metric_value(v: str) -> str:
            if v not in _METRIC_ALIASES:
                raise ConfigError(f"estimators[{pos}]: unknown metric {v!r}")
            return _METRIC_ALIASES[v]

        ks = axis("k", int, "k")
        metrics = axis("metric", metric_value, "metric")
        bandwidths = axis("bandwidth", float, "bandwidth")
        scalings = axis("scaling", float, "scaling")
        schedule = entry.pop("schedule", None)
        if schedule is not None:
            schedule = tuple(int(v) for v in str(schedule).replace("/", ",").split(",") if v.strip())
        expansion_dim = entry.pop("d", None)
        if expansion_dim is not None:
            expansion_dim = int(expansion_dim)
        if entry:
            raise ConfigError(f"estimators[{pos}]: unknown fields {sorted(entry)}")

        for k, metric, bandwidth, scaling in itertools.product(ks, metrics, bandwidths, scalings):
            try:
                variants.append(
                    EstimatorConfig(
                        method=method,
                        k=k,
                        metric=metric or "squared_euclidean",
                        bandwidth=bandwidth,
                        scaling=scaling,
                        schedule=schedule,
                        expansion_dim=expansion_dim,
                    )
                )
            except ValueError as exc:
                raise ConfigError(f"estimators[{pos}]: {exc}") from None
    seen = set()
    unique = []
    for v in variants:
        key = (v.method, v.variant())
        if key not in seen:
            seen.add(key)
            unique.append(v)
    return unique


# ---------------------------------------------------------------------------
# Trial execution
# ---------------------------------------------------------------------------


def estimate_trial_memory_bytes(method: str, n_train: int, n_eval: int, d: int, k: int | None) -> int:
    """Rough peak-memory model per trial, from the problem shape alone."""
    promote = 8 * d * (n_train + n_eval)
    buffers = 8 * 2 * 4_000_000  # distance rows + diff block working sets
    lists = 16 * n_eval * max(k or 1, 1)
    if method in SINGLE_SET_METHODS:
        promote = 8 * d * 2 * n_eval
    if method == "scaled_classifier":
        promote = 8 * d * (2 * n_train + n_eval)
        buffers = 8 * n_train * 4
    if method == "ghp":
        buffers = 8 * n_eval * 6
    return promote + buffers + lists


def _load_split(cfg: ExperimentConfig, path: str, split: str) -> Dataset:
    return load_dataset(path, cfg.fmt, cfg.num_classes, split, cfg.csv_header)


@dataclass
class RunAccounting:
    ok: int = 0
    timeout: int = 0
    oom: int = 0
    error: int = 0


def run_experiment(
    cfg: ExperimentConfig,
    out_dir,
    record_timing: bool = False,
    log=sys.stderr,
) -> Path:
    """Execute the full grid and write ``trials.csv`` in canonical order.

    Canonical row order is (variant position, rho index, repeat), fixed by
    the config alone.  With ``record_timing`` off (the default) the
    wall_time_ms column is written as 0 so repeated runs are byte-identical.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train = _load_split(cfg, cfg.train_path, "train")
    eval_ = _load_split(cfg, cfg.eval_path, "eval")
    if train.num_classes != eval_.num_classes:
        raise ConfigError("train and eval class counts differ")
    EnvelopeCurve(train.num_classes, cfg.sota)  # validates sota against 1 - 1/C
    variants = expand_estimators(cfg.estimators)
    rhos = cfg.rho_grid()

    cache = GeometryCache(threads=1)
    for var in variants:
        if var.method in ("one_nn", "knn"):
            cache.plan_k(train.features, eval_.features, var.metric, "standard", var.k or 1)
        elif var.method == "knn_loo":
            cache.plan_k(eval_.features, eval_.features, var.metric, "loo", var.k)
        elif var.method == "de_knn":
            cache.plan_k(eval_.features, eval_.features, var.metric, "standard", var.k)
            cache.plan_k(eval_.features, eval_.features, var.metric, "loo", var.k)
        elif var.method == "one_nn_knn":
            cache.plan_k(eval_.features, eval_.features, var.metric, "standard", var.k)

    noise_lock = threading.Lock()
    noised: dict[tuple[int, int], tuple[Dataset, Dataset]] = {}

    def noised_splits(rho_idx: int, rep: int) -> tuple[Dataset, Dataset]:
        key = (rho_idx, rep)
        with noise_lock:
            if key not in noised:
                trial_seed = derive_seed(cfg.master_seed, rho_idx, rep)
                rho = rhos[rho_idx]
                noised[key] = (
                    inject_label_noise(train, rho, derive_seed(trial_seed, "train")),
                    inject_label_noise(eval_, rho, derive_seed(trial_seed, "eval")),
                )
            return noised[key]

    jobs = [
        (vi, ri, rep)
        for vi in range(len(variants))
        for ri in range(len(rhos))
        for rep in range(cfg.repeats)
    ]
    rows: list[list] = [None] * len(jobs)  # type: ignore[list-item]
    accounting = RunAccounting()
    acct_lock = threading.Lock()
    mem_cap = cfg.trial_memory_limit_mb * 1_000_000
    time_cap = cfg.trial_time_limit_ms

    def run_one(job_idx: int) -> None:
        vi, ri, rep = jobs[job_idx]
        var = variants[vi]
        rho = rhos[ri]
        status = "ok"
        lower = upper = None
        elapsed_ms = 0
        if mem_cap and estimate_trial_memory_bytes(
            var.method, train.n, eval_.n, train.d, var.k
        ) > mem_cap:
            status = "oom"
        else:
            start = time.perf_counter()
            try:
                trial_seed = derive_seed(cfg.master_seed, ri, rep)
                noised_train, noised_eval = noised_splits(ri, rep)
                interval = estimate(noised_train, noised_eval, var, trial_seed, cache)
                lower, upper = interval.lower, interval.upper
            except EstimatorError as exc:
                status = "error"
                print(f"trial {var.method}/{var.variant()} rho={rho} rep={rep}: {exc}", file=log)
            elapsed_ms = int((time.perf_counter() - start) * 1000)
            if status == "ok" and time_cap and elapsed_ms > time_cap:
                status = "timeout"
                lower = upper = None
        with acct_lock:
            setattr(accounting, status, getattr(accounting, status) + 1)
        rows[job_idx] = [
            cfg.dataset_name,
            cfg.transformation,
            var.method,
            var.variant(),
            format_float(rho),
            rep,
            "" if lower is None else format_float(lower),
            "" if upper is None else format_float(upper),
            status,
            elapsed_ms if record_timing else 0,
        ]

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            list(pool.map(run_one, range(len(jobs))))
    else:
        for idx in range(len(jobs)):
            run_one(idx)

    path = out_dir / "trials.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRIAL_HEADER)
        writer.writerows(rows)
    print(
        f"wrote {len(jobs)} trial rows to {path} "
        f"(ok={accounting.ok}, timeout={accounting.timeout}, "
        f"oom={accounting.oom}, error={accounting.error})",
        file=log,
    )
    return path


# ---------------------------------------------------------------------------
# Scoring and plot emission
# ---------------------------------------------------------------------------


def read_trial_table(path) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRIAL_HEADER:
            raise ConfigError(f"{path}: unexpected trial table header {reader.fieldnames}")
        return list(reader)


def _resolve_classes(cfg: ExperimentConfig) -> int:
    if cfg.num_classes is not None:
        return cfg.num_classes
    if cfg.fmt == "bin":
        with open(cfg.train_path, "rb") as fh:
            header = fh.read(4 + struct.calcsize("<IQQI"))
        _, _, _, classes = struct.unpack("<IQQI", header[4:])
        return int(classes)
    raise ConfigError("dataset.classes is required to score csv/idx datasets")


def _group_trials(
    rows: list[dict], log=sys.stderr
) -> tuple[dict[tuple[str, str, str, str], list[TrialResult]], int]:
    groups: dict[tuple[str, str, str, str], list[TrialResult]] = {}
    excluded = 0
    for row in rows:
        key = (row["dataset"], row["transformation"], row["method"], row["variant"])
        groups.setdefault(key, [])
        if row["status"] != "ok":
            excluded += 1
            continue
        groups[key].append(
            TrialResult(
                rho=float(row["rho"]),
                seed=int(row["seed"]),
                estimate=EstimateInterval(float(row["lower"]), float(row["upper"])),
                wall_time_ms=int(row["wall_time_ms"] or 0),
            )
        )
    if excluded:
        print(f"excluded {excluded} non-ok trial rows from scoring", file=log)
    return groups, excluded


def _curve_for_group(
    key: tuple[str, str, str, str], trials: list[TrialResult], log=sys.stderr
) -> CurveEstimate | None:
    name = "/".join(key[2:])
    if not trials:
        print(f"skipping {name}: no usable trials", file=log)
        return None
    curve = aggregate_trials(trials)
    if curve.rho[0] != 0.0 or curve.rho[-1] != 1.0:
        print(
            f"skipping {name}: noise grid [{curve.rho[0]}, {curve.rho[-1]}] does not span [0, 1]",
            file=log,
        )
        return None
    if not curve.seeds:
        print(f"skipping {name}: no seed covers every noise level", file=log)
        return None
    return curve


def score_tables(cfg: ExperimentConfig, trials_path, out_dir, log=sys.stderr) -> tuple[Path, Path]:
    """Score a trial table into ``scores.csv`` plus ``scores_best.csv``.

    Non-ok rows are excluded with a counted warning; groups without full
    noise coverage are rejected with a diagnostic.  Output is independent of
    the row order of the input table.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    c = _resolve_classes(cfg)
    rows = read_trial_table(trials_path)
    groups, _ = _group_trials(rows, log)

    scored: list[tuple[tuple[str, str, str, str], ScoreReport]] = []
    for key in sorted(groups):  # canonical order, independent of row order
        curve = _curve_for_group(key, groups[key], log)
        if curve is None:
            continue
        scored.append((key, area_scores(curve, c, cfg.sota)))

    scores_path = out_dir / "scores.csv"
    with open(scores_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_HEADER)
        for (dataset, transformation, method, variant), rep in scored:
            writer.writerow(
                [
                    dataset, transformation, method, variant,
                    format_float(rep.l), format_float(rep.l_left), format_float(rep.l_right),
                    format_float(rep.u), format_float(rep.u_left), format_float(rep.u_right),
                    format_float(rep.l_std), format_float(rep.u_std),
                ]
            )

    best = best_per_method([((key[2], key[3]), rep) for key, rep in scored])
    id_by_method = {key[2]: (key[0], key[1]) for key, _ in scored}
    best_path = out_dir / "scores_best.csv"
    with open(best_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(BEST_HEADER)
        for method in sorted(best):
            dataset, transformation = id_by_method[method]
            for score_name in ("L", "U"):
                variant, value = best[method][score_name]
                writer.writerow([dataset, transformation, method, score_name, variant, format_float(value)])
    print(f"wrote {len(scored)} score rows to {scores_path}", file=log)
    return scores_path, best_path


def emit_plot_data(cfg: ExperimentConfig, trials_path, out_path, log=sys.stderr) -> Path:
    """Write per-variant curves, envelopes and 95% quantile bands as JSON."""
    c = _resolve_classes(cfg)
    env = EnvelopeCurve(c, cfg.sota)
    rows = read_trial_table(trials_path)
    groups, _ = _group_trials(rows, log)

    series = []
    for key in sorted(groups):
        trials = groups[key]
        if not trials:
            print(f"skipping {'/'.join(key[2:])}: no usable trials", file=log)
            continue
        curve = aggregate_trials(trials)
        if not curve.seeds:
            print(f"skipping {'/'.join(key[2:])}: no seed covers every noise level", file=log)
            continue
        q_low, q_high = np.quantile(curve.lower_by_seed, [0.05, 0.95], axis=0)
        uq_low, uq_high = np.quantile(curve.upper_by_seed, [0.05, 0.95], axis=0)
        series.append(
            {
                "method": key[2],
                "variant": key[3],
                "rho": curve.rho.tolist(),
                "lower_mean": curve.lower_mean.tolist(),
                "lower_std": curve.lower_std.tolist(),
                "upper_mean": curve.upper_mean.tolist(),
                "upper_std": curve.upper_std.tolist(),
                "lower_q05": q_low.tolist(),
                "lower_q95": q_high.tolist(),
                "upper_q05": uq_low.tolist(),
                "upper_q95": uq_high.tolist(),
                "envelope_lower": env.lower(curve.rho).tolist(),
                "envelope_upper": env.upper(curve.rho).tolist(),
            }
        )

    payload = {
        "dataset": cfg.dataset_name,
        "transformation": cfg.transformation,
        "num_classes": c,
        "sota": cfg.sota,
        "series": series,
    }
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(f"wrote plot data for {len(series)} series to {out_path}", file=log)
    return out_path


# ---------------------------------------------------------------------------
# Synthetic dataset emission
# ---------------------------------------------------------------------------


def synth_dataset(spec: GaussianMixtureSpec, seed: int, out_dir, log=sys.stderr) -> dict:
    """Generate a Gaussian-mixture train/eval pair with its oracle BER record."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, eval_, oracle = generate_gaussian_mixture(spec, seed)
    train_path = out_dir / "train.fbee"
    eval_path = out_dir / "eval.fbee"
    save_dataset(train, train_path)
    save_dataset(eval_, eval_path)
    meta = {
        "true_ber": oracle.value,
        "std_error": oracle.std_error,
        "method": oracle.method,
        "num_classes": spec.num_classes,
        "dim": spec.dim,
        "std": spec.std,
        "priors": spec.priors.tolist(),
        "means": spec.means.tolist(),
        "n_train": spec.n_train,
        "n_eval": spec.n_eval,
        "seed": seed,
        "train": str(train_path),
        "eval": str(eval_path),
    }
    meta_path = out_dir / "meta.json"
    meta_path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {train_path}, {eval_path}; oracle BER {oracle.value:.5f}", file=log)
    return meta
