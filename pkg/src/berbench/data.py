"""Dataset construction, file formats, synthetic oracles and label-noise injection.

Features are stored as float32 (they dominate memory at ``n * d``) and
promoted to float64 inside every computation.  Datasets are treated as
immutable after construction: noise injection and subsampling return new
``Dataset`` objects that share the feature matrix whenever possible.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import _check_classes, _check_rho


class DataFormatError(Exception):
    """A dataset file failed to parse; the message carries the location."""


Split = Literal["train", "eval"]

_BIN_MAGIC = b"FBEE"
_BIN_VERSION = 1
_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """A dense feature matrix with integer class labels.

    ``features`` is ``(n, d)`` float32, ``labels`` is ``(n,)`` with values in
    ``[0, num_classes)``.  ``split`` tags which role the data plays in an
    experiment and has no numeric effect.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: Split = "train"

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {features.shape}")
        n, d = features.shape
        if n < 1 or d < 1:
            raise ValueError(f"need n >= 1 and d >= 1, got shape {features.shape}")
        if not np.all(np.isfinite(features)):
            bad = int(np.argwhere(~np.isfinite(features))[0, 0])
            raise ValueError(f"non-finite feature value in row {bad}")
        if labels.shape != (n,):
            raise ValueError(f"labels shape {labels.shape} does not match n={n}")
        c = _check_classes(self.num_classes)
        if labels.min() < 0 or labels.max() >= c:
            bad = int(np.argwhere((labels < 0) | (labels >= c))[0, 0])
            raise ValueError(f"label out of range [0, {c}) in row {bad}")
        if self.split not in ("train", "eval"):
            raise ValueError(f"split must be 'train' or 'eval', got {self.split!r}")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", c)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def with_labels(self, labels: np.ndarray) -> "Dataset":
        """New dataset sharing this feature matrix."""
        return Dataset(self.features, labels, self.num_classes, self.split)


def derive_seed(*parts) -> int:
    """Derive a 64-bit seed from arbitrary parts, order-sensitively.

    Counter-based splittable scheme: trials seeded as
    ``derive_seed(master_seed, rho_index, repeat_index)`` are reproducible
    regardless of execution order.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _round_half_up(x: float) -> int:
    # Python's round() rounds half to even; the flip count must not.
    return int(math.floor(x + 0.5))


def inject_label_noise(ds: Dataset, rho: float, seed: int) -> Dataset:
    """Resample exactly ``round(rho * n)`` labels uniformly over all classes.

    Positions are chosen uniformly without replacement by the seeded
    generator.  The uniform redraw may reproduce the original label, so the
    expected fraction of labels actually changed is ``rho * (C-1)/C``.
    Features are untouched and shared with the input.  Deterministic given
    ``(ds, rho, seed)``.
    """
    rho = _check_rho(rho)
    m = _round_half_up(rho * ds.n)
    if m == 0:
        return ds
    rng = np.random.Generator(np.random.PCG64(seed))
    positions = rng.choice(ds.n, size=m, replace=False)
    draws = rng.integers(0, ds.num_classes, size=m)
    labels = ds.labels.copy()
    labels[positions] = draws
    return ds.with_labels(labels)


def subsample(ds: Dataset, m: int, seed: int) -> Dataset:
    """Take ``m`` rows uniformly without replacement, deterministically.

    Rows are a prefix of one fixed permutation per seed, so subsamples for
    increasing ``m`` under the same seed are nested.
    """
    if not 1 <= m <= ds.n:
        raise ValueError(f"subsample size {m} out of range [1, {ds.n}]")
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(ds.n)[:m]
    return Dataset(ds.features[perm], ds.labels[perm], ds.num_classes, ds.split)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def save_dataset(ds: Dataset, path) -> None:
    """Write the little-endian binary format (magic FBEE, version 1)."""
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write(struct.pack("<IQQI", _BIN_VERSION, ds.n, ds.d, ds.num_classes))
        fh.write(np.ascontiguousarray(ds.features, dtype="<f4").tobytes())
        fh.write(ds.labels.astype("<u4").tobytes())


def _load_bin(path, num_classes: int | None) -> tuple[np.ndarray, np.ndarray, int]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _BIN_MAGIC:
        raise DataFormatError(f"{path}: bad magic at byte 0, expected {_BIN_MAGIC!r}")
    header_end = 4 + struct.calcsize("<IQQI")
    if len(raw) < header_end:
        raise DataFormatError(f"{path}: truncated header at byte {len(raw)}")
    version, n, d, file_classes = struct.unpack("<IQQI", raw[4:header_end])
    if version != _BIN_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version} at byte 4")
    if n == 0:
        raise DataFormatError(f"{path}: empty dataset (n=0) at byte 8")
    feat_bytes = n * d * 4
    expected = header_end + feat_bytes + n * 4
    if len(raw) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} bytes for n={n}, d={d}, found {len(raw)}"
        )
    features = np.frombuffer(raw, dtype="<f4", count=n * d, offset=header_end)
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=header_end + feat_bytes)
    if num_classes is not None and num_classes != file_classes:
        raise DataFormatError(
            f"{path}: file declares {file_classes} classes, config says {num_classes}"
        )
    return features.reshape(n, d).copy(), labels.astype(np.int64), int(file_classes)


def _load_csv(path, num_classes: int, skip_header: bool) -> tuple[np.ndarray, np.ndarray]:
    rows: list[list[float]] = []
    labels: list[int] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if skip_header and lineno == 1:
                continue
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
                if width < 2:
                    raise DataFormatError(f"{path}:{lineno}: need >= 1 feature column plus label")
            elif len(cells) != width:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {width} columns, found {len(cells)}"
                )
            try:
                values = [float(v) for v in cells[:-1]]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: bad feature value ({exc})") from None
            if not all(math.isfinite(v) for v in values):
                raise DataFormatError(f"{path}:{lineno}: non-finite feature value")
            try:
                label = int(cells[-1])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad label {cells[-1]!r}") from None
            if not 0 <= label < num_classes:
                raise DataFormatError(
                    f"{path}:{lineno}: label {label} out of range [0, {num_classes})"
                )
            rows.append(values)
            labels.append(label)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float32), np.asarray(labels, dtype=np.int64)


def _read_idx_header(raw: bytes, path, magic: int, dims: int) -> tuple[int, ...]:
    need = 4 * (1 + dims)
    if len(raw) < need:
        raise DataFormatError(f"{path}: truncated IDX header at byte {len(raw)}")
    fields = struct.unpack(f">{1 + dims}I", raw[:need])
    if fields[0] != magic:
        raise DataFormatError(f"{path}: bad IDX magic 0x{fields[0]:08x} at byte 0")
    return fields[1:]


def _load_idx(images_path, labels_path, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    with open(images_path, "rb") as fh:
        raw = fh.read()
    n, rows, cols = _read_idx_header(raw, images_path, _IDX_IMAGES_MAGIC, 3)
    if n == 0:
        raise DataFormatError(f"{images_path}: empty dataset (n=0) at byte 4")
    d = rows * cols
    if len(raw) != 16 + n * d:
        raise DataFormatError(
            f"{images_path}: expected {16 + n * d} bytes for {n}x{rows}x{cols}, found {len(raw)}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    features = pixels.reshape(n, d).astype(np.float32)

    with open(labels_path, "rb") as fh:
        raw_l = fh.read()
    (n_l,) = _read_idx_header(raw_l, labels_path, _IDX_LABELS_MAGIC, 1)
    if len(raw_l) != 8 + n_l:
        raise DataFormatError(f"{labels_path}: expected {8 + n_l} bytes, found {len(raw_l)}")
    if n_l != n:
        raise DataFormatError(f"{labels_path}: {n_l} labels for {n} images")
    labels = np.frombuffer(raw_l, dtype=np.uint8, offset=8).astype(np.int64)
    bad = np.argwhere(labels >= num_classes)
    if bad.size:
        raise DataFormatError(
            f"{labels_path}: label {labels[bad[0, 0]]} out of range at row {int(bad[0, 0])}"
        )
    return features, labels


def _derive_idx_labels_path(images_path: str) -> str:
    candidate = images_path.replace("images", "labels").replace("idx3", "idx1")
    if candidate == images_path:
        raise DataFormatError(
            f"{images_path}: cannot derive IDX labels path; "
            "pass 'IMAGES@LABELS' or name files with 'images'/'labels'"
        )
    return candidate


def load_dataset(
    path,
    fmt: Literal["bin", "csv", "idx"],
    num_classes: int | None = None,
    split: Split = "train",
    csv_header: bool = False,
) -> Dataset:
    """Load a dataset file in one of the three supported formats.

    ``bin`` embeds its own class count (``num_classes`` is cross-checked when
    given).  ``csv`` holds d feature columns then one integer label column;
    ``csv_header`` skips the first row.  ``idx`` expects the path as
    ``IMAGES@LABELS``; with a bare path the labels file is derived by the
    images->labels / idx3->idx1 naming convention.  Row order is preserved.
    """
    path = str(path)
    if fmt == "bin":
        features, labels, c = _load_bin(path, num_classes)
        return Dataset(features, labels, c, split)
    if num_classes is None:
        raise ValueError(f"num_classes is required for format {fmt!r}")
    c = _check_classes(num_classes)
    if fmt == "csv":
        features, labels = _load_csv(path, c, csv_header)
    elif fmt == "idx":
        if "@" in path:
            images_path, labels_path = path.split("@", 1)
        else:
            images_path, labels_path = path, _derive_idx_labels_path(path)
        features, labels = _load_idx(images_path, labels_path, c)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")
    return Dataset(features, labels, c, split)


def save_idx(ds: Dataset, images_path, labels_path) -> None:
    """Write an IDX image/label file pair (features clipped to byte range)."""
    pixels = np.clip(np.rint(ds.features), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", _IDX_IMAGES_MAGIC, ds.n, 1, ds.d))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", _IDX_LABELS_MAGIC, ds.n))
        fh.write(ds.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# Synthetic oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianMixtureSpec:
    """Gaussian class-conditional mixture with a shared isotropic std.

    ``means`` is ``(num_classes, dim)``; ``priors`` must sum to 1.  Used as a
    synthetic oracle: the generating distribution is known exactly, so the
    true BER is computable.
    """

    num_classes: int
    dim: int
    means: np.ndarray
    std: float
    priors: np.ndarray
    n_train: int
    n_eval: int

    def __post_init__(self) -> None:
        c = _check_classes(self.num_classes)
        means = np.asarray(self.means, dtype=np.float64)
        priors = np.asarray(self.priors, dtype=np.float64)
        if means.shape != (c, self.dim):
            raise ValueError(f"means shape {means.shape} != ({c}, {self.dim})")
        if priors.shape != (c,):
            raise ValueError(f"priors shape {priors.shape} != ({c},)")
        if np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-12:
            raise ValueError(f"priors must be nonnegative and sum to 1, got {priors}")
        if not self.std > 0:
            raise ValueError(f"std must be positive, got {self.std}")
        if self.n_train < 1 or self.n_eval < 1:
            raise ValueError("both splits need at least one sample")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "priors", priors)
        object.__setattr__(self, "std", float(self.std))


@dataclass(frozen=True)
class TrueBer:
    """Oracle BER with its provenance; ``std_error`` is 0 for analytic values."""

    value: float
    std_error: float
    method: Literal["analytic", "monte_carlo"]


def _normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _sample_mixture(spec: GaussianMixtureSpec, n: int, rng: np.random.Generator):
    labels = rng.choice(spec.num_classes, size=n, p=spec.priors)
    features = spec.means[labels] + rng.standard_normal((n, spec.dim)) * spec.std
    return features.astype(np.float32), labels.astype(np.int64)


def _mixture_posterior_error(spec: GaussianMixtureSpec, x: np.ndarray) -> np.ndarray:
    # 1 - max_y p(y|x) per sample, with exactly known class posteriors.
    diff = x[:, None, :] - spec.means[None, :, :]
    log_lik = -np.einsum("nij,nij->ni", diff, diff) / (2.0 * spec.std**2)
    with np.errstate(divide="ignore"):
        scores = log_lik + np.log(spec.priors)[None, :]
    scores -= scores.max(axis=1, keepdims=True)
    post = np.exp(scores)
    post /= post.sum(axis=1, keepdims=True)
    return 1.0 - post.max(axis=1)


def monte_carlo_ber(spec: GaussianMixtureSpec, seed: int, n_samples: int = 1_000_000) -> TrueBer:
    """Plug-in Monte Carlo BER over fresh mixture draws, with standard error."""
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "ber-mc")))
    point_errors = np.empty(n_samples)
    chunk = 100_000
    for start in range(0, n_samples, chunk):
        size = min(chunk, n_samples - start)
        x, _ = _sample_mixture(spec, size, rng)
        point_errors[start : start + size] = _mixture_posterior_error(spec, x.astype(np.float64))
    value = float(point_errors.mean())
    se = float(point_errors.std(ddof=1) / math.sqrt(n_samples))
    return TrueBer(value, se, "monte_carlo")


def true_ber(spec: GaussianMixtureSpec, seed: int = 0) -> TrueBer:
    """Oracle BER: analytic when supported, Monte Carlo otherwise.

    The analytic branch covers two classes with equal priors, where
    ``BER = Phi(-||mu1 - mu0|| / (2 * std))``.
    """
    if spec.num_classes == 2 and np.allclose(spec.priors, 0.5, atol=1e-12):
        gap = float(np.linalg.norm(spec.means[1] - spec.means[0]))
        return TrueBer(_normal_cdf(-gap / (2.0 * spec.std)), 0.0, "analytic")
    return monte_carlo_ber(spec, seed)


def generate_gaussian_mixture(
    spec: GaussianMixtureSpec, seed: int
) -> tuple[Dataset, Dataset, TrueBer]:
    """Draw i.i.d. train/eval splits and report the oracle BER."""
    rng_train = np.random.Generator(np.random.PCG64(derive_seed(seed, "train")))
    rng_eval = np.random.Generator(np.random.PCG64(derive_seed(seed, "eval")))
    xt, yt = _sample_mixture(spec, spec.n_train, rng_train)
    xe, ye = _sample_mixture(spec, spec.n_eval, rng_eval)
    train = Dataset(xt, yt, spec.num_classes, "train")
    eval_ = Dataset(xe, ye, spec.num_classes, "eval")
    return train, eval_, true_ber(spec, seed)
