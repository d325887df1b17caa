"""Synthetic two-domain clustered data, CSV/JSON dataset files, and batch assembly."""

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from goalgeom.objectives import PartitionError, PartitionedBatch

__all__ = [
    "BatchSpec",
    "BundleFormatError",
    "DatasetBundle",
    "SpecError",
    "SyntheticSpec",
    "TrainingView",
    "assemble_batch",
    "epoch_batches",
    "generate_synthetic",
    "load_bundle",
    "save_bundle",
]

MANIFEST = "manifest.json"
FILES = {
    "x_source": "source_features.csv",
    "y_source": "source_labels.csv",
    "x_target": "target_features.csv",
    "y_target_true": "target_labels.csv",
}


class SpecError(ValueError):
    pass


class BundleFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian clusters in ``ambient_dim`` dimensions and a rigid-plus-translation domain shift.

    ``theta_deg`` rotates inside a seeded random 2-plane, ``translation`` is
    the shift length as a multiple of ``center_scale`` (random direction),
    and ``scaling`` multiplies every coordinate after the rotation. With
    ``shift_in_center_span`` the rotation plane and translation direction are
    drawn inside the span of the class centers, where they actually move the
    class structure; otherwise they are drawn from the whole ambient space.
    """

    k: int = 3
    ambient_dim: int = 20
    n_per_class: int = 100
    center_scale: float = 4.0
    noise: float = 0.5
    theta_deg: float = 30.0
    translation: float = 0.5
    scaling: float = 1.0
    shift_in_center_span: bool = True
    seed: int = 0

    def validate(self):
        if self.k < 1 or self.ambient_dim < 1 or self.n_per_class < 1:
            raise SpecError("k, ambient_dim and n_per_class must be >= 1")
        if self.noise < 0:
            raise SpecError("noise must be >= 0")
        if not 0.0 <= self.theta_deg <= 180.0:
            raise SpecError("theta_deg must lie in [0, 180]")
        if self.theta_deg > 0 and self.ambient_dim < 2:
            raise SpecError("a rotation needs ambient_dim >= 2")
        if self.center_scale <= 0 or self.scaling <= 0:
            raise SpecError("center_scale and scaling must be positive")

    def shift_description(self):
        return {"theta_deg": self.theta_deg, "translation": self.translation, "scaling": self.scaling}


@dataclass(frozen=True, eq=False)
class TrainingView:
    """What training code may see: no target ground truth exists on this type."""

    x_source: np.ndarray
    y_source: np.ndarray
    x_target: np.ndarray
    k: int

    @property
    def ambient_dim(self):
        return self.x_source.shape[0]


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    x_source: np.ndarray
    y_source: np.ndarray
    x_target: np.ndarray
    k: int
    y_target_true: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        xs = np.asarray(self.x_source, dtype=np.float64)
        xt = np.asarray(self.x_target, dtype=np.float64)
        ys = np.asarray(self.y_source, dtype=np.int64).ravel()
        if xs.ndim != 2 or xt.ndim != 2 or xs.shape[0] != xt.shape[0]:
            raise BundleFormatError("source and target features must be 2-D with equal row counts")
        if ys.size != xs.shape[1]:
            raise BundleFormatError(f"{ys.size} source labels for {xs.shape[1]} source samples")
        if ys.size and (ys.min() < 0 or ys.max() >= self.k):
            raise BundleFormatError(f"source labels must lie in [0, {self.k})")
        missing = sorted(set(range(self.k)) - set(ys.tolist()))
        if missing:
            raise PartitionError(f"classes {missing} are absent from the source domain")
        object.__setattr__(self, "x_source", xs)
        object.__setattr__(self, "x_target", xt)
        object.__setattr__(self, "y_source", ys)
        if self.y_target_true is not None:
            yt = np.asarray(self.y_target_true, dtype=np.int64).ravel()
            if yt.size != xt.shape[1]:
                raise BundleFormatError(f"{yt.size} target labels for {xt.shape[1]} target samples")
            if yt.size and (yt.min() < 0 or yt.max() >= self.k):
                raise BundleFormatError(f"target labels must lie in [0, {self.k})")
            object.__setattr__(self, "y_target_true", yt)

    @property
    def ambient_dim(self):
        return self.x_source.shape[0]

    @property
    def n_source(self):
        return self.x_source.shape[1]

    @property
    def n_target(self):
        return self.x_target.shape[1]

    def training_view(self):
        return TrainingView(self.x_source, self.y_source, self.x_target, self.k)


def _random_frame(rng, span, cols):
    q, _ = np.linalg.qr(span @ rng.standard_normal((span.shape[1], cols)))
    return q


def _rotation(rng, span, theta):
    dim = span.shape[0]
    if theta == 0.0:
        return np.eye(dim)
    p = _random_frame(rng, span, 2)
    c, s = math.cos(theta), math.sin(theta)
    rot2 = np.array([[c, -s], [s, c]])
    return np.eye(dim) + p @ (rot2 - np.eye(2)) @ p.T


def _centers(rng, k, dim, scale):
    # Gram-Schmidt keeps centers pairwise at distance >= scale*sqrt(2) when k <= dim.
    raw = rng.standard_normal((dim, k))
    if k <= dim:
        q, _ = np.linalg.qr(raw)
        return scale * q[:, :k]
    return scale * raw / np.linalg.norm(raw, axis=0, keepdims=True)


def generate_synthetic(spec=None, **overrides):
    """Deterministic two-domain bundle; the target keeps its labels for evaluation only."""
    if spec is None:
        spec = SyntheticSpec(**overrides)
    elif overrides:
        spec = SyntheticSpec(**{**asdict(spec), **overrides})
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    dim, k, m = spec.ambient_dim, spec.k, spec.n_per_class
    centers = _centers(rng, k, dim, spec.center_scale)
    span = np.eye(dim)
    if spec.shift_in_center_span and k >= 2:
        span, _ = np.linalg.qr(centers)
    rot = _rotation(rng, span, math.radians(spec.theta_deg))
    direction = _random_frame(rng, span, 1)[:, 0]
    shift = spec.translation * spec.center_scale * direction

    labels = np.repeat(np.arange(k), m)
    xs = centers[:, labels] + spec.noise * rng.standard_normal((dim, k * m))
    shifted_centers = spec.scaling * (rot @ centers) + shift[:, None]
    xt = shifted_centers[:, labels] + spec.noise * rng.standard_normal((dim, k * m))
    meta = {"seed": spec.seed, "shift": spec.shift_description(), "spec": asdict(spec)}
    return DatasetBundle(xs, labels, xt, k, y_target_true=labels.copy(), meta=meta)


def _write_matrix(path, x):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(x.shape[0])])
        for col in x.T:
            w.writerow([repr(float(v)) for v in col])


def _write_labels(path, y):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"])
        for v in y:
            w.writerow([int(v)])


def _read_matrix(path, dim):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != dim:
            raise BundleFormatError(f"{path}:1: header has {0 if header is None else len(header)} columns, manifest says {dim}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim:
                raise BundleFormatError(f"{path}:{lineno}: expected {dim} values, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise BundleFormatError(f"{path}:{lineno}: {exc}") from None
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), dim).T


def _read_labels(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 1:
                raise BundleFormatError(f"{path}:{lineno}: expected one label, got {len(row)} fields")
            try:
                out.append(int(row[0]))
            except ValueError:
                raise BundleFormatError(f"{path}:{lineno}: label {row[0]!r} is not an integer") from None
    return np.asarray(out, dtype=np.int64)


def save_bundle(bundle, path):
    """Write the bundle as CSV files plus ``manifest.json`` under directory ``path``."""
    os.makedirs(path, exist_ok=True)
    _write_matrix(os.path.join(path, FILES["x_source"]), bundle.x_source)
    _write_labels(os.path.join(path, FILES["y_source"]), bundle.y_source)
    _write_matrix(os.path.join(path, FILES["x_target"]), bundle.x_target)
    has_truth = bundle.y_target_true is not None
    if has_truth:
        _write_labels(os.path.join(path, FILES["y_target_true"]), bundle.y_target_true)
    manifest = {
        "format": "goalgeom-dataset",
        "version": 1,
        "k": bundle.k,
        "ambient_dim": bundle.ambient_dim,
        "n_source": bundle.n_source,
        "n_target": bundle.n_target,
        "has_target_labels": has_truth,
        "seed": bundle.meta.get("seed"),
        "shift": bundle.meta.get("shift"),
        "files": {k: v for k, v in FILES.items() if has_truth or k != "y_target_true"},
    }
    with open(os.path.join(path, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_bundle(path):
    """Read a bundle written by ``save_bundle``; format problems raise ``BundleFormatError``."""
    mpath = os.path.join(path, MANIFEST)
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise BundleFormatError(f"{mpath}: manifest not found") from None
    except json.JSONDecodeError as exc:
        raise BundleFormatError(f"{mpath}:{exc.lineno}: {exc.msg}") from None
    for key in ("k", "ambient_dim", "n_source", "n_target"):
        if not isinstance(manifest.get(key), int):
            raise BundleFormatError(f"{mpath}: missing or non-integer '{key}'")
    k, dim = manifest["k"], manifest["ambient_dim"]
    files = manifest.get("files", FILES)
    xs = _read_matrix(os.path.join(path, files["x_source"]), dim)
    ys = _read_labels(os.path.join(path, files["y_source"]))
    xt = _read_matrix(os.path.join(path, files["x_target"]), dim)
    if xs.shape[1] != manifest["n_source"] or ys.size != xs.shape[1]:
        raise BundleFormatError(
            f"{path}: {xs.shape[1]} source rows, {ys.size} source labels, manifest n_source={manifest['n_source']}")
    if xt.shape[1] != manifest["n_target"]:
        raise BundleFormatError(f"{path}: {xt.shape[1]} target rows, manifest n_target={manifest['n_target']}")
    yt = None
    if manifest.get("has_target_labels"):
        yt = _read_labels(os.path.join(path, files["y_target_true"]))
        if yt.size != xt.shape[1]:
            raise BundleFormatError(f"{path}: {yt.size} target labels for {xt.shape[1]} target rows")
    top = max(int(ys.max(initial=-1)), int(yt.max(initial=-1)) if yt is not None else -1)
    if top >= k:
        raise BundleFormatError(f"{mpath}: manifest k={k} but labels reach {top}")
    meta = {"seed": manifest.get("seed"), "shift": manifest.get("shift")}
    return DatasetBundle(xs, ys, xt, k, y_target_true=yt, meta=meta)


@dataclass(frozen=True)
class BatchSpec:
    """``mode="full"`` uses every sample; ``"balanced"`` draws ``per_class`` per class and domain."""

    mode: str = "full"
    per_class: int = 32

    def __post_init__(self):
        if self.mode not in ("full", "balanced"):
            raise ValueError(f"unknown batch mode {self.mode!r}")
        if self.per_class < 1:
            raise ValueError("per_class must be >= 1")


def _check_lengths(view, pseudo_labels, mask):
    pseudo_labels = np.asarray(pseudo_labels, dtype=np.int64).ravel()
    mask = np.asarray(mask, dtype=bool).ravel()
    nt = view.x_target.shape[1]
    if pseudo_labels.size != nt or mask.size != nt:
        raise ValueError(f"pseudo labels ({pseudo_labels.size}) and mask ({mask.size}) must match {nt} target samples")
    missing = sorted(set(range(view.k)) - set(np.asarray(view.y_source).tolist()))
    if missing:
        raise PartitionError(f"classes {missing} are absent from the source domain")
    return pseudo_labels, mask


def _build(view, src, tgt, pseudo_labels, mask):
    x = np.concatenate([view.x_source[:, src], view.x_target[:, tgt]], axis=1)
    labels = np.concatenate([view.y_source[src], np.where(mask[tgt], pseudo_labels[tgt], -1)])
    is_target = np.concatenate([np.zeros(src.size, bool), np.ones(tgt.size, bool)])
    origin = np.concatenate([src, tgt])
    return PartitionedBatch(x, is_target, labels, view.k, origin=origin)


def assemble_batch(view, pseudo_labels, selection_mask, batch_spec=None, rng=None):
    """Batch of raw features partitioned by domain and (pseudo) class.

    Source columns carry ground truth, selected target columns their pseudo
    label, unselected target columns are unlabeled. ``batch.origin`` maps each
    column back to its index within its own domain. Accepts a bundle or a
    ``TrainingView``; target ground truth is never read.
    """
    view = view.training_view() if isinstance(view, DatasetBundle) else view
    pseudo_labels, mask = _check_lengths(view, pseudo_labels, selection_mask)
    batch_spec = batch_spec or BatchSpec()
    if batch_spec.mode == "full":
        return _build(view, np.arange(view.x_source.shape[1]), np.arange(mask.size), pseudo_labels, mask)
    return next(epoch_batches(view, pseudo_labels, mask, batch_spec, rng))


def epoch_batches(view, pseudo_labels, selection_mask, batch_spec, rng=None):
    """Yield class-balanced batches covering one epoch without replacement.

    Pools are the source columns of each class, the selected target columns of
    each pseudo class, and the unselected target columns; every batch takes up
    to ``per_class`` from each pool and the epoch ends when the source pools run dry.
    """
    view = view.training_view() if isinstance(view, DatasetBundle) else view
    pseudo_labels, mask = _check_lengths(view, pseudo_labels, selection_mask)
    rng = rng if rng is not None else np.random.default_rng(0)
    ys = np.asarray(view.y_source)
    src_pools = [rng.permutation(np.flatnonzero(ys == i)) for i in range(view.k)]
    tgt_pools = [rng.permutation(np.flatnonzero(mask & (pseudo_labels == i))) for i in range(view.k)]
    unl_pool = rng.permutation(np.flatnonzero(~mask))
    m = batch_spec.per_class
    n_batches = max(math.ceil(p.size / m) for p in src_pools)
    for b in range(n_batches):
        sl = slice(b * m, (b + 1) * m)
        src = np.concatenate([p[sl] for p in src_pools])
        tgt = np.concatenate([p[sl] for p in tgt_pools] + [unl_pool[b * m * view.k:(b + 1) * m * view.k]])
        yield _build(view, src, np.sort(tgt), pseudo_labels, mask)
