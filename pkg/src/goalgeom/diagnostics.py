"""Measurements of learned embeddings: LDA scatter values, principal-angle
matrices, dominant singular-direction similarity, and the lambda sweep."""

import logging
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from goalgeom import model as mdl
from goalgeom.matrixcore import DEFAULT_REL_TOL, orthonormal_basis, principal_angle_cosines, svd
from goalgeom.objectives import PartitionedBatch, loss_db, loss_tb, normalize_columns

__all__ = [
    "DiagnosticsReport",
    "classwise_domain_angle",
    "diagnose",
    "domain_angle",
    "dominant_direction_similarity",
    "lambda_sweep",
    "lda_measures",
    "principal_angle_matrix",
    "run_sweep_point",
]

log = logging.getLogger(__name__)


def lda_measures(z_target, labels):
    """``(inter, intra, discriminant)`` from trace-normalized scatter matrices.

    ``intra = tr(S_w) / n`` and ``inter = tr(S_b) / n`` about the class and
    grand means; ``discriminant = inter / (intra + 1e-12)``.
    """
    z = np.asarray(z_target, dtype=np.float64)
    labels = np.asarray(labels)
    n = z.shape[1]
    if n == 0:
        return 0.0, 0.0, 0.0
    grand = z.mean(axis=1, keepdims=True)
    intra = inter = 0.0
    for c in np.unique(labels):
        zc = z[:, labels == c]
        mu = zc.mean(axis=1, keepdims=True)
        intra += float(((zc - mu) ** 2).sum())
        inter += zc.shape[1] * float(((mu - grand) ** 2).sum())
    intra /= n
    inter /= n
    return inter, intra, inter / (intra + 1e-12)


DEFAULT_BASIS_FLOOR = 0.1


def _basis(z, rel_tol, basis_floor=None):
    # basis_floor keeps directions with sigma >= floor * sigma_max, independent of block size.
    if z.shape[1] == 0:
        return None
    if basis_floor is not None:
        rel_tol = basis_floor / max(z.shape)
    return orthonormal_basis(z, rel_tol)


def _mean_cos(a, b):
    if a is None or b is None or a.shape[1] == 0 or b.shape[1] == 0:
        return math.nan
    return float(principal_angle_cosines(a, b).mean())


def principal_angle_matrix(batch, rel_tol=DEFAULT_REL_TOL, basis_floor=None):
    """``k x k`` mean principal-angle cosines between class-``i`` source and class-``j`` target bases.

    Bases come from ``orthonormal_basis(block, rel_tol)``; with ``basis_floor``
    they keep only singular directions above ``basis_floor * sigma_max``, which
    is what makes the measure informative for blocks with many noisy columns.
    Entries whose source or target block is empty are NaN (absent), not zero.
    """
    k = batch.k
    src = [_basis(batch.z[:, batch.class_domain_idx(i, False)], rel_tol, basis_floor) for i in range(k)]
    tgt = [_basis(batch.z[:, batch.class_domain_idx(i, True)], rel_tol, basis_floor) for i in range(k)]
    return np.array([[_mean_cos(src[i], tgt[j]) for j in range(k)] for i in range(k)])


def classwise_domain_angle(batch, rel_tol=DEFAULT_REL_TOL, basis_floor=None):
    """Mean over classes of the source-vs-target mean principal-angle cosine."""
    diag = np.diag(principal_angle_matrix(batch, rel_tol, basis_floor))
    diag = diag[np.isfinite(diag)]
    return float(diag.mean()) if diag.size else math.nan


def domain_angle(z, is_target, rel_tol=DEFAULT_REL_TOL, basis_floor=None):
    """Mean principal-angle cosine between the whole source and whole target embeddings."""
    is_target = np.asarray(is_target, dtype=bool)
    return _mean_cos(_basis(z[:, ~is_target], rel_tol, basis_floor),
                     _basis(z[:, is_target], rel_tol, basis_floor))


def dominant_direction_similarity(z_class, correct_mask):
    """Singular-value-weighted alignment of correct vs incorrect columns with the class's singular vectors.

    For each left singular vector ``u_j`` the mean ``|cos(u_j, x)|`` over unit-normalized
    correct (resp. incorrect) columns is weighted by ``sigma_j / sum(sigma)``.
    Returns ``(correct, incorrect, n_zero_columns)``; a side with no columns is ``None``.
    """
    z = np.asarray(z_class, dtype=np.float64)
    mask = np.asarray(correct_mask, dtype=bool)
    if mask.size != z.shape[1]:
        raise ValueError("mask length must equal the column count")
    norms = np.linalg.norm(z, axis=0)
    nonzero = norms > 0
    n_zero = int(np.count_nonzero(~nonzero))
    if not nonzero.any():
        return None, None, n_zero
    res = svd(z[:, nonzero])
    total = res.sigma.sum()
    if total == 0:
        return None, None, n_zero
    weights = res.sigma / total
    unit = z[:, nonzero] / norms[nonzero]
    cos = np.abs(res.u.T @ unit)
    m = mask[nonzero]

    def side(sel):
        if not sel.any():
            return None
        return float(weights @ cos[:, sel].mean(axis=1))

    return side(m), side(~m), n_zero


@dataclass
class DiagnosticsReport:
    inter_scatter: float
    intra_scatter: float
    discriminant: float
    mean_p_angle_cos: float
    mean_c_angle_cos: float
    pairwise_cos_matrix: list
    dominant_similarity: list
    loss_tb: float = math.nan
    loss_db: float = math.nan

    def to_dict(self):
        return asdict(self)


def diagnose(params, bundle, target_labels=None, rel_tol=DEFAULT_REL_TOL,
             basis_floor=DEFAULT_BASIS_FLOOR, unit=True):
    """Measure a trained model on a bundle.

    Measures are taken on unit-length embedding columns when ``unit`` is set
    (the view the geometric objectives train on). Target columns are grouped
    by ``target_labels`` (default: the bundle's ground truth, else the model's
    own predictions). The dominant-direction entry for class ``i`` compares
    target samples predicted ``i`` that are correct against those that are not
    (needs ground truth).
    """
    x = np.concatenate([bundle.x_source, bundle.x_target], axis=1)
    trace = mdl.forward(params, x)
    ns = bundle.n_source
    z = normalize_columns(trace.z)[0] if unit else trace.z
    pred_t = np.argmax(trace.probs[:, ns:], axis=0)
    truth = bundle.y_target_true
    if target_labels is None:
        target_labels = truth if truth is not None else pred_t
    is_target = np.r_[np.zeros(ns, bool), np.ones(bundle.n_target, bool)]
    batch = PartitionedBatch(z, is_target, np.r_[bundle.y_source, target_labels], bundle.k)
    inter, intra, disc = lda_measures(z[:, ns:], target_labels)
    pam = principal_angle_matrix(batch, rel_tol, basis_floor)
    diag = np.diag(pam)
    dominant = []
    for i in range(bundle.k):
        sel = pred_t == i
        if truth is None or not sel.any():
            dominant.append([None, None])
            continue
        c, w, _ = dominant_direction_similarity(z[:, ns:][:, sel], truth[sel] == i)
        dominant.append([c, w])
    complete = batch.complete_classes(1)
    return DiagnosticsReport(
        inter_scatter=inter,
        intra_scatter=intra,
        discriminant=disc,
        mean_p_angle_cos=domain_angle(z, is_target, rel_tol, basis_floor),
        mean_c_angle_cos=float(np.nanmean(diag)) if np.isfinite(diag).any() else math.nan,
        pairwise_cos_matrix=pam.tolist(),
        dominant_similarity=dominant,
        loss_tb=loss_tb(batch, classes=complete),
        loss_db=loss_db(batch) if bundle.k >= 2 else math.nan,
    )


def run_sweep_point(bundle, base_cfg, lam):
    """Train once at ``lambda_tb = lam * lambda_db`` and return a sweep row."""
    from goalgeom.trainer import evaluate, train

    cfg = replace(base_cfg, lambda_tb=lam * base_cfg.lambda_db)
    row = {"lambda": lam, "lambda_tb": cfg.lambda_tb, "lambda_db": cfg.lambda_db}
    try:
        params, report = train(bundle, cfg)
    except Exception as exc:  # recorded per row; the sweep keeps going
        log.warning("sweep point lambda=%s failed: %s", lam, exc)
        row.update(target_acc=math.nan, final_loss_tb=math.nan, final_loss_db=math.nan, error=str(exc))
        return row
    last = report.last()
    row.update(
        target_acc=evaluate(params, bundle.x_target, bundle.y_target_true) if bundle.y_target_true is not None else math.nan,
        final_loss_tb=last["loss_tb"] if last else math.nan,
        final_loss_db=last["loss_db"] if last else math.nan,
        error="",
    )
    return row


def lambda_sweep(bundle, base_cfg, lambda_grid, jobs=1):
    """One full training run per ``lambda``, same data and seed, rows in grid order."""
    grid = [float(v) for v in lambda_grid]
    if not grid:
        raise ValueError("lambda grid must be non-empty")
    if any(v < 0 or not math.isfinite(v) for v in grid):
        raise ValueError("lambda values must be finite and non-negative")
    if jobs <= 1:
        return [run_sweep_point(bundle, base_cfg, lam) for lam in grid]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(run_sweep_point, bundle, base_cfg, lam) for lam in grid]
        return [f.result() for f in futures]
