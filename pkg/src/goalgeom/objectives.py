"""Rank criteria, nuclear-norm losses for domain equivalence and class orthogonality,
their subgradients, and the closed-form bounds those losses obey.

Sign conventions: ``loss_tb`` is a quantity to *maximize* (domain equivalence),
``loss_db`` one to *minimize* (class orthogonality); the combined constraint
``loss_go = lambda_db * loss_db - lambda_tb * loss_tb`` is minimized.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from goalgeom.matrixcore import (
    DEFAULT_REL_TOL,
    PreconditionError,
    as_mat,
    nuclear_norm,
    numerical_rank,
    svd,
)

__all__ = [
    "BALANCE_LIMIT",
    "GoConfig",
    "GoTerms",
    "PartitionError",
    "PartitionedBatch",
    "domain_tb_value_and_grad",
    "go_lower_bound",
    "go_value_and_grad",
    "grad_loss_go",
    "grad_nuclear",
    "loss_db",
    "loss_go",
    "loss_tb",
    "normalize_columns",
    "normalize_columns_vjp",
    "nuclear_value_and_grad",
    "rank_db_criterion",
    "rank_tb_criterion",
    "regime",
    "tb_upper_bound",
]

BALANCE_LIMIT = 1.0 + math.sqrt(2.0)
_TB_CONST = 2.0 - math.sqrt(2.0)


class PartitionError(ValueError):
    """A class or (class, domain) block required by an objective is empty."""


@dataclass(frozen=True, eq=False)
class PartitionedBatch:
    """Embedding matrix with per-column domain tags and (pseudo) class labels.

    ``labels[j] == -1`` marks an unlabeled column: it belongs to its domain
    and to the whole-batch matrix, but to no class block. ``origin`` optionally
    records where each column came from (its index within its own domain).
    """

    z: np.ndarray
    is_target: np.ndarray
    labels: np.ndarray
    k: int
    origin: np.ndarray = None
    _blocks: dict = field(init=False, repr=False)

    def __post_init__(self):
        z = as_mat(self.z, "z")
        is_target = np.asarray(self.is_target, dtype=bool).ravel()
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        n = z.shape[1]
        if is_target.size != n or labels.size != n:
            raise PartitionError(f"tags ({is_target.size}) and labels ({labels.size}) must match {n} columns")
        if self.k < 1:
            raise PartitionError("k must be >= 1")
        if np.any((labels < -1) | (labels >= self.k)):
            raise PartitionError(f"labels must lie in [0, {self.k}) or be -1")
        blocks = {}
        for i in range(self.k):
            cls = labels == i
            blocks[i] = (
                np.flatnonzero(cls),
                np.flatnonzero(cls & ~is_target),
                np.flatnonzero(cls & is_target),
            )
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "is_target", is_target)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_blocks", blocks)

    @property
    def d(self):
        return self.z.shape[0]

    @property
    def n(self):
        return self.z.shape[1]

    @property
    def source_idx(self):
        return np.flatnonzero(~self.is_target)

    @property
    def target_idx(self):
        return np.flatnonzero(self.is_target)

    @property
    def unlabeled_idx(self):
        return np.flatnonzero(self.labels < 0)

    def class_idx(self, i):
        return self._blocks[i][0]

    def class_domain_idx(self, i, target):
        return self._blocks[i][2 if target else 1]

    def complete_classes(self, min_cols=1):
        """Classes having at least ``min_cols`` columns in both domains."""
        return [
            i for i in range(self.k)
            if self._blocks[i][1].size >= min_cols and self._blocks[i][2].size >= min_cols
        ]

    def with_z(self, z):
        return PartitionedBatch(z, self.is_target, self.labels, self.k, origin=self.origin)


@dataclass(frozen=True)
class GoConfig:
    lambda_tb: float = 1.0
    lambda_db: float = 1.0
    alpha: float = 1.0
    rel_tol: float = DEFAULT_REL_TOL

    def __post_init__(self):
        if self.lambda_tb < 0 or self.lambda_db < 0:
            raise ValueError("lambda_tb and lambda_db must be non-negative")
        if self.alpha <= 0 or self.rel_tol <= 0:
            raise ValueError("alpha and rel_tol must be positive")

    @property
    def ratio(self):
        if self.lambda_db == 0:
            return math.inf if self.lambda_tb > 0 else 0.0
        return self.lambda_tb / self.lambda_db

    @property
    def regime(self):
        return regime(self.ratio)


def regime(lam):
    """Name of the co-regularization regime for ``lam = lambda_tb / lambda_db``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if lam == 0:
        return "discriminability-only"
    if lam <= BALANCE_LIMIT:
        return "balance"
    return "transferability-dominant"


def _require_complete(batch, classes):
    for i in classes:
        if batch.class_domain_idx(i, False).size == 0:
            raise PartitionError(f"class {i} has no source columns")
        if batch.class_domain_idx(i, True).size == 0:
            raise PartitionError(f"class {i} has no target columns")


def _require_nonempty(batch):
    if batch.k < 2:
        raise PartitionError("class-orthogonality terms need k >= 2")
    for i in range(batch.k):
        if batch.class_idx(i).size == 0:
            raise PartitionError(f"class {i} is empty")


def rank_tb_criterion(batch, rel_tol=DEFAULT_REL_TOL):
    """Sum over classes of ``rank(Z_i^s) + rank(Z_i^t) - rank(Z_i)``."""
    classes = range(batch.k)
    _require_complete(batch, classes)
    z = batch.z
    total = 0
    for i in classes:
        total += (numerical_rank(z[:, batch.class_domain_idx(i, False)], rel_tol)
                  + numerical_rank(z[:, batch.class_domain_idx(i, True)], rel_tol)
                  - numerical_rank(z[:, batch.class_idx(i)], rel_tol))
    return total


def rank_db_criterion(batch, rel_tol=DEFAULT_REL_TOL):
    """Sum over classes of ``rank(Z_i)`` minus ``rank(Z)``."""
    _require_nonempty(batch)
    z = batch.z
    total = sum(numerical_rank(z[:, batch.class_idx(i)], rel_tol) for i in range(batch.k))
    return total - numerical_rank(z, rel_tol)


def nuclear_value_and_grad(m, rel_tol=DEFAULT_REL_TOL):
    """Nuclear norm of ``m`` and the subgradient ``U_r V_r^T`` from one SVD.

    Singular directions at or below ``rel_tol * sigma_max * max(rows, cols)``
    are dropped, which keeps the subgradient bounded (Frobenius norm
    ``sqrt(rank)``) at rank-deficient points.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape[1] == 0 or m.shape[0] == 0:
        return 0.0, np.zeros_like(m)
    res = svd(m)
    s = res.sigma
    if s[0] == 0.0:
        return 0.0, np.zeros_like(m)
    keep = s > rel_tol * s[0] * max(m.shape)
    return float(s.sum()), res.u[:, keep] @ res.v[:, keep].T


def grad_nuclear(m, rel_tol=DEFAULT_REL_TOL):
    """Subgradient of the nuclear norm at ``m`` (see ``nuclear_value_and_grad``)."""
    return nuclear_value_and_grad(as_mat(m), rel_tol)[1]


def _nuc(m):
    return nuclear_norm(m) if m.size else 0.0


def loss_tb(batch, classes=None):
    """Domain-equivalence objective ``sum_i ||Z_i^s||_* + ||Z_i^t||_* - ||Z_i||_*``.

    ``classes`` restricts the sum; by default every class must have columns
    in both domains.
    """
    if classes is None:
        classes = range(batch.k)
        _require_complete(batch, classes)
    z = batch.z
    total = 0.0
    for i in sorted(classes):
        total += (_nuc(z[:, batch.class_domain_idx(i, False)])
                  + _nuc(z[:, batch.class_domain_idx(i, True)])
                  - _nuc(z[:, batch.class_idx(i)]))
    return total


def loss_db(batch):
    """Class-orthogonality objective ``sum_i ||Z_i||_* - ||Z||_*``.

    ``Z`` is the full batch, so unlabeled columns enter only this term.
    """
    _require_nonempty(batch)
    z = batch.z
    return sum(_nuc(z[:, batch.class_idx(i)]) for i in range(batch.k)) - _nuc(z)


def loss_go(batch, cfg):
    """``lambda_db * loss_db - lambda_tb * loss_tb``; a zero weight skips its term."""
    value = 0.0
    if cfg.lambda_db:
        value += cfg.lambda_db * loss_db(batch)
    if cfg.lambda_tb:
        value -= cfg.lambda_tb * loss_tb(batch)
    return value


@dataclass(frozen=True)
class GoTerms:
    loss_tb: float
    loss_db: float
    loss_go: float
    grad: np.ndarray
    tb_classes: tuple


def go_value_and_grad(batch, cfg, tb_classes=None):
    """Loss terms and the subgradient of ``loss_go`` with respect to ``batch.z``.

    Each nuclear-norm term scatters its ``U_r V_r^T`` back onto the columns it
    was built from. ``tb_classes`` selects which classes enter ``loss_tb``
    (all classes, checked, by default; only the complete ones when
    ``lambda_tb`` is zero). Terms whose weight is zero are
    evaluated for reporting but add nothing to the gradient.
    """
    z = batch.z
    rt = cfg.rel_tol
    grad = np.zeros_like(z)
    if tb_classes is None and cfg.lambda_tb == 0:
        tb_classes = batch.complete_classes(1)  # reported only, so no class is required
    elif tb_classes is None:
        tb_classes = list(range(batch.k))
        _require_complete(batch, tb_classes)
    tb_classes = tuple(sorted(tb_classes))

    _require_nonempty(batch)
    db = 0.0
    for i in range(batch.k):
        idx = batch.class_idx(i)
        v, g = nuclear_value_and_grad(z[:, idx], rt)
        db += v
        grad[:, idx] += cfg.lambda_db * g
    v, g = nuclear_value_and_grad(z, rt)
    db -= v
    grad -= cfg.lambda_db * g

    tb = 0.0
    for i in tb_classes:
        for target in (False, True):
            idx = batch.class_domain_idx(i, target)
            v, g = nuclear_value_and_grad(z[:, idx], rt)
            tb += v
            grad[:, idx] -= cfg.lambda_tb * g
        idx = batch.class_idx(i)
        v, g = nuclear_value_and_grad(z[:, idx], rt)
        tb -= v
        grad[:, idx] += cfg.lambda_tb * g

    go = cfg.lambda_db * db - cfg.lambda_tb * tb
    return GoTerms(loss_tb=tb, loss_db=db, loss_go=go, grad=grad, tb_classes=tb_classes)


def grad_loss_go(batch, cfg):
    """``d x n`` subgradient of ``loss_go`` with respect to the embedding."""
    return go_value_and_grad(batch, cfg).grad


def domain_tb_value_and_grad(z, is_target, rel_tol=DEFAULT_REL_TOL):
    """Unpartitioned domain term ``||Z^s||_* + ||Z^t||_* - ||Z||_*`` and its gradient."""
    z = np.asarray(z, dtype=np.float64)
    is_target = np.asarray(is_target, dtype=bool)
    grad = np.zeros_like(z)
    value = 0.0
    for mask in (~is_target, is_target):
        idx = np.flatnonzero(mask)
        v, g = nuclear_value_and_grad(z[:, idx], rel_tol)
        value += v
        grad[:, idx] += g
    v, g = nuclear_value_and_grad(z, rel_tol)
    return value - v, grad - g


def normalize_columns(z, eps=1e-12):
    """Scale every column to unit length; returns ``(z_unit, norms)``."""
    z = np.asarray(z, dtype=np.float64)
    norms = np.maximum(np.linalg.norm(z, axis=0), eps)
    return z / norms, norms


def normalize_columns_vjp(z_unit, norms, upstream):
    """Pull a gradient on ``z_unit`` back through ``normalize_columns``."""
    radial = np.einsum("ij,ij->j", z_unit, upstream)
    return (upstream - z_unit * radial) / norms


def tb_upper_bound(alpha, d):
    """Largest value of one domain-equivalence term inside the spectral ball of radius ``alpha``."""
    if alpha <= 0 or d < 1:
        raise PreconditionError("need alpha > 0 and d >= 1")
    return _TB_CONST * alpha * d


def go_lower_bound(lam, alpha, d, k):
    """Lower bound on ``loss_go / lambda_db`` as a function of ``lam = lambda_tb / lambda_db``.

    Piecewise: 0 at ``lam == 0``; ``(sqrt2 - 2) alpha lam d`` on the balance
    interval ``(0, 1 + sqrt2]``; ``[((sqrt2 - 2) lam + sqrt2) sqrt(k) - sqrt2] alpha d``
    beyond it.
    """
    if lam < 0 or alpha <= 0 or d < 1 or k < 1:
        raise PreconditionError("need lam >= 0, alpha > 0, d >= 1, k >= 1")
    r2 = math.sqrt(2.0)
    if lam == 0:
        return 0.0
    if lam <= BALANCE_LIMIT:
        return (r2 - 2.0) * alpha * lam * d
    return (((r2 - 2.0) * lam + r2) * math.sqrt(k) - r2) * alpha * d
