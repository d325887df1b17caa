"""Randomized and constructive checks of the rank and nuclear-norm inequalities.

Each ``verify_*`` function draws random matrices in batches of equal shape so
the singular values of a whole group come from one kernel call, and returns a
:class:`TrialReport`. Random matrices follow one ensemble throughout: standard
normal entries rescaled so the spectral norm is ``alpha * U(0.2, 1)``.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from goalgeom.matrixcore import (
    DEFAULT_REL_TOL,
    PreconditionError,
    numerical_rank,
    principal_angle_cosines,
    singular_values_batch,
)
from goalgeom.objectives import (
    BALANCE_LIMIT,
    GoConfig,
    PartitionedBatch,
    go_lower_bound,
    loss_db,
    loss_go,
    loss_tb,
    tb_upper_bound,
)

__all__ = [
    "DEFAULT_LAMBDA_GRID",
    "TrialReport",
    "theorem3_witness",
    "verify_all",
    "verify_rank_bounds",
    "verify_theorem1",
    "verify_theorem2",
    "verify_theorem3",
]

DEFAULT_LAMBDA_GRID = (0.0, 0.25, 0.5, 1.0, 2.0, BALANCE_LIMIT, 5.0, 10.0, 50.0)
BOUND_TOL = 1e-6
WITNESS_TOL = 1e-6
_CHUNK = 4096


@dataclass
class TrialReport:
    """Outcome of one harness.

    ``worst_slack`` is the smallest ``bound - value`` (upper bounds) or
    ``value - bound`` (lower bounds) seen; a trial counts as a violation only
    when its slack is below ``-tolerance``.
    """

    theorem: str
    trials: int
    violations: int = 0
    worst_slack: float = math.inf
    tolerance: float = BOUND_TOL
    witness_residuals: dict = field(default_factory=dict)
    witness_tolerance: float = WITNESS_TOL
    params: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def passed(self):
        return self.violations == 0 and all(r <= self.witness_tolerance for r in self.witness_residuals.values())

    def record(self, slack):
        slack = np.asarray(slack, dtype=np.float64).ravel()
        if slack.size:
            self.violations += int(np.count_nonzero(slack < -self.tolerance))
            self.worst_slack = min(self.worst_slack, float(slack.min()))

    def to_dict(self):
        out = asdict(self)
        out["passed"] = self.passed
        if not math.isfinite(out["worst_slack"]):
            out["worst_slack"] = None
        return out


def _chunks(total):
    done = 0
    while done < total:
        step = min(_CHUNK, total - done)
        yield step
        done += step


def _ball(rng, b, rows, cols, alpha):
    """``b`` Gaussian ``rows x cols`` matrices with spectral norm ``alpha * U(0.2, 1)``."""
    m = rng.standard_normal((b, rows, cols))
    top = singular_values_batch(m)[:, 0]
    scale = alpha * rng.uniform(0.2, 1.0, size=b) / top
    return m * scale[:, None, None]


def _nuc(stack):
    return singular_values_batch(stack).sum(axis=1)


def _frame(rng, rows, cols):
    q, _ = np.linalg.qr(rng.standard_normal((rows, rows)))
    return q[:, :cols]


def verify_rank_bounds(trials=10_000, dims=(8, 12), seed=0, rel_tol=DEFAULT_REL_TOL):
    """``max(r_A, r_B) <= rank([A, B]) <= r_A + r_B`` on random low-rank pairs, plus both equality cases.

    ``dims = (rows, cols)`` sets the shape of each factor. The witnesses are a
    pair with disjoint column bases (upper bound attained) and a pair whose
    bases are nested (lower bound attained).
    """
    if trials < 1:
        raise PreconditionError("trials must be >= 1")
    rows, cols = dims
    rng = np.random.default_rng(seed)
    rep = TrialReport("rank_bounds", trials, tolerance=0.0, seed=seed, params={"rows": rows, "cols": cols})
    for _ in range(trials):
        ra, rb = rng.integers(0, min(rows, cols) + 1, size=2)
        a = rng.standard_normal((rows, ra)) @ rng.standard_normal((ra, cols))
        b = rng.standard_normal((rows, rb)) @ rng.standard_normal((rb, cols))
        if rng.random() < 0.5 and ra and rb:
            # share part of the column space so the interior of the range is exercised
            share = rng.integers(1, min(ra, rb) + 1)
            b = np.concatenate([a[:, :share], b[:, share:]], axis=1)
        r_a, r_b = numerical_rank(a, rel_tol), numerical_rank(b, rel_tol)
        r_ab = numerical_rank(np.concatenate([a, b], axis=1), rel_tol)
        rep.record(min(r_ab - max(r_a, r_b), r_a + r_b - r_ab))

    r = min(2, rows // 2)
    u = _frame(rng, rows, 2 * r)
    a = u[:, :r] @ rng.standard_normal((r, cols))
    b = u[:, r:] @ rng.standard_normal((r, cols))
    ab = np.concatenate([a, b], axis=1)
    rep.witness_residuals["disjoint_upper"] = float(abs(numerical_rank(ab, rel_tol) - 2 * r))
    big = u[:, :2 * r] @ rng.standard_normal((2 * r, cols))
    ab = np.concatenate([big, a], axis=1)
    rep.witness_residuals["nested_lower"] = float(abs(numerical_rank(ab, rel_tol) - 2 * r))
    return rep


def verify_theorem1(trials=100_000, alpha=1.0, d=(1, 2, 3, 4, 5, 6), seed=0, bound_scale=1.0):
    """``||A||_* + ||B||_* - ||[A, B]||_* <= (2 - sqrt2) alpha d`` inside the spectral ball.

    ``d`` may be one row count or a sequence; trials are split evenly across
    them. The witness ``A = B = alpha * (d orthonormal columns)`` must sit on
    the bound with principal-angle cosines all 1. ``bound_scale < 1`` tightens
    the bound on purpose so the harness can be shown to catch violations.
    """
    ds = (d,) if np.isscalar(d) else tuple(d)
    if min(ds) < 1:
        raise PreconditionError("d must be >= 1")
    rng = np.random.default_rng(seed)
    rep = TrialReport("theorem1", trials, tolerance=1e-8, seed=seed,
                      params={"alpha": alpha, "d": list(ds), "bound_scale": bound_scale})
    per = [trials // len(ds) + (i < trials % len(ds)) for i in range(len(ds))]
    for dd, count in zip(ds, per):
        for b in _chunks(count):
            na, nb = rng.integers(1, 2 * dd + 3, size=2)
            a = _ball(rng, b, dd, na, alpha)
            bm = _ball(rng, b, dd, nb, alpha)
            value = _nuc(a) + _nuc(bm) - _nuc(np.concatenate([a, bm], axis=2))
            rep.record(bound_scale * tb_upper_bound(alpha, dd) - value)
    for dd in ds:
        f = alpha * _frame(rng, dd, dd)
        value = _nuc(f[None]) * 2 - _nuc(np.concatenate([f, f], axis=1)[None])
        rep.witness_residuals[f"equal_frames_d{dd}"] = float(abs(tb_upper_bound(alpha, dd) - value[0]))
        cos = principal_angle_cosines(f / alpha, f / alpha)
        rep.witness_residuals[f"equal_frames_d{dd}_angle"] = float(1.0 - cos.min())
    return rep


def verify_theorem2(trials=100_000, seed=0, rows=(2, 6), alpha=1.0):
    """``||[A, B]||_* <= ||A||_* + ||B||_*``, with equality when the column spaces are orthogonal."""
    if trials < 1:
        raise PreconditionError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    rep = TrialReport("theorem2", trials, tolerance=1e-9, seed=seed, params={"rows": list(rows)})
    worst_gap = 0.0
    for b in _chunks(trials):
        dd = int(rng.integers(rows[0], rows[1] + 1))
        na, nb = rng.integers(1, 2 * dd + 3, size=2)
        a = _ball(rng, b, dd, na, alpha)
        bm = _ball(rng, b, dd, nb, alpha)
        rep.record(_nuc(a) + _nuc(bm) - _nuc(np.concatenate([a, bm], axis=2)))
        # orthogonal column spaces: split a random frame between the two blocks
        ra = int(rng.integers(1, dd))
        q = np.linalg.qr(rng.standard_normal((dd, dd)))[0]
        ao = q[:, :ra] @ rng.standard_normal((b, ra, na))
        bo = q[:, ra:] @ rng.standard_normal((b, dd - ra, nb))
        gap = _nuc(ao) + _nuc(bo) - _nuc(np.concatenate([ao, bo], axis=2))
        worst_gap = max(worst_gap, float(np.abs(gap).max()))
    rep.witness_residuals["orthogonal_gap"] = worst_gap
    rep.witness_tolerance = 1e-8
    return rep


def theorem3_witness(alpha, d, k, cols_per_axis=1):
    """Classes on private axis groups that partition the ``d`` rows; source equals target in each class.

    Every column is ``alpha`` times a standard basis vector, so both domain
    matrices have spectral norm ``alpha`` (``cols_per_axis = 1``). Needs ``d >= k``.
    """
    if d < k:
        raise PreconditionError(f"witness needs d >= k, got d={d}, k={k}")
    groups = np.array_split(np.arange(d), k)
    cols, labels, is_target = [], [], []
    for c, axes in enumerate(groups):
        for target in (False, True):
            for ax in axes:
                for _ in range(cols_per_axis):
                    v = np.zeros(d)
                    v[ax] = alpha
                    cols.append(v)
                    labels.append(c)
                    is_target.append(target)
    return PartitionedBatch(np.array(cols).T, np.array(is_target), np.array(labels), k)


def _layout(rng, k, d):
    """Random per-class column counts (at least one per class and domain)."""
    ns = rng.integers(1, d + 2, size=k)
    nt = rng.integers(1, d + 2, size=k)
    return ns, nt


def _draw_domains(rng, b, d, k, ns, nt):
    """Gaussian columns, or (every other chunk) near-witness columns on class subspaces shared by both domains."""
    if rng.random() < 0.5:
        return rng.standard_normal((b, d, int(ns.sum()))), rng.standard_normal((b, d, int(nt.sum())))
    groups = np.array_split(rng.permutation(d), min(k, d))
    q = np.linalg.qr(rng.standard_normal((b, d, d)))[0]
    noise = rng.uniform(0.0, 0.3)
    parts = {False: [], True: []}
    for c in range(k):
        basis = q[:, :, groups[c % len(groups)]]
        for target, n in ((False, ns[c]), (True, nt[c])):
            coef = rng.standard_normal((b, basis.shape[2], n))
            parts[target].append(basis @ coef + noise * rng.standard_normal((b, d, n)))
    return np.concatenate(parts[False], axis=2), np.concatenate(parts[True], axis=2)


def verify_theorem3(trials=10_000, alpha=1.0, d=4, k=2, lambda_grid=DEFAULT_LAMBDA_GRID, seed=0):
    """``L_GO / lambda_DB >= go_lower_bound(lambda, alpha, d, k)`` for every ``lambda`` in the grid.

    Each random batch (all columns labeled, every class in both domains, both
    domain matrices rescaled into the spectral ball) is scored once for
    ``L_DB`` and ``L_TB`` and reused across the grid. The witness from
    :func:`theorem3_witness` must hit the balance-interval bound for
    ``lambda`` in ``(0, 1 + sqrt2]`` and 0 at ``lambda = 0``.
    """
    grid = [float(v) for v in lambda_grid]
    if not grid or any(v < 0 or not math.isfinite(v) for v in grid):
        raise PreconditionError("lambda grid must be non-empty, finite and non-negative")
    if trials < 1:
        raise PreconditionError("trials must be >= 1")
    if k < 2:
        raise PreconditionError("the class-orthogonality term needs k >= 2")
    rng = np.random.default_rng(seed)
    rep = TrialReport("theorem3", trials * len(grid), tolerance=BOUND_TOL, seed=seed,
                      params={"alpha": alpha, "d": d, "k": k, "lambda_grid": grid})
    bounds = np.array([go_lower_bound(lam, alpha, d, k) for lam in grid])
    lam = np.array(grid)
    for b in _chunks(trials):
        ns, nt = _layout(rng, k, d)
        zs, zt = _draw_domains(rng, b, d, k, ns, nt)
        zs *= (alpha * rng.uniform(0.2, 1.0, b) / singular_values_batch(zs)[:, 0])[:, None, None]
        zt *= (alpha * rng.uniform(0.2, 1.0, b) / singular_values_batch(zt)[:, 0])[:, None, None]
        s_cut = np.r_[0, np.cumsum(ns)]
        t_cut = np.r_[0, np.cumsum(nt)]
        tb = np.zeros(b)
        db = -_nuc(np.concatenate([zs, zt], axis=2))
        for c in range(k):
            zsc = zs[:, :, s_cut[c]:s_cut[c + 1]]
            ztc = zt[:, :, t_cut[c]:t_cut[c + 1]]
            whole = _nuc(np.concatenate([zsc, ztc], axis=2))
            tb += _nuc(zsc) + _nuc(ztc) - whole
            db += whole
        value = db[:, None] - lam[None, :] * tb[:, None]
        rep.record(value - bounds[None, :])

    w = theorem3_witness(alpha, d, k)
    for lv in grid:
        if lv == 0.0 or lv <= BALANCE_LIMIT:
            got = loss_go(w, GoConfig(lambda_tb=lv, lambda_db=1.0))
            rep.witness_residuals[f"lambda={lv:g}"] = float(abs(got - go_lower_bound(lv, alpha, d, k)))
    rep.params["witness_loss_tb"] = loss_tb(w)
    rep.params["witness_loss_db"] = loss_db(w)
    return rep


def verify_all(seeds=(0, 1, 2, 3, 4), trials_t12=100_000, trials_t3=10_000,
               lambda_grid=DEFAULT_LAMBDA_GRID, alpha=1.0, d=4, k=2, rank_trials=10_000):
    """Run every harness once per seed; returns a flat list of reports."""
    out = []
    for s in seeds:
        out.append(verify_rank_bounds(rank_trials, seed=s))
        out.append(verify_theorem1(trials_t12, alpha, seed=s))
        out.append(verify_theorem2(trials_t12, seed=s, alpha=alpha))
        out.append(verify_theorem3(trials_t3, alpha, d, k, lambda_grid, seed=s))
    return out
