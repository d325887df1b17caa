"""Random small configurations and a central-difference check of the adaptation objective."""

import numpy as np

from goalgeom import model as mdl
from goalgeom.objectives import PartitionedBatch, normalize_columns
from goalgeom.trainer import TrainConfig, goal_objective

GAP = 1e-3
KINK = 1e-4


def random_case(rng):
    """Parameters, a raw-feature batch and a config with D <= 10, d <= 4, k <= 3, n <= 20."""
    D = int(rng.integers(2, 11))
    d = int(rng.integers(1, 5))
    k = int(rng.integers(2, 4))
    hidden = (int(rng.integers(3, 8)),)
    n = int(rng.integers(3 * k, 21))
    is_target = np.zeros(n, bool)
    is_target[rng.permutation(n)[: n // 2]] = True
    labels = rng.integers(0, k, size=n)
    src = np.flatnonzero(~is_target)
    labels[src[:k]] = np.arange(k)  # every class present in the source
    tgt = np.flatnonzero(is_target)
    labels[tgt[rng.random(tgt.size) < 0.25]] = -1
    batch = PartitionedBatch(rng.standard_normal((D, n)), is_target, labels, k)
    cfg = TrainConfig(
        lambda_tb=float(rng.uniform(0, 3)), lambda_db=float(rng.uniform(0, 2)),
        lambda_t=float(rng.uniform(0, 1)), embed_dim=d, hidden=hidden, min_tb_cols=1,
    )
    params = mdl.init_params(D, d, k, hidden, seed=int(rng.integers(1 << 30)))
    return params, batch, cfg


def _blocks(batch, tb_classes):
    out = [batch.z]
    for i in range(batch.k):
        idx = batch.class_idx(i)
        if idx.size:
            out.append(batch.z[:, idx])
        if i in tb_classes:
            out.append(batch.z[:, batch.class_domain_idx(i, False)])
            out.append(batch.z[:, batch.class_domain_idx(i, True)])
    return out


def well_separated(params, batch, cfg):
    """True when no singular value of a loss sub-matrix is near another or near 0, and no ReLU is near its kink."""
    trace = mdl.forward(params, batch.z)
    if any(np.abs(p).min() < KINK for p in trace.pre[:-1]):
        return False
    z = normalize_columns(trace.z)[0] if cfg.unit_embeddings else trace.z
    geo = batch.with_z(z)
    for m in _blocks(geo, geo.complete_classes(cfg.min_tb_cols)):
        s = np.linalg.svd(m, compute_uv=False)
        if s.min() < GAP or (s.size > 1 and np.min(-np.diff(s)) < GAP):
            return False
    return True


def flat(params):
    return np.concatenate([a.ravel() for a in params.named().values()])


def unflat(template, vec):
    out, pos = {}, 0
    for name, a in template.named().items():
        out[name] = vec[pos:pos + a.size].reshape(a.shape)
        pos += a.size
    return mdl.MlpParams.from_named(out)


def fd_gradient(params, batch, cfg, step=1e-5):
    theta = flat(params)
    tb = goal_objective(params, batch, cfg).tb_classes
    g = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = step
        hi = goal_objective(unflat(params, theta + e), batch, cfg, tb_classes=tb).value
        lo = goal_objective(unflat(params, theta - e), batch, cfg, tb_classes=tb).value
        g[j] = (hi - lo) / (2 * step)
    return g


def relative_error(params, batch, cfg):
    analytic = flat(goal_objective(params, batch, cfg).grads)
    numeric = fd_gradient(params, batch, cfg)
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-12)


def accepted_cases(count, seed=0):
    """The first ``count`` well-separated random cases and how many were rejected on the way."""
    rng = np.random.default_rng(seed)
    cases, rejected = [], 0
    while len(cases) < count:
        case = random_case(rng)
        if well_separated(*case):
            cases.append(case)
        else:
            rejected += 1
    return cases, rejected
