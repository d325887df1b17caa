"""Two-stage training: a source-supervised warm-up with domain-level alignment, then
pseudo-labeled class-wise geometry learning.

Training functions take a :class:`~goalgeom.data.TrainingView`, which has no
target ground truth. Target accuracy during training is reported only through
an optional ``monitor`` callable built outside, from the full bundle.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from goalgeom import model as mdl
from goalgeom.data import BatchSpec, DatasetBundle, assemble_batch, epoch_batches
from goalgeom.matrixcore import spectral_norm
from goalgeom.objectives import (
    GoConfig,
    PartitionedBatch,
    domain_tb_value_and_grad,
    go_lower_bound,
    go_value_and_grad,
    normalize_columns,
    normalize_columns_vjp,
    tb_upper_bound,
)

__all__ = [
    "RunReport",
    "TrainConfig",
    "TrainingAborted",
    "assign_pseudo_labels",
    "evaluate",
    "goal_objective",
    "goal_stage",
    "make_monitor",
    "predict",
    "train",
    "warm_up_stage",
]

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    """Training stopped on a non-finite loss or an unusable pseudo-label selection."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


@dataclass(frozen=True)
class TrainConfig:
    t_warm: int = 100
    t_adapt: int = 400
    lr: float = 5e-3
    lambda_tb: float = 1.0
    lambda_db: float = 1.0
    lambda_t: float = 0.1
    tau: float = 0.8
    batch_mode: str = "full"
    batch_per_class: int = 32
    refresh_every: int = 1
    min_tb_cols: int = 2
    embed_dim: int = 6
    unit_embeddings: bool = True
    hidden: tuple = (32,)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.t_warm < 0 or self.t_adapt < 0:
            raise ValueError("epoch counts must be >= 0")
        if min(self.lambda_tb, self.lambda_db, self.lambda_t) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lr < 0 or self.refresh_every < 1 or self.embed_dim < 1:
            raise ValueError("lr >= 0, refresh_every >= 1 and embed_dim >= 1 are required")
        BatchSpec(self.batch_mode, self.batch_per_class)
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown training config keys: {unknown}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @property
    def go(self):
        return GoConfig(lambda_tb=self.lambda_tb, lambda_db=self.lambda_db)

    @property
    def batch_spec(self):
        return BatchSpec(self.batch_mode, self.batch_per_class)


@dataclass
class RunReport:
    config: dict
    history: list = field(default_factory=list)
    checkpoint: str = None

    def to_dict(self):
        return {"config": self.config, "history": self.history, "checkpoint": self.checkpoint}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        return cls(config=d["config"], history=d["history"], checkpoint=d.get("checkpoint"))

    def last(self, stage=None):
        rows = [r for r in self.history if stage is None or r["stage"] == stage]
        return rows[-1] if rows else None


def assign_pseudo_labels(probs, tau):
    """Argmax labels (ties go to the lowest class) and the mask ``max prob > tau``."""
    probs = np.asarray(probs, dtype=np.float64)
    return np.argmax(probs, axis=0), probs.max(axis=0) > tau


def predict(params, x):
    return np.argmax(mdl.forward(params, x).probs, axis=0)


def evaluate(params, features, true_labels):
    """Fraction of columns whose argmax prediction equals the label."""
    true_labels = np.asarray(true_labels)
    if true_labels.size != np.asarray(features).shape[1]:
        raise ValueError("labels must align with feature columns")
    if true_labels.size == 0:
        return 0.0
    return float(np.mean(predict(params, features) == true_labels))


def make_monitor(bundle):
    """Per-epoch evaluator closing over target ground truth; ``None`` if there is none."""
    if bundle.y_target_true is None:
        return None
    truth = bundle.y_target_true

    def monitor(target_pred, mask):
        out = {"target_acc": float(np.mean(target_pred == truth))}
        if mask is not None:
            out["selection_acc"] = float(np.mean(target_pred[mask] == truth[mask])) if mask.any() else 0.0
        return out

    return monitor


def _as_view(data):
    return data.training_view() if isinstance(data, DatasetBundle) else data


def _check_finite(row, stage, epoch):
    bad = [k for k, v in row.items() if isinstance(v, float) and not math.isfinite(v)]
    if bad:
        raise TrainingAborted(f"non-finite {bad} in {stage} epoch {epoch}", snapshot=dict(row))


def _alpha(z, is_target):
    return max(spectral_norm(z[:, ~is_target]), spectral_norm(z[:, is_target]) if is_target.any() else 0.0)


def _geometry_view(z, cfg):
    """Embedding the geometric terms are evaluated on (unit columns unless disabled)."""
    if cfg.unit_embeddings:
        return normalize_columns(z)
    return z, None


def _pull_back(z, norms, grad):
    return grad if norms is None else normalize_columns_vjp(z, norms, grad)


def warm_up_stage(params, data, cfg, report=None, monitor=None, opt=None):
    """``t_warm`` epochs of source cross-entropy, domain-level equivalence and source-only orthogonality.

    Per epoch the minimized objective is ``CE_source - lambda_tb * TB_global +
    lambda_db * DB_source``. Returns ``(params, optimizer_state)``.
    """
    view = _as_view(data)
    opt = opt or mdl.OptimizerState(lr=cfg.lr)
    ns = view.x_source.shape[1]
    x = np.concatenate([view.x_source, view.x_target], axis=1)
    is_target = np.r_[np.zeros(ns, bool), np.ones(view.x_target.shape[1], bool)]
    src = np.arange(ns)
    tgt = np.arange(ns, x.shape[1])
    y_onehot = mdl.one_hot(view.y_source, view.k)
    go = cfg.go
    for epoch in range(cfg.t_warm):
        trace = mdl.forward(params, x)
        z, norms = _geometry_view(trace.z, cfg)
        ce = mdl.loss_source_ce(trace, y_onehot, src)
        ent = mdl.loss_target_entropy(trace, tgt)
        tb, tb_grad = domain_tb_value_and_grad(z, is_target, go.rel_tol)
        src_batch = PartitionedBatch(z[:, src], np.zeros(ns, bool), view.y_source, view.k)
        terms = go_value_and_grad(src_batch, GoConfig(0.0, go.lambda_db, rel_tol=go.rel_tol), tb_classes=())
        go_grad = -go.lambda_tb * tb_grad
        go_grad[:, src] += terms.grad
        go_grad = _pull_back(z, norms, go_grad)
        alpha = _alpha(z, is_target)
        row = {
            "stage": "warm", "epoch": epoch,
            "loss_ce_source": ce, "loss_entropy_target": ent,
            "loss_tb": tb, "loss_db": terms.loss_db,
            "loss_go": go.lambda_db * terms.loss_db - go.lambda_tb * tb,
            "objective": ce + go.lambda_db * terms.loss_db - go.lambda_tb * tb,
            "alpha": alpha,
            "tb_bound_slack": tb_upper_bound(alpha, z.shape[0]) - tb if alpha > 0 else 0.0,
        }
        if monitor is not None:
            row.update(monitor(np.argmax(trace.probs[:, tgt], axis=0), None))
        _check_finite(row, "warm", epoch)
        if report is not None:
            report.history.append(row)
        grads = mdl.backward(params, trace, y_onehot, src, tgt, go_grad, 0.0)
        params, opt = mdl.adam_step(params, grads, opt)
    return params, opt


def _goal_batches(view, labels, mask, cfg, rng):
    if cfg.batch_mode == "full":
        return [assemble_batch(view, labels, mask, cfg.batch_spec)]
    return list(epoch_batches(view, labels, mask, cfg.batch_spec, rng))


@dataclass
class GoalEval:
    """Value and parameter gradients of the adaptation objective on one batch."""

    value: float
    ce: float
    entropy: float
    terms: object
    grads: mdl.MlpParams
    z: np.ndarray
    tb_classes: tuple


def goal_objective(params, raw_batch, cfg, tb_classes=None):
    """``CE + lambda_t * entropy + loss_go`` on a batch of raw features, with gradients.

    ``raw_batch`` is a :class:`PartitionedBatch` whose ``z`` holds input
    features; the geometric terms see the (unit-column) embedding. Classes
    with fewer than ``min_tb_cols`` columns in a domain are left out of the
    equivalence term unless ``tb_classes`` is given.
    """
    trace = mdl.forward(params, raw_batch.z)
    z, norms = _geometry_view(trace.z, cfg)
    batch = raw_batch.with_z(z)
    src = batch.source_idx
    tgt = batch.target_idx
    y_onehot = mdl.one_hot(batch.labels[src], batch.k)
    if tb_classes is None:
        tb_classes = batch.complete_classes(cfg.min_tb_cols)
    go = cfg.go
    terms = go_value_and_grad(batch, go, tb_classes=tb_classes)
    ce = mdl.loss_source_ce(trace, y_onehot, src)
    ent = mdl.loss_target_entropy(trace, tgt)
    geometric = go.lambda_tb > 0 or go.lambda_db > 0
    go_grad = _pull_back(z, norms, terms.grad) if geometric else None
    grads = mdl.backward(params, trace, y_onehot, src, tgt, go_grad, cfg.lambda_t)
    value = ce + cfg.lambda_t * ent + terms.loss_go
    return GoalEval(value, ce, ent, terms, grads, z, tuple(tb_classes))


def goal_stage(params, data, cfg, report=None, monitor=None, opt=None):
    """``t_adapt`` epochs minimizing ``CE + lambda_t * entropy + loss_go`` on pseudo-labeled batches.

    Pseudo labels are refreshed every ``refresh_every`` epochs from the current
    model. Classes with fewer than ``min_tb_cols`` columns in either domain are
    left out of the equivalence term for that epoch. Returns ``(params, optimizer_state)``.
    """
    view = _as_view(data)
    opt = opt or mdl.OptimizerState(lr=cfg.lr)
    go = cfg.go
    rng = np.random.default_rng(cfg.seed + 1)
    k = view.k
    labels = mask = None
    geometric = go.lambda_tb > 0 or go.lambda_db > 0
    for epoch in range(cfg.t_adapt):
        if epoch % cfg.refresh_every == 0:
            probs_t = mdl.forward(params, view.x_target).probs
            labels, mask = assign_pseudo_labels(probs_t, cfg.tau)
            if geometric and not mask.any():
                raise TrainingAborted(
                    f"no target sample has confidence above tau={cfg.tau} at goal epoch {epoch}; lower tau",
                    snapshot={"epoch": epoch, "max_confidence": float(probs_t.max())})
        sums = dict(ce=0.0, ent=0.0, tb=0.0, db=0.0, go=0.0, alpha=0.0, slack_tb=math.inf, slack_go=math.inf)
        skipped = set()
        for raw in _goal_batches(view, labels, mask, cfg, rng):
            ev = goal_objective(params, raw, cfg)
            z, terms = ev.z, ev.terms
            ce, ent, grads = ev.ce, ev.entropy, ev.grads
            skipped.update(set(range(k)) - set(ev.tb_classes))
            alpha = _alpha(z, raw.is_target)
            sums["ce"] += ce
            sums["ent"] += ent
            sums["tb"] += terms.loss_tb
            sums["db"] += terms.loss_db
            sums["go"] += terms.loss_go
            sums["alpha"] = max(sums["alpha"], alpha)
            if alpha > 0:
                sums["slack_tb"] = min(sums["slack_tb"], k * tb_upper_bound(alpha, z.shape[0]) - terms.loss_tb)
                if go.lambda_db > 0:
                    bound = go_lower_bound(go.ratio, alpha, z.shape[0], k)
                    sums["slack_go"] = min(sums["slack_go"], terms.loss_go / go.lambda_db - bound)
            params, opt = mdl.adam_step(params, grads, opt)
        if skipped:
            log.debug("goal epoch %d: classes %s skipped in the equivalence term", epoch, sorted(skipped))
        row = {
            "stage": "goal", "epoch": epoch,
            "loss_ce_source": sums["ce"], "loss_entropy_target": sums["ent"],
            "loss_tb": sums["tb"], "loss_db": sums["db"], "loss_go": sums["go"],
            "objective": sums["ce"] + cfg.lambda_t * sums["ent"] + sums["go"],
            "alpha": sums["alpha"],
            "tb_bound_slack": sums["slack_tb"] if math.isfinite(sums["slack_tb"]) else 0.0,
            "selection_rate": float(mask.mean()),
            "tb_classes_skipped": sorted(skipped),
        }
        if go.lambda_db > 0 and math.isfinite(sums["slack_go"]):
            row["go_bound_slack"] = sums["slack_go"]
        if monitor is not None:
            row.update(monitor(labels, mask))
        _check_finite(row, "goal", epoch)
        if report is not None:
            report.history.append(row)
    return params, opt


def train(data, cfg, monitor=None, params=None):
    """Warm-up followed by the GOAL stage. Returns ``(params, RunReport)``.

    ``data`` may be a :class:`DatasetBundle` (its target labels are stripped
    before training) or a :class:`TrainingView`; pass ``monitor`` (see
    :func:`make_monitor`) to log target accuracy per epoch.
    """
    view = _as_view(data)
    if params is None:
        params = mdl.init_params(view.ambient_dim, cfg.embed_dim, view.k, cfg.hidden, seed=cfg.seed)
    report = RunReport(config=cfg.to_dict())
    try:
        params, opt = warm_up_stage(params, view, cfg, report, monitor)
        params, _ = goal_stage(params, view, cfg, report, monitor, opt=mdl.OptimizerState(lr=cfg.lr))
    except TrainingAborted as exc:
        exc.snapshot.setdefault("completed_epochs", len(report.history))
        raise
    return params, report
