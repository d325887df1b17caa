"""Small MLP embedding ``g`` plus softmax classifier ``h``, trained with manual backprop and Adam.

Everything is column-major: inputs are ``D x n``, embeddings ``d x n``,
probabilities ``k x n``.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from goalgeom.matrixcore import DimensionError, as_mat

__all__ = [
    "CHECKPOINT_FORMAT",
    "CHECKPOINT_VERSION",
    "ForwardTrace",
    "MlpParams",
    "OptimizerState",
    "adam_step",
    "backward",
    "forward",
    "init_params",
    "load_checkpoint",
    "loss_source_ce",
    "loss_target_entropy",
    "one_hot",
    "save_checkpoint",
]

LOG_FLOOR = 1e-12
CHECKPOINT_FORMAT = "goalgeom-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class MlpParams:
    """Weights of ``g`` (ReLU between layers, linear output) and the classifier ``h``."""

    g_weights: list
    g_biases: list
    h_weight: np.ndarray
    h_bias: np.ndarray

    def __post_init__(self):
        if len(self.g_weights) != len(self.g_biases) or not self.g_weights:
            raise DimensionError("g needs matching, non-empty weight and bias lists")
        prev = self.g_weights[0].shape[1]
        for w, b in zip(self.g_weights, self.g_biases):
            if w.shape[1] != prev or b.shape != (w.shape[0],):
                raise DimensionError("g layer shapes do not chain")
            prev = w.shape[0]
        if self.h_weight.shape[1] != prev or self.h_bias.shape != (self.h_weight.shape[0],):
            raise DimensionError("classifier shape does not match embedding size")

    @property
    def input_dim(self):
        return self.g_weights[0].shape[1]

    @property
    def embed_dim(self):
        return self.g_weights[-1].shape[0]

    @property
    def n_classes(self):
        return self.h_weight.shape[0]

    def named(self):
        """Ordered ``{name: array}`` view (arrays are shared, not copied)."""
        out = {}
        for i, (w, b) in enumerate(zip(self.g_weights, self.g_biases)):
            out[f"g{i}.weight"] = w
            out[f"g{i}.bias"] = b
        out["h.weight"] = self.h_weight
        out["h.bias"] = self.h_bias
        return out

    @classmethod
    def from_named(cls, tensors):
        n_g = sum(1 for name in tensors if name.endswith(".weight") and name.startswith("g"))
        return cls(
            g_weights=[np.asarray(tensors[f"g{i}.weight"], dtype=np.float64) for i in range(n_g)],
            g_biases=[np.asarray(tensors[f"g{i}.bias"], dtype=np.float64) for i in range(n_g)],
            h_weight=np.asarray(tensors["h.weight"], dtype=np.float64),
            h_bias=np.asarray(tensors["h.bias"], dtype=np.float64),
        )

    def copy(self):
        return MlpParams.from_named({k: v.copy() for k, v in self.named().items()})

    def zeros_like(self):
        return MlpParams.from_named({k: np.zeros_like(v) for k, v in self.named().items()})


def init_params(input_dim, embed_dim, n_classes, hidden=(32,), seed=0):
    """Fan-in scaled uniform initialization, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden, embed_dim]
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(rng.uniform(-bound, bound, size=fan_out))
    bound = 1.0 / np.sqrt(embed_dim)
    hw = rng.uniform(-bound, bound, size=(n_classes, embed_dim))
    hb = rng.uniform(-bound, bound, size=n_classes)
    return MlpParams(ws, bs, hw, hb)


@dataclass
class ForwardTrace:
    inputs: list
    pre: list
    z: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def softmax(logits):
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def forward(params, x):
    """Run ``g`` then ``h`` on the columns of ``x`` and keep what backprop needs."""
    x = as_mat(x, "x")
    if x.shape[0] != params.input_dim:
        raise DimensionError(f"x has {x.shape[0]} rows, model expects {params.input_dim}")
    inputs, pre = [], []
    a = x
    last = len(params.g_weights) - 1
    for i, (w, b) in enumerate(zip(params.g_weights, params.g_biases)):
        inputs.append(a)
        h = w @ a + b[:, None]
        pre.append(h)
        a = h if i == last else np.maximum(h, 0.0)
    logits = params.h_weight @ a + params.h_bias[:, None]
    return ForwardTrace(inputs=inputs, pre=pre, z=a, logits=logits, probs=softmax(logits))


def one_hot(labels, k):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((k, labels.size))
    out[labels, np.arange(labels.size)] = 1.0
    return out


def _cols(trace, idx):
    return np.arange(trace.probs.shape[1]) if idx is None else np.asarray(idx, dtype=np.int64)


def loss_source_ce(trace, y_source, source_idx=None):
    """Summed cross-entropy of one-hot ``y_source`` against the source columns."""
    cols = _cols(trace, source_idx)
    y = np.asarray(y_source, dtype=np.float64)
    p = trace.probs[:, cols]
    if y.shape != p.shape:
        raise DimensionError(f"labels {y.shape} do not align with source predictions {p.shape}")
    return float(-(y * np.log(np.maximum(p, LOG_FLOOR))).sum())


def loss_target_entropy(trace, target_idx=None):
    """Summed prediction entropy over the target columns."""
    p = trace.probs[:, _cols(trace, target_idx)]
    return float(-(p * np.log(np.maximum(p, LOG_FLOOR))).sum())


def backward(params, trace, y_source, source_idx, target_idx, go_grad=None, lambda_t=0.0):
    """Gradients of ``CE(source) + lambda_t * entropy(target)``, plus ``go_grad`` on the embedding.

    ``go_grad`` is an upstream gradient on ``trace.z`` (``d x n``). It flows into
    the parameters of ``g`` only; the classifier never sees it.
    """
    n = trace.probs.shape[1]
    p = trace.probs
    dlogits = np.zeros_like(p)
    if source_idx is not None and len(source_idx):
        src = np.asarray(source_idx, dtype=np.int64)
        y = np.asarray(y_source, dtype=np.float64)
        if y.shape != (p.shape[0], src.size):
            raise DimensionError("source labels do not align with source columns")
        dlogits[:, src] += p[:, src] - y
    if lambda_t and target_idx is not None and len(target_idx):
        tgt = np.asarray(target_idx, dtype=np.int64)
        pt = p[:, tgt]
        logp = np.log(np.maximum(pt, LOG_FLOOR))
        ent = -(pt * logp).sum(axis=0, keepdims=True)
        dlogits[:, tgt] += lambda_t * (-pt * (logp + ent))

    grads = params.zeros_like()
    grads.h_weight[...] = dlogits @ trace.z.T
    grads.h_bias[...] = dlogits.sum(axis=1)
    dz = params.h_weight.T @ dlogits
    if go_grad is not None:
        go_grad = np.asarray(go_grad, dtype=np.float64)
        if go_grad.shape != (params.embed_dim, n):
            raise DimensionError(f"go_grad shape {go_grad.shape} does not match embedding {(params.embed_dim, n)}")
        dz = dz + go_grad

    upstream = dz
    last = len(params.g_weights) - 1
    for i in range(last, -1, -1):
        if i != last:
            upstream = upstream * (trace.pre[i] > 0.0)
        grads.g_weights[i][...] = upstream @ trace.inputs[i].T
        grads.g_biases[i][...] = upstream.sum(axis=1)
        if i:
            upstream = params.g_weights[i].T @ upstream
    return grads


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One bias-corrected Adam update. Returns ``(new_params, state)``; ``state`` is advanced in place."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    new = {}
    gnamed = grads.named()
    for name, p in params.named().items():
        g = gnamed[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        new[name] = p - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return MlpParams.from_named(new), state


def save_checkpoint(params, path, meta=None):
    """Write named tensors as versioned JSON (floats round-trip exactly)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "tensors": {name: {"shape": list(a.shape), "data": a.ravel().tolist()}
                    for name, a in params.named().items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    tensors = {}
    for name, t in doc["tensors"].items():
        a = np.asarray(t["data"], dtype=np.float64)
        tensors[name] = a.reshape(t["shape"])
    return MlpParams.from_named(tensors)
