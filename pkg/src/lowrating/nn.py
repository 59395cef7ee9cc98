"""A small double-precision network kernel with exact backpropagation.

Five layer kinds cover every model in the pipeline:

``conv``       valid, stride-1 correlation of ``size`` filters spanning all
               input rows and ``width`` columns; output is flattened
``dense``      affine map to ``size`` units
``batchnorm``  per-feature normalization with learned scale and shift
``tanh``       elementwise activation
``output``     affine map to ``size`` classes followed by softmax

Parameters are a list with one dict of arrays per layer. ``forward`` never
mutates them; train-mode batch statistics come back in the cache and
:func:`train` folds them into the running averages.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import _accel

MODEL_VERSION = "lowrating-model 1"
KINDS = ("conv", "dense", "batchnorm", "tanh", "output")
TRAINABLE = {"conv": ("W", "b"), "dense": ("W", "b"), "batchnorm": ("gamma", "beta"), "tanh": (), "output": ("W", "b")}


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    size: int = 0
    width: int = 20

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


@dataclass(frozen=True)
class ModelSpec:
    input_shape: tuple[int, ...]  # (rows, width) with a leading conv, else (dim,)
    layers: tuple[LayerSpec, ...]
    feature_index: int
    eps: float = 1e-5
    momentum: float = 0.9

    def __post_init__(self):
        shapes(self)

    @property
    def classes(self) -> int:
        return self.layers[-1].size

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [[l.kind, l.size, l.width] for l in self.layers],
            "feature_index": self.feature_index,
            "eps": self.eps,
            "momentum": self.momentum,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(d["input_shape"]),
            tuple(LayerSpec(k, s, w) for k, s, w in d["layers"]),
            d["feature_index"],
            d["eps"],
            d["momentum"],
        )


def shapes(spec: ModelSpec) -> list[tuple[int, ...]]:
    """Output shape after every layer; raises ShapeError if the chain is invalid."""
    if not spec.layers or spec.layers[-1].kind != "output":
        raise ShapeError("the last layer must be an output layer")
    if sum(l.kind == "output" for l in spec.layers) != 1:
        raise ShapeError("exactly one output layer is allowed")
    if not 0 <= spec.feature_index < len(spec.layers) - 1:
        raise ShapeError("feature layer must be a hidden layer")
    cur = tuple(spec.input_shape)
    out = []
    for k, layer in enumerate(spec.layers):
        if layer.kind == "conv":
            if k != 0:
                raise ShapeError("conv is only allowed as the first layer")
            if len(cur) != 2:
                raise ShapeError("conv input must be (rows, width)")
            rows, w = cur
            if w < layer.width:
                raise ShapeError(f"input width {w} is narrower than the filter width {layer.width}")
            cur = (layer.size * (w - layer.width + 1),)
        elif len(cur) != 1:
            raise ShapeError(f"layer {k} ({layer.kind}) needs a flat input, got {cur}")
        elif layer.kind in ("dense", "output"):
            if layer.size <= 0:
                raise ShapeError(f"layer {k} needs a positive size")
            cur = (layer.size,)
        out.append(cur)
    return out


def init_params(spec: ModelSpec, seed) -> list[dict[str, np.ndarray]]:
    """Uniform fan-in initialization; batchnorm starts as identity."""
    rng = np.random.default_rng(seed)
    params = []
    cur = tuple(spec.input_shape)
    for layer, out_shape in zip(spec.layers, shapes(spec)):
        p: dict[str, np.ndarray] = {}
        if layer.kind == "conv":
            rows = cur[0]
            lim = 1.0 / np.sqrt(rows * layer.width)
            p["W"] = rng.uniform(-lim, lim, (layer.size, rows, layer.width))
            p["b"] = np.zeros(layer.size)
        elif layer.kind in ("dense", "output"):
            lim = 1.0 / np.sqrt(cur[0])
            p["W"] = rng.uniform(-lim, lim, (cur[0], layer.size))
            p["b"] = np.zeros(layer.size)
        elif layer.kind == "batchnorm":
            d = cur[0]
            p["gamma"] = np.ones(d)
            p["beta"] = np.zeros(d)
            p["running_mean"] = np.zeros(d)
            p["running_var"] = np.ones(d)
        params.append(p)
        cur = out_shape
    return params


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ForwardResult:
    logits: np.ndarray
    probs: np.ndarray
    features: np.ndarray
    cache: list = field(repr=False)
    batch_stats: dict = field(repr=False)  # layer index -> (mean, var), train mode only


def _check_input(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    want = tuple(spec.input_shape)
    if x.ndim != len(want) + 1:
        raise ShapeError(f"expected batch of shape (B, {', '.join(map(str, want))}), got {x.shape}")
    if len(want) == 2 and x.shape[1] == want[0] and x.shape[2] < want[1]:
        x = np.concatenate([x, np.zeros((x.shape[0], want[0], want[1] - x.shape[2]))], axis=2)
    if x.shape[1:] != want:
        raise ShapeError(f"expected batch of shape (B, {', '.join(map(str, want))}), got {x.shape}")
    return x


def forward(spec: ModelSpec, params, x, mode: str = "infer") -> ForwardResult:
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    a = _check_input(spec, x)
    cache = []
    stats = {}
    features = None
    logits = None
    for k, (layer, p) in enumerate(zip(spec.layers, params)):
        if layer.kind == "conv":
            out = _accel.conv_forward(a, p["W"], p["b"])
            cache.append((a,))
            a = out.reshape(a.shape[0], -1)
        elif layer.kind in ("dense", "output"):
            cache.append((a,))
            a = a @ p["W"] + p["b"]
            if layer.kind == "output":
                logits = a
        elif layer.kind == "batchnorm":
            if mode == "train":
                mu = a.mean(axis=0)
                var = a.var(axis=0)
                stats[k] = (mu, var)
            else:
                mu, var = p["running_mean"], p["running_var"]
            inv = 1.0 / np.sqrt(var + spec.eps)
            xhat = (a - mu) * inv
            cache.append((xhat, inv))
            a = p["gamma"] * xhat + p["beta"]
        elif layer.kind == "tanh":
            a = np.tanh(a)
            cache.append((a,))
        if k == spec.feature_index:
            features = a
    return ForwardResult(logits, softmax(logits), features, cache, stats)


def cross_entropy(probs: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient with respect to the logits."""
    labels = np.asarray(labels, dtype=np.int64)
    b = probs.shape[0]
    picked = probs[np.arange(b), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-12))))
    grad = probs.copy()
    grad[np.arange(b), labels] -= 1.0
    return loss, grad / b


def backward(spec: ModelSpec, params, cache, dlogits: np.ndarray, want_input: bool = False):
    """Gradients for every trainable parameter; optionally also d(loss)/d(input)."""
    grads: list[dict[str, np.ndarray]] = [dict() for _ in spec.layers]
    g = dlogits
    for k in range(len(spec.layers) - 1, -1, -1):
        layer, p, c = spec.layers[k], params[k], cache[k]
        if layer.kind in ("dense", "output"):
            (a_in,) = c
            grads[k]["W"] = a_in.T @ g
            grads[k]["b"] = g.sum(axis=0)
            if k > 0 or want_input:
                g = g @ p["W"].T
        elif layer.kind == "batchnorm":
            xhat, inv = c
            grads[k]["gamma"] = (g * xhat).sum(axis=0)
            grads[k]["beta"] = g.sum(axis=0)
            dx = g * p["gamma"]
            n = g.shape[0]
            g = inv / n * (n * dx - dx.sum(axis=0) - xhat * (dx * xhat).sum(axis=0))
        elif layer.kind == "tanh":
            (y,) = c
            g = g * (1.0 - y * y)
        elif layer.kind == "conv":
            (a_in,) = c
            F = layer.size
            dout = g.reshape(a_in.shape[0], F, -1)
            dx, dw, db = _accel.conv_backward(a_in, p["W"], dout)
            grads[k]["W"] = dw
            grads[k]["b"] = db
            g = dx
    if want_input:
        return grads, g
    return grads


def with_running_stats(spec: ModelSpec, params, batch_stats: dict):
    """New parameter list with running averages updated from one train step."""
    out = list(params)
    m = spec.momentum
    for k, (mu, var) in batch_stats.items():
        p = dict(out[k])
        p["running_mean"] = m * p["running_mean"] + (1 - m) * mu
        p["running_var"] = m * p["running_var"] + (1 - m) * var
        out[k] = p
    return out


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class Hyper:
    batch_size: int = 128
    epochs: int = 10
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0


@dataclass
class TrainResult:
    params: list
    losses: list[float]


def train(spec: ModelSpec, x, y, hyper: Hyper = Hyper(), params=None, audit=None) -> TrainResult:
    """Minibatch SGD with momentum; reshuffles every epoch from the seed.

    ``audit``, when given, is called with the row indices of every batch.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(x) != len(y):
        raise ShapeError("inputs and labels differ in length")
    if y.min() < 0 or y.max() >= spec.classes:
        raise ValueError(f"labels must lie in 0..{spec.classes - 1}")
    init_seed, shuffle_seed = np.random.SeedSequence(hyper.seed).spawn(2)
    if params is None:
        params = init_params(spec, init_seed)
    rng = np.random.default_rng(shuffle_seed)
    velocity = [{k: np.zeros_like(v) for k, v in p.items() if k in TRAINABLE[l.kind]} for l, p in zip(spec.layers, params)]
    losses = []
    for _ in range(hyper.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            if audit is not None:
                audit(idx)
            res = forward(spec, params, x[idx], mode="train")
            loss, dlogits = cross_entropy(res.probs, y[idx])
            total += loss * len(idx)
            grads = backward(spec, params, res.cache, dlogits)
            params = with_running_stats(spec, params, res.batch_stats)
            new = []
            for p, g, v in zip(params, grads, velocity):
                p = dict(p)
                for name, gv in g.items():
                    v[name] = hyper.momentum * v[name] - hyper.lr * gv
                    p[name] = p[name] + v[name]
                new.append(p)
            params = new
        losses.append(total / len(x))
    return TrainResult(params, losses)


def accuracy(spec: ModelSpec, params, x, y) -> float:
    pred = forward(spec, params, x).probs.argmax(axis=1)
    return float(np.mean(pred == np.asarray(y)))


# ---------------------------------------------------------------- gradient check


def loss_of(spec, params, x, y) -> float:
    return cross_entropy(forward(spec, params, x, mode="train").probs, y)[0]


def relative_error(a, n, floor: float = 1e-6) -> np.ndarray:
    a = np.asarray(a)
    n = np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradient_check(spec: ModelSpec, params, x, y, h: float = 1e-5, max_params: int = 10_000, seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    Every parameter is checked when the model has at most ``max_params`` of
    them; otherwise a seeded sample of that many entries is drawn, spread over
    tensors in proportion to their size.
    """
    res = forward(spec, params, x, mode="train")
    _, dlogits = cross_entropy(res.probs, y)
    grads = backward(spec, params, res.cache, dlogits)
    entries = [(k, name) for k, l in enumerate(spec.layers) for name in TRAINABLE[l.kind]]
    total = sum(params[k][name].size for k, name in entries)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, name in entries:
        arr = params[k][name]
        if total <= max_params:
            picks = np.arange(arr.size)
        else:
            m = max(1, int(round(max_params * arr.size / total)))
            picks = rng.choice(arr.size, size=min(m, arr.size), replace=False)
        analytic = grads[k][name].ravel()[picks]
        numeric = np.empty(len(picks))
        for j, flat in enumerate(picks):
            idx = np.unravel_index(flat, arr.shape)
            plus = _perturbed(params, k, name, idx, h)
            minus = _perturbed(params, k, name, idx, -h)
            numeric[j] = (loss_of(spec, plus, x, y) - loss_of(spec, minus, x, y)) / (2 * h)
        worst = max(worst, float(relative_error(analytic, numeric).max(initial=0.0)))
    return worst


def _perturbed(params, k, name, idx, delta):
    out = list(params)
    p = dict(out[k])
    arr = p[name].copy()
    arr[idx] += delta
    p[name] = arr
    out[k] = p
    return out


# ---------------------------------------------------------------- models on disk


@dataclass
class Model:
    """A trained network plus the input standardization it was trained with."""

    spec: ModelSpec
    params: list
    seed: int = 0
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def prepare(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.input_mean is not None:
            x = (x - self.input_mean) / self.input_scale
        return x

    def run(self, x) -> ForwardResult:
        return forward(self.spec, self.params, self.prepare(x), mode="infer")


def _arr(a: np.ndarray):
    return {"shape": list(a.shape), "values": [float(v) for v in a.ravel()]}


def _unarr(d) -> np.ndarray:
    return np.array(d["values"], dtype=np.float64).reshape(d["shape"])


def model_to_text(model: Model) -> str:
    doc = {
        "spec": model.spec.to_dict(),
        "seed": model.seed,
        "params": [{k: _arr(v) for k, v in sorted(p.items())} for p in model.params],
        "input_mean": None if model.input_mean is None else _arr(model.input_mean),
        "input_scale": None if model.input_scale is None else _arr(model.input_scale),
        "meta": model.meta,
    }
    # json renders floats with repr(), which round-trips exactly
    return MODEL_VERSION + "\n" + json.dumps(doc, sort_keys=True) + "\n"


def model_from_text(text: str) -> Model:
    head, _, body = text.partition("\n")
    if head.strip() != MODEL_VERSION:
        raise ValueError(f"not a '{MODEL_VERSION}' file")
    doc = json.loads(body)
    return Model(
        ModelSpec.from_dict(doc["spec"]),
        [{k: _unarr(v) for k, v in p.items()} for p in doc["params"]],
        doc["seed"],
        None if doc["input_mean"] is None else _unarr(doc["input_mean"]),
        None if doc["input_scale"] is None else _unarr(doc["input_scale"]),
        doc.get("meta", {}),
    )


# ---------------------------------------------------------------- architectures


def exec_spec(n_types: int, classes: int = 2, hidden=(1000, 1000), feature: int = 50, filters: int = 10, rows: int = 3, width: int = 20) -> ModelSpec:
    """Conv over a rows x types matrix, dense stack, feature layer, softmax."""
    layers = [LayerSpec("conv", filters, width), LayerSpec("batchnorm"), LayerSpec("tanh")]
    for h in hidden:
        layers += [LayerSpec("dense", h), LayerSpec("batchnorm"), LayerSpec("tanh")]
    layers += [LayerSpec("dense", feature), LayerSpec("batchnorm"), LayerSpec("tanh")]
    feat = len(layers) - 1
    layers.append(LayerSpec("output", classes))
    return ModelSpec((rows, max(n_types, width)), tuple(layers), feat)


def ui_spec(n_slots: int, classes: int = 2, feature: int = 50, filters: int = 10, width: int = 20) -> ModelSpec:
    return exec_spec(n_slots, classes, hidden=(), feature=feature, filters=filters, rows=2, width=width)


def bow_dense_spec(n_types: int, classes: int = 2, hidden=(1000, 1000), feature: int = 50, first: int = 1000) -> ModelSpec:
    """Frequency-only input; the conv layer is replaced by a dense layer."""
    layers = [LayerSpec("dense", first), LayerSpec("batchnorm"), LayerSpec("tanh")]
    for h in hidden:
        layers += [LayerSpec("dense", h), LayerSpec("batchnorm"), LayerSpec("tanh")]
    layers += [LayerSpec("dense", feature), LayerSpec("batchnorm"), LayerSpec("tanh")]
    feat = len(layers) - 1
    layers.append(LayerSpec("output", classes))
    return ModelSpec((n_types,), tuple(layers), feat)


def bow_conv_spec(n_types: int, classes: int = 2, **kw) -> ModelSpec:
    return exec_spec(n_types, classes, rows=1, **kw)


def fusion_spec(in_dim: int = 100, hidden=(100, 20), classes: int = 2) -> ModelSpec:
    layers = []
    for h in hidden:
        layers += [LayerSpec("dense", h), LayerSpec("batchnorm"), LayerSpec("tanh")]
    feat = len(layers) - 1
    layers.append(LayerSpec("output", classes))
    return ModelSpec((in_dim,), tuple(layers), feat)
