"""Dense and recurrent classifiers in plain numpy, with Adam and a gradient checker.

Parameters travel as one flat float64 vector plus a shape table so that
federated averaging is a single weighted sum.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ArgumentError, CapabilityError, SchemaError
from .signal import N_CLASSES

HIDDEN_ACTIVATIONS = ("relu", "tanh", "selu")
LSTM_ACTIVATIONS = ("none", "relu", "tanh")
OUTPUT_ACTIVATIONS = ("softmax", "sigmoid")

_SELU_SCALE = 1.0507009873554805
_SELU_ALPHA = 1.6732632423543772


# --- configs ------------------------------------------------------------------

@dataclass(frozen=True)
class DnnConfig:
    input_dim: int = 120
    hidden_layers: int = 3
    hidden_units: int = 500
    activation: str = "relu"
    output_activation: str = "softmax"
    n_classes: int = N_CLASSES

    arch = "DNN"

    def __post_init__(self) -> None:
        if self.hidden_layers < 1 or self.hidden_units < 1 or self.input_dim < 1 or self.n_classes < 2:
            raise ArgumentError(f"invalid DNN shape {self}")
        if self.activation not in HIDDEN_ACTIVATIONS:
            raise ArgumentError(f"hidden activation must be one of {HIDDEN_ACTIVATIONS}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ArgumentError(f"output activation must be one of {OUTPUT_ACTIVATIONS}")

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        dims = [self.input_dim] + [self.hidden_units] * self.hidden_layers
        out = []
        for i in range(self.hidden_layers):
            out += [(f"dense{i}.W", (dims[i], dims[i + 1])), (f"dense{i}.b", (dims[i + 1],))]
        out += [("out.W", (dims[-1], self.n_classes)), ("out.b", (self.n_classes,))]
        return out


@dataclass(frozen=True)
class LstmConfig:
    """Features are read as ``input_dim // step_dim`` steps of ``step_dim`` values."""

    input_dim: int = 120
    units: int = 27
    activation: str = "none"
    output_activation: str = "softmax"
    step_dim: int = 12
    n_classes: int = N_CLASSES

    arch = "LSTM"

    def __post_init__(self) -> None:
        if not 1 <= self.units <= self.n_classes:
            raise ArgumentError(f"LSTM units must be in [1, {self.n_classes}]")
        if self.step_dim < 1 or self.input_dim < self.step_dim or self.input_dim % self.step_dim:
            raise ArgumentError(f"input_dim {self.input_dim} is not a multiple of step_dim {self.step_dim}")
        if self.activation not in LSTM_ACTIVATIONS:
            raise ArgumentError(f"LSTM activation must be one of {LSTM_ACTIVATIONS}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ArgumentError(f"output activation must be one of {OUTPUT_ACTIVATIONS}")

    @property
    def steps(self) -> int:
        return self.input_dim // self.step_dim

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        u = self.units
        return [("lstm.W", (self.step_dim, 4 * u)), ("lstm.U", (u, 4 * u)), ("lstm.b", (4 * u,)),
                ("out.W", (u, self.n_classes)), ("out.b", (self.n_classes,))]


ModelConfig = Union[DnnConfig, LstmConfig]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ArgumentError(f"invalid training config {self}")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=int(seed))


def make_config(arch: str, **kw) -> ModelConfig:
    arch = arch.upper()
    if arch == "DNN":
        return DnnConfig(**kw)
    if arch == "LSTM":
        return LstmConfig(**kw)
    raise ArgumentError(f"unknown architecture {arch!r}")


# --- parameters ---------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Flat weight vector plus ``(name, shape)`` table, in layout order."""

    flat: np.ndarray
    shapes: tuple[tuple[str, tuple[int, ...]], ...]
    arch: str
    input_dim: int
    output_dim: int = N_CLASSES

    def __post_init__(self) -> None:
        flat = np.array(self.flat, dtype="<f8", copy=True)
        if flat.ndim != 1 or flat.size != sum(int(np.prod(s)) for _, s in self.shapes):
            raise SchemaError("flat length does not match the shape table")
        if not np.all(np.isfinite(flat)):
            raise SchemaError("parameters must be finite")
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)
        object.__setattr__(self, "shapes", tuple((n, tuple(int(d) for d in s)) for n, s in self.shapes))

    @property
    def offsets(self) -> dict[str, tuple[int, tuple[int, ...]]]:
        out, off = {}, 0
        for name, shape in self.shapes:
            out[name] = (off, shape)
            off += int(np.prod(shape))
        return out

    def blocks(self) -> dict[str, np.ndarray]:
        return unflatten(self.flat, self.shapes)

    def block(self, name: str) -> np.ndarray:
        return self.blocks()[name]

    def with_flat(self, flat: np.ndarray) -> "ModelParams":
        return ModelParams(flat, self.shapes, self.arch, self.input_dim, self.output_dim)

    def compatible(self, other: "ModelParams") -> bool:
        return self.shapes == other.shapes and self.arch == other.arch

    def digest(self) -> str:
        return hashlib.sha256(self.flat.tobytes()).hexdigest()[:16]

    def shape_table(self) -> dict:
        return {"schema_version": 1, "arch": self.arch, "input_dim": self.input_dim,
                "output_dim": self.output_dim,
                "blocks": [{"name": n, "offset": o, "shape": list(s)}
                           for n, (o, s) in self.offsets.items()]}

    def save(self, prefix: str | Path) -> tuple[Path, Path]:
        """Write ``<prefix>.bin`` (little-endian float64) and ``<prefix>.json``."""
        prefix = Path(prefix)
        blob, table = prefix.with_suffix(".bin"), prefix.with_suffix(".json")
        blob.write_bytes(self.flat.astype("<f8").tobytes())
        table.write_text(json.dumps(self.shape_table(), indent=1))
        return blob, table

    @classmethod
    def load(cls, prefix: str | Path) -> "ModelParams":
        prefix = Path(prefix)
        table = json.loads(prefix.with_suffix(".json").read_text())
        flat = np.frombuffer(prefix.with_suffix(".bin").read_bytes(), dtype="<f8")
        shapes = tuple((b["name"], tuple(b["shape"])) for b in table["blocks"])
        return cls(flat, shapes, table["arch"], table["input_dim"], table["output_dim"])


def flatten(blocks: dict[str, np.ndarray], shapes) -> np.ndarray:
    return np.concatenate([np.asarray(blocks[n], dtype=np.float64).ravel() for n, _ in shapes])


def unflatten(flat: np.ndarray, shapes) -> dict[str, np.ndarray]:
    out, off = {}, 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        out[name] = flat[off:off + size].reshape(shape)
        off += size
    return out


def _limit(kind: str, fan_in: int, fan_out: int) -> float:
    if kind == "he":
        return np.sqrt(6.0 / fan_in)
    if kind == "lecun":
        return np.sqrt(3.0 / fan_in)
    return np.sqrt(6.0 / (fan_in + fan_out))


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """He-uniform for ReLU layers, Glorot-uniform for recurrent and output layers.

    Biases start at zero except the LSTM forget gate, which starts at 1.
    """
    rng = np.random.default_rng(seed)
    blocks = {}
    hidden_init = {"relu": "he", "selu": "lecun", "tanh": "glorot"}
    for name, shape in cfg.layout():
        if name.endswith(".b"):
            b = np.zeros(shape)
            if name == "lstm.b":
                u = shape[0] // 4
                b[u:2 * u] = 1.0
            blocks[name] = b
            continue
        fan_in, fan_out = shape
        if name.startswith("dense"):
            kind = hidden_init[cfg.activation]
        elif name == "lstm.U":
            fan_in, fan_out = shape[0], shape[1] // 4
            kind = "glorot"
        elif name == "lstm.W":
            fan_out = shape[1] // 4
            kind = "glorot"
        else:
            kind = "glorot"
        lim = _limit(kind, fan_in, fan_out)
        blocks[name] = rng.uniform(-lim, lim, size=shape)
    shapes = tuple(cfg.layout())
    return ModelParams(flatten(blocks, shapes), shapes, cfg.arch, cfg.input_dim, cfg.n_classes)


def zeros_like(cfg: ModelConfig) -> ModelParams:
    shapes = tuple(cfg.layout())
    size = sum(int(np.prod(s)) for _, s in shapes)
    return ModelParams(np.zeros(size), shapes, cfg.arch, cfg.input_dim, cfg.n_classes)


# --- activations --------------------------------------------------------------

def _act(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "selu":
        return _SELU_SCALE * np.where(z > 0, z, _SELU_ALPHA * np.expm1(np.minimum(z, 0.0)))
    return z


def _act_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation at ``z`` given its output ``a``."""
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "selu":
        return np.where(z > 0, _SELU_SCALE, a + _SELU_SCALE * _SELU_ALPHA)
    return np.ones_like(z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


# --- forward / backward -------------------------------------------------------

def _check_input(params: ModelParams, cfg: ModelConfig, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != cfg.input_dim:
        raise SchemaError(f"expected {cfg.input_dim} input columns, got shape {X.shape}")
    if params.shapes != tuple(cfg.layout()):
        raise SchemaError("parameters do not match the model config")
    return X


def _dnn_logits(W, cfg: DnnConfig, X, keep: bool):
    zs, acts = [], [X]
    a = X
    for i in range(cfg.hidden_layers):
        z = a @ W[f"dense{i}.W"] + W[f"dense{i}.b"]
        a = _act(cfg.activation, z)
        if keep:
            zs.append(z)
            acts.append(a)
    return a @ W["out.W"] + W["out.b"], (zs, acts)


def _lstm_logits(W, cfg: LstmConfig, X, keep: bool):
    B, u = X.shape[0], cfg.units
    seq = X.reshape(B, cfg.steps, cfg.step_dim)
    h = np.zeros((B, u))
    c = np.zeros((B, u))
    cache = []
    for t in range(cfg.steps):
        z = seq[:, t] @ W["lstm.W"] + h @ W["lstm.U"] + W["lstm.b"]
        i = _sigmoid(z[:, :u])
        f = _sigmoid(z[:, u:2 * u])
        zg = z[:, 2 * u:3 * u]
        g = _act(cfg.activation, zg)
        o = _sigmoid(z[:, 3 * u:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        ac = _act(cfg.activation, c)
        h = o * ac
        if keep:
            cache.append((seq[:, t], h_prev, c_prev, i, f, zg, g, o, c, ac))
    return h @ W["out.W"] + W["out.b"], (cache, h)


def _logits(params: ModelParams, cfg: ModelConfig, X, keep: bool = False):
    return _logits_blocks(params.blocks(), cfg, X, keep)


def _logits_blocks(W, cfg: ModelConfig, X, keep: bool = False):
    if isinstance(cfg, DnnConfig):
        return _dnn_logits(W, cfg, X, keep)
    return _lstm_logits(W, cfg, X, keep)


def forward(params: ModelParams, cfg: ModelConfig, X) -> np.ndarray:
    """Class probabilities, one row per input row.

    A sigmoid output head is normalised across classes so rows still sum to 1.
    """
    X = _check_input(params, cfg, X)
    z, _ = _logits(params, cfg, X)
    if cfg.output_activation == "sigmoid":
        s = _sigmoid(z)
        return s / s.sum(axis=1, keepdims=True)
    return np.exp(_log_softmax(z))


def predict(params: ModelParams, cfg: ModelConfig, X) -> np.ndarray:
    """Argmax class; ties resolve to the lowest index."""
    return np.argmax(forward(params, cfg, X), axis=1)


def _check_labels(y, n: int, n_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64).ravel()
    if y.size != n:
        raise SchemaError("label count does not match input rows")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise SchemaError(f"labels must lie in 0..{n_classes - 1}")
    return y


def _head_loss(cfg: ModelConfig, z: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    B = z.shape[0]
    if cfg.output_activation == "sigmoid":
        Y = np.zeros_like(z)
        Y[np.arange(B), y] = 1.0
        loss = float(np.sum(np.logaddexp(0.0, z) - Y * z) / B)
        return loss, (_sigmoid(z) - Y) / B
    logp = _log_softmax(z)
    loss = float(-logp[np.arange(B), y].sum() / B)
    dz = np.exp(logp)
    dz[np.arange(B), y] -= 1.0
    return loss, dz / B


def loss(params: ModelParams, cfg: ModelConfig, X, y) -> float:
    X = _check_input(params, cfg, X)
    y = _check_labels(y, X.shape[0], cfg.n_classes)
    z, _ = _logits(params, cfg, X)
    return _head_loss(cfg, z, y)[0]


def loss_and_grad(params: ModelParams, cfg: ModelConfig, X, y) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient as a flat vector in layout order."""
    X = _check_input(params, cfg, X)
    y = _check_labels(y, X.shape[0], cfg.n_classes)
    return _loss_and_grad(params.blocks(), params.shapes, params.flat.size, cfg, X, y)


def _loss_and_grad(W, shapes, size, cfg, X, y):
    grad = np.zeros(size)
    G = unflatten(grad, shapes)  # views into ``grad``
    if isinstance(cfg, DnnConfig):
        z, (zs, acts) = _dnn_logits(W, cfg, X, keep=True)
        val, dz = _head_loss(cfg, z, y)
        G["out.W"][:] = acts[-1].T @ dz
        G["out.b"][:] = dz.sum(axis=0)
        da = dz @ W["out.W"].T
        for i in range(cfg.hidden_layers - 1, -1, -1):
            dzi = da * _act_grad(cfg.activation, zs[i], acts[i + 1])
            G[f"dense{i}.W"][:] = acts[i].T @ dzi
            G[f"dense{i}.b"][:] = dzi.sum(axis=0)
            if i:
                da = dzi @ W[f"dense{i}.W"].T
        return val, grad

    u = cfg.units
    z, (cache, h_last) = _lstm_logits(W, cfg, X, keep=True)
    val, dz = _head_loss(cfg, z, y)
    G["out.W"][:] = h_last.T @ dz
    G["out.b"][:] = dz.sum(axis=0)
    dh = dz @ W["out.W"].T
    dc = np.zeros_like(dh)
    dW, dU, db = G["lstm.W"], G["lstm.U"], G["lstm.b"]
    for x_t, h_prev, c_prev, i, f, zg, g, o, c, ac in reversed(cache):
        do = dh * ac
        dc = dc + dh * o * _act_grad(cfg.activation, c, ac)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dzt = np.concatenate([di * i * (1.0 - i), df * f * (1.0 - f),
                              dg * _act_grad(cfg.activation, zg, g), do * o * (1.0 - o)], axis=1)
        dW += x_t.T @ dzt
        dU += h_prev.T @ dzt
        db += dzt.sum(axis=0)
        dh = dzt @ W["lstm.U"].T
        dc = dc * f
    return val, grad


# --- gradient check -----------------------------------------------------------

@dataclass(frozen=True)
class GradCheckResult:
    """Per-block maximum errors between analytic and central-difference gradients.

    ``component`` is ``max |g - fd| / (|g| + 1e-8)`` over checked entries;
    ``block`` scales the largest absolute error by the block's largest
    analytic magnitude instead.
    """

    component: dict[str, float]
    block: dict[str, float]
    checked: dict[str, int]

    @property
    def max_component(self) -> float:
        return max(self.component.values())

    @property
    def max_block(self) -> float:
        return max(self.block.values())


def gradient_check(params: ModelParams, cfg: ModelConfig, X, y, step: float = 1e-5,
                   per_block: int | None = 40, seed: int = 0) -> GradCheckResult:
    """Compare ``loss_and_grad`` with central differences on sampled entries.

    ``per_block=None`` checks every entry.
    """
    _, g = loss_and_grad(params, cfg, X, y)
    rng = np.random.default_rng(seed)
    base = params.flat.copy()
    comp, blk, counts = {}, {}, {}
    for name, (off, shape) in params.offsets.items():
        size = int(np.prod(shape))
        idx = np.arange(size) if per_block is None or per_block >= size else \
            np.sort(rng.choice(size, per_block, replace=False))
        fd = np.empty(idx.size)
        for j, k in enumerate(off + idx):
            w = base.copy()
            w[k] += step
            lp = loss(params.with_flat(w), cfg, X, y)
            w[k] = base[k] - step
            lm = loss(params.with_flat(w), cfg, X, y)
            fd[j] = (lp - lm) / (2.0 * step)
        ga = g[off + idx]
        err = np.abs(ga - fd)
        comp[name] = float(np.max(err / (np.abs(ga) + 1e-8)))
        blk[name] = float(err.max() / max(float(np.abs(ga).max()), 1e-8))
        counts[name] = int(idx.size)
    return GradCheckResult(comp, blk, counts)


# --- training -----------------------------------------------------------------

def train_local(params: ModelParams, cfg: ModelConfig, tcfg: TrainConfig, X, y
                ) -> tuple[ModelParams, list[float]]:
    """``tcfg.epochs`` passes of mini-batch Adam starting from ``params``.

    Optimizer state starts fresh on every call.  The shuffle schedule comes
    from ``tcfg.seed`` alone.  Returns the new params and the full-data loss
    after each epoch.
    """
    X = _check_input(params, cfg, X)
    y = _check_labels(y, X.shape[0], cfg.n_classes)
    n = X.shape[0]
    if n == 0:
        raise CapabilityError("cannot train on an empty dataset")
    rng = np.random.default_rng(tcfg.seed)
    w = params.flat.copy()
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    t = 0
    history = []
    for _ in range(tcfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, tcfg.batch_size):
            b = perm[start:start + tcfg.batch_size]
            _, g = _loss_and_grad(unflatten(w, params.shapes), params.shapes, w.size, cfg, X[b], y[b])
            t += 1
            m = tcfg.beta1 * m + (1.0 - tcfg.beta1) * g
            v = tcfg.beta2 * v + (1.0 - tcfg.beta2) * (g * g)
            m_hat = m / (1.0 - tcfg.beta1 ** t)
            v_hat = v / (1.0 - tcfg.beta2 ** t)
            w = w - tcfg.lr * m_hat / (np.sqrt(v_hat) + tcfg.eps)
        z, _ = _logits_blocks(unflatten(w, params.shapes), cfg, X)
        history.append(_head_loss(cfg, z, y)[0])
    return params.with_flat(w), history


def write_loss_history(history, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss\n")
        for i, val in enumerate(history, 1):
            fh.write(f"{i},{val!r}\n")
