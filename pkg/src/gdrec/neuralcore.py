"""A small deterministic reverse-mode core in float64 numpy.

Every layer exposes ``forward(x, mode) -> (y, entry)`` and
``backward(entry, dy) -> (dx, grads)``. A :class:`TapeEntry` can be consumed
exactly once. Containers (:class:`Sequential` and the models built in
``recognet``/``dnadecode``) follow the same protocol with a :class:`Tape`.

Inputs and outputs are arrays, or tuples of arrays for multi-input layers
(:class:`Concat`) and stateful ones (:class:`LSTM`).
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import NumericalError, ShapeError, TapeError, TargetError

CHECKPOINT_VERSION = 1


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


class LayerKind(str, enum.Enum):
    DENSE = "DENSE"
    CONV2D = "CONV2D"
    RELU = "RELU"
    SIGMOID = "SIGMOID"
    GLOBAL_AVG_POOL = "GLOBAL_AVG_POOL"
    SE_BLOCK = "SE_BLOCK"
    ECA_BLOCK = "ECA_BLOCK"
    LSTM = "LSTM"
    SOFTMAX = "SOFTMAX"
    CONCAT = "CONCAT"


@dataclass(eq=False)
class TapeEntry:
    layer: Any
    cache: Any
    out_shape: Any = None
    consumed: bool = False


@dataclass(eq=False)
class Tape:
    entries: list = field(default_factory=list)
    consumed: bool = False
    extra: dict = field(default_factory=dict)

    def consume(self):
        if self.consumed:
            raise TapeError("tape already consumed by a backward pass")
        self.consumed = True


def _shape_of(obj):
    if isinstance(obj, tuple):
        return tuple(np.shape(o) for o in obj)
    return np.shape(obj)


class Layer:
    kind: LayerKind

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.init_info: dict[str, str] = {}

    def spec(self) -> dict:
        return {"kind": self.kind.value}

    def parameters(self) -> dict[str, np.ndarray]:
        return dict(self.params)

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        for name, value in params.items():
            if name not in self.params:
                raise KeyError(name)
            if self.params[name].shape != np.shape(value):
                raise ShapeError(f"{name}: shape {np.shape(value)} != {self.params[name].shape}")
            self.params[name] = np.array(value, dtype=np.float64)

    def forward(self, x, mode: str = "train"):
        y, cache = self._forward(x, mode)
        return y, TapeEntry(self, cache, _shape_of(y))

    def backward(self, entry: TapeEntry, dy):
        if entry.consumed:
            raise TapeError(f"{self.kind.value} tape entry already consumed")
        if entry.layer is not self:
            raise TapeError("tape entry belongs to a different layer")
        if _shape_of(dy) != entry.out_shape:
            raise ShapeError(f"upstream gradient shape {_shape_of(dy)} != {entry.out_shape}")
        entry.consumed = True
        return self._backward(entry.cache, dy)

    def _uniform(self, rng, shape, bound, name):
        self.init_info[name] = f"uniform(-{bound:.6g}, {bound:.6g})"
        return rng.uniform(-bound, bound, size=shape)


class Dense(Layer):
    kind = LayerKind.DENSE

    def __init__(self, n_in: int, n_out: int, rng=None, weight=None, bias=None):
        super().__init__()
        if n_in < 1 or n_out < 1:
            raise ShapeError("dense dimensions must be positive")
        self.n_in, self.n_out = n_in, n_out
        rng = rng if rng is not None else make_rng(0)
        bound = 1.0 / np.sqrt(n_in)
        W = self._uniform(rng, (n_in, n_out), bound, "W") if weight is None else weight
        b = self._uniform(rng, (n_out,), bound, "b") if bias is None else bias
        self.params = {"W": np.array(W, dtype=np.float64), "b": np.array(b, dtype=np.float64)}
        if self.params["W"].shape != (n_in, n_out) or self.params["b"].shape != (n_out,):
            raise ShapeError("dense weight/bias shape mismatch")

    def spec(self):
        return {"kind": self.kind.value, "n_in": self.n_in, "n_out": self.n_out}

    def _forward(self, x, mode):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"dense expects last dim {self.n_in}, got {x.shape}")
        return x @ self.params["W"] + self.params["b"], x

    def _backward(self, x, dy):
        x2 = x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        grads = {"W": x2.T @ dy2, "b": dy2.sum(axis=0)}
        return dy @ self.params["W"].T, grads


class ReLU(Layer):
    kind = LayerKind.RELU

    def _forward(self, x, mode):
        x = np.asarray(x, dtype=np.float64)
        mask = x > 0
        return x * mask, mask

    def _backward(self, mask, dy):
        return dy * mask, {}


class Sigmoid(Layer):
    kind = LayerKind.SIGMOID

    def _forward(self, x, mode):
        y = sigmoid(np.asarray(x, dtype=np.float64))
        return y, y

    def _backward(self, y, dy):
        return dy * y * (1.0 - y), {}


class Softmax(Layer):
    """Softmax over the last axis."""

    kind = LayerKind.SOFTMAX

    def _forward(self, x, mode):
        y = softmax(np.asarray(x, dtype=np.float64))
        return y, y

    def _backward(self, y, dy):
        return y * (dy - (dy * y).sum(axis=-1, keepdims=True)), {}


class GlobalAvgPool(Layer):
    """Mean over every axis after the channel axis: (B, C, ...) -> (B, C)."""

    kind = LayerKind.GLOBAL_AVG_POOL

    def _forward(self, x, mode):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim < 3:
            raise ShapeError(f"global average pool needs (B, C, ...) input, got {x.shape}")
        axes = tuple(range(2, x.ndim))
        return x.mean(axis=axes), x.shape

    def _backward(self, shape, dy):
        n = int(np.prod(shape[2:]))
        return np.broadcast_to(dy.reshape(dy.shape + (1,) * (len(shape) - 2)), shape) / n, {}


class Concat(Layer):
    """Concatenate a tuple of inputs along ``axis`` (default: channels)."""

    kind = LayerKind.CONCAT

    def __init__(self, axis: int = 1):
        super().__init__()
        self.axis = axis

    def spec(self):
        return {"kind": self.kind.value, "axis": self.axis}

    def _forward(self, xs, mode):
        xs = [np.asarray(x, dtype=np.float64) for x in xs]
        try:
            y = np.concatenate(xs, axis=self.axis)
        except ValueError as exc:
            raise ShapeError(str(exc)) from None
        return y, [x.shape[self.axis] for x in xs]

    def _backward(self, sizes, dy):
        cuts = np.cumsum(sizes)[:-1]
        return tuple(np.split(dy, cuts, axis=self.axis)), {}


class Conv2D(Layer):
    """Stride-1 convolution with zero "same" padding and an odd square kernel."""

    kind = LayerKind.CONV2D

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, rng=None):
        super().__init__()
        if kernel < 1 or kernel % 2 == 0:
            raise ShapeError("conv kernel must be a positive odd integer")
        self.c_in, self.c_out, self.k = c_in, c_out, kernel
        rng = rng if rng is not None else make_rng(0)
        bound = 1.0 / np.sqrt(c_in * kernel * kernel)
        self.params = {
            "W": self._uniform(rng, (c_out, c_in, kernel, kernel), bound, "W"),
            "b": self._uniform(rng, (c_out,), bound, "b"),
        }

    def spec(self):
        return {"kind": self.kind.value, "c_in": self.c_in, "c_out": self.c_out, "kernel": self.k}

    def _forward(self, x, mode):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"conv expects (B, {self.c_in}, H, W), got {x.shape}")
        B, C, H, W = x.shape
        p = self.k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (self.k, self.k), axis=(2, 3))
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, C * self.k * self.k)
        wf = self.params["W"].reshape(self.c_out, -1)
        y = (cols @ wf.T + self.params["b"]).reshape(B, H, W, self.c_out).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(y), (cols, x.shape)

    def _backward(self, cache, dy):
        cols, (B, C, H, W) = cache
        k, p = self.k, self.k // 2
        dyf = dy.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        grads = {
            "W": (dyf.T @ cols).reshape(self.params["W"].shape),
            "b": dyf.sum(axis=0),
        }
        dcols = (dyf @ self.params["W"].reshape(self.c_out, -1)).reshape(B, H, W, C, k, k)
        dxp = np.zeros((B, C, H + 2 * p, W + 2 * p))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + H, j:j + W] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p:p + H, p:p + W], grads


def _squeeze(x):
    """Channel descriptor: mean over spatial axes, identity for (B, C) input."""
    if x.ndim == 2:
        return x
    return x.mean(axis=tuple(range(2, x.ndim)))


def _expand(s, x):
    return s.reshape(s.shape + (1,) * (x.ndim - 2))


class SEBlock(Layer):
    """Squeeze-and-excitation gate: x * sigmoid(W2 relu(W1 z + b1) + b2)."""

    kind = LayerKind.SE_BLOCK

    def __init__(self, channels: int, reduction: int = 4, rng=None):
        super().__init__()
        if channels < 1 or reduction < 1:
            raise ShapeError("SE channels and reduction must be positive")
        self.channels, self.reduction = channels, reduction
        hidden = max(1, channels // reduction)
        rng = rng if rng is not None else make_rng(0)
        b1, b2 = 1.0 / np.sqrt(channels), 1.0 / np.sqrt(hidden)
        self.params = {
            "W1": self._uniform(rng, (channels, hidden), b1, "W1"),
            "b1": self._uniform(rng, (hidden,), b1, "b1"),
            "W2": self._uniform(rng, (hidden, channels), b2, "W2"),
            "b2": self._uniform(rng, (channels,), b2, "b2"),
        }

    def spec(self):
        return {"kind": self.kind.value, "channels": self.channels, "reduction": self.reduction}

    def _forward(self, x, mode):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim < 2 or x.shape[1] != self.channels:
            raise ShapeError(f"SE expects (B, {self.channels}, ...), got {x.shape}")
        P = self.params
        z = _squeeze(x)
        pre1 = z @ P["W1"] + P["b1"]
        h = np.maximum(pre1, 0.0)
        s = sigmoid(h @ P["W2"] + P["b2"])
        return x * _expand(s, x), (x, z, pre1, h, s)

    def _backward(self, cache, dy):
        x, z, pre1, h, s = cache
        P = self.params
        spatial = tuple(range(2, x.ndim))
        n_sp = int(np.prod(x.shape[2:])) if x.ndim > 2 else 1
        ds = (dy * x).sum(axis=spatial) if spatial else dy * x
        dpre2 = ds * s * (1.0 - s)
        dh = dpre2 @ P["W2"].T
        dpre1 = dh * (pre1 > 0)
        dz = dpre1 @ P["W1"].T
        grads = {"W1": z.T @ dpre1, "b1": dpre1.sum(axis=0), "W2": h.T @ dpre2, "b2": dpre2.sum(axis=0)}
        dx = dy * _expand(s, x) + _expand(dz / n_sp, x)
        return dx, grads


class ECABlock(Layer):
    """Efficient channel attention: 1-D conv of width k over the channel descriptor.

    Zero padding (no wrap-around): the first and last ``k // 2`` channels see
    truncated windows.
    """

    kind = LayerKind.ECA_BLOCK

    def __init__(self, channels: int, kernel: int = 3, rng=None):
        super().__init__()
        if kernel < 1 or kernel % 2 == 0:
            raise ShapeError("ECA kernel must be a positive odd integer")
        self.channels, self.k = channels, kernel
        rng = rng if rng is not None else make_rng(0)
        self.params = {"w": self._uniform(rng, (kernel,), 1.0 / np.sqrt(kernel), "w")}

    def spec(self):
        return {"kind": self.kind.value, "channels": self.channels, "kernel": self.k}

    def _forward(self, x, mode):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim < 2 or x.shape[1] != self.channels:
            raise ShapeError(f"ECA expects (B, {self.channels}, ...), got {x.shape}")
        p, C = self.k // 2, self.channels
        z = _squeeze(x)
        zp = np.pad(z, ((0, 0), (p, p)))
        a = sum(self.params["w"][t] * zp[:, t:t + C] for t in range(self.k))
        s = sigmoid(a)
        return x * _expand(s, x), (x, zp, s)

    def _backward(self, cache, dy):
        x, zp, s = cache
        p, C = self.k // 2, self.channels
        spatial = tuple(range(2, x.ndim))
        n_sp = int(np.prod(x.shape[2:])) if x.ndim > 2 else 1
        ds = (dy * x).sum(axis=spatial) if spatial else dy * x
        da = ds * s * (1.0 - s)
        dw = np.array([(da * zp[:, t:t + C]).sum() for t in range(self.k)])
        dzp = np.zeros_like(zp)
        for t in range(self.k):
            dzp[:, t:t + C] += da * self.params["w"][t]
        dz = dzp[:, p:p + C]
        return dy * _expand(s, x) + _expand(dz / n_sp, x), {"w": dw}


class LSTM(Layer):
    """Single LSTM layer over (B, T, D) input, gates ordered i, f, g, o.

    ``forward(x)`` starts from a zero state and returns the hidden sequence.
    ``forward((x, h0, c0))`` returns ``(hs, hT, cT)``; its backward takes
    ``(dhs, dhT, dcT)`` and returns ``(dx, dh0, dc0)``. The forget-gate bias
    starts at 1.
    """

    kind = LayerKind.LSTM

    def __init__(self, n_in: int, hidden: int, rng=None):
        super().__init__()
        if n_in < 1 or hidden < 1:
            raise ShapeError("LSTM sizes must be positive")
        self.n_in, self.hidden = n_in, hidden
        rng = rng if rng is not None else make_rng(0)
        bound = 1.0 / np.sqrt(hidden)
        b = self._uniform(rng, (4 * hidden,), bound, "b")
        b[hidden:2 * hidden] += 1.0
        self.init_info["b"] += " (+1 on forget gate)"
        self.params = {"W": self._uniform(rng, (n_in + hidden, 4 * hidden), bound, "W"), "b": b}

    def spec(self):
        return {"kind": self.kind.value, "n_in": self.n_in, "hidden": self.hidden}

    def _forward(self, inp, mode):
        stateful = isinstance(inp, tuple)
        if stateful:
            x, h, c = (np.asarray(v, dtype=np.float64) for v in inp)
        else:
            x = np.asarray(inp, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ShapeError(f"LSTM expects (B, T, {self.n_in}), got {x.shape}")
        B, T, _ = x.shape
        H = self.hidden
        if not stateful:
            h = np.zeros((B, H))
            c = np.zeros((B, H))
        elif h.shape != (B, H) or c.shape != (B, H):
            raise ShapeError(f"LSTM state must be ({B}, {H})")
        W, b = self.params["W"], self.params["b"]
        Wx, Wh = W[:self.n_in], W[self.n_in:]
        xw = x @ Wx + b  # (B, T, 4H)
        hs = np.empty((B, T, H))
        steps = []
        for t in range(T):
            a = xw[:, t] + h @ Wh
            i = sigmoid(a[:, :H])
            f = sigmoid(a[:, H:2 * H])
            g = np.tanh(a[:, 2 * H:3 * H])
            o = sigmoid(a[:, 3 * H:])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            hs[:, t] = h
            steps.append((h_prev, c_prev, i, f, g, o, tc))
        out = (hs, h, c) if stateful else hs
        return out, (x, steps, stateful)

    def _backward(self, cache, dout):
        x, steps, stateful = cache
        if stateful:
            dhs, dh, dc = (np.array(v, dtype=np.float64) for v in dout)
        else:
            dhs = dout
            dh = np.zeros((x.shape[0], self.hidden))
            dc = np.zeros_like(dh)
        H = self.hidden
        W = self.params["W"]
        Wx, Wh = W[:self.n_in], W[self.n_in:]
        B, T, _ = x.shape
        da_all = np.empty((B, T, 4 * H))
        dWh = np.zeros_like(Wh)
        for t in range(T - 1, -1, -1):
            h_prev, c_prev, i, f, g, o, tc = steps[t]
            dh = dh + dhs[:, t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            da = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1
            )
            da_all[:, t] = da
            dWh += h_prev.T @ da
            dh = da @ Wh.T
            dc = dc * f
        dx = da_all @ Wx.T
        dWx = x.reshape(-1, self.n_in).T @ da_all.reshape(-1, 4 * H)
        grads = {"W": np.vstack([dWx, dWh]), "b": da_all.sum(axis=(0, 1))}
        if stateful:
            return (dx, dh, dc), grads
        return dx, grads


class Sequential:
    """Chain of single-input layers sharing one :class:`Tape`."""

    def __init__(self, layers):
        self.layers = list(layers)
        self.frozen = False

    def spec(self):
        return [layer.spec() for layer in self.layers]

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            f"{i}.{name}": arr for i, layer in enumerate(self.layers) for name, arr in layer.params.items()
        }

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        for key, value in params.items():
            idx, name = key.split(".", 1)
            self.layers[int(idx)].load_parameters({name: value})

    def forward(self, x, mode: str = "train"):
        tape = Tape()
        for layer in self.layers:
            x, entry = layer.forward(x, mode)
            tape.entries.append(entry)
        return x, tape

    def backward(self, tape: Tape, dy):
        tape.consume()
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            entry = tape.entries[i]
            dy, g = entry.layer.backward(entry, dy)
            for name, arr in g.items():
                grads[f"{i}.{name}"] = arr
        return dy, grads

    def __call__(self, x, mode: str = "eval"):
        return self.forward(x, mode)[0]


def forward(layer, x, mode: str = "train"):
    """Functional alias of ``layer.forward``."""
    return layer.forward(x, mode)


def backward(tape, dy, owner=None):
    """Functional alias: backward through a layer entry or a container tape."""
    if isinstance(tape, TapeEntry):
        return tape.layer.backward(tape, dy)
    if owner is None:
        raise TypeError("container tapes need their owning module")
    return owner.backward(tape, dy)


# --- losses -----------------------------------------------------------------

class LossKind(str, enum.Enum):
    MSE_SUM = "MSE_SUM"
    MSE_MEAN = "MSE_MEAN"
    SOFT_CE = "SOFT_CE"


def loss(kind: LossKind | str, pred, target) -> tuple[float, np.ndarray]:
    """Loss value and gradient with respect to ``pred``.

    MSE_SUM sums squared errors over every entry; MSE_MEAN averages them.
    SOFT_CE treats ``pred`` as logits over the last axis and ``target`` as
    probability vectors, summing over classes and averaging over leading
    (batch) axes.
    """
    kind = LossKind(kind)
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} and target {target.shape} differ")
    if kind is LossKind.MSE_SUM:
        diff = pred - target
        return float((diff * diff).sum()), 2.0 * diff
    if kind is LossKind.MSE_MEAN:
        diff = pred - target
        return float((diff * diff).mean()), 2.0 * diff / diff.size
    sums = target.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-9) or np.any(target < 0):
        raise TargetError("soft cross-entropy targets must be probability vectors")
    lp = log_softmax(pred)
    n_rows = int(np.prod(pred.shape[:-1])) if pred.ndim > 1 else 1
    safe = np.where(target > 0, target * lp, 0.0)
    value = -float(safe.sum()) / n_rows
    grad = (softmax(pred) - target) / n_rows
    return value, grad


# --- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update.

    Parameters without an entry in ``grads`` are left untouched. Returns new
    parameter arrays; the state is updated in place and returned.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
        if np.shape(g) != np.shape(params[name]):
            raise ShapeError(f"gradient shape for {name} does not match parameter")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    out = dict(params)
    for name, g in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(params[name])
            v = np.zeros_like(params[name])
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = params[name] - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out, state


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


# --- gradient checking ------------------------------------------------------

def _flat(obj):
    return list(obj) if isinstance(obj, tuple) else [obj]


def _rel_err(a, n):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(fragment, inputs, eps: float = 1e-5, seed: int = 0, check_inputs: bool = True) -> float:
    """Max relative error between backward() and central differences.

    The scalar probed is ``sum(R * output)`` for a fixed random ``R``.
    ``fragment`` is any layer or container with ``forward``/``backward``/
    ``parameters``; for containers every parameter is perturbed through
    ``load_parameters``.
    """
    rng = make_rng(seed)
    out, tape = fragment.forward(inputs, "train")
    projections = [rng.standard_normal(np.shape(o)) for o in _flat(out)]
    dout = tuple(projections) if isinstance(out, tuple) else projections[0]
    dinputs, grads = fragment.backward(tape, dout)

    def scalar(inp):
        o, _ = fragment.forward(inp, "train")
        return sum(float((r * v).sum()) for r, v in zip(projections, _flat(o)))

    worst = 0.0
    params = fragment.parameters()
    for name, arr in params.items():
        analytic = grads.get(name, np.zeros_like(arr))
        base = arr.copy()
        numeric = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            for sign in (1, -1):
                pert = base.copy()
                pert[idx] += sign * eps
                fragment.load_parameters({name: pert})
                numeric[idx] += sign * scalar(inputs)
            numeric[idx] /= 2 * eps
        fragment.load_parameters({name: base})
        worst = max(worst, float(_rel_err(analytic, numeric).max()))
    if check_inputs:
        ins = _flat(inputs)
        douts = _flat(dinputs)
        for k, (x, dx) in enumerate(zip(ins, douts)):
            x = np.asarray(x)
            if dx is None or not np.issubdtype(x.dtype, np.floating):
                continue
            numeric = np.zeros_like(x)
            for idx in np.ndindex(x.shape):
                for sign in (1, -1):
                    pert = [np.array(v, dtype=np.float64, copy=True) for v in ins]
                    pert[k][idx] += sign * eps
                    arg = tuple(pert) if isinstance(inputs, tuple) else pert[0]
                    numeric[idx] += sign * scalar(arg)
                numeric[idx] /= 2 * eps
            worst = max(worst, float(_rel_err(dx, numeric).max()))
    return worst


# --- checkpoints ------------------------------------------------------------

def save_checkpoint(path, params: dict, meta: dict | None = None) -> None:
    """Write a key -> tensor map as ``.npz`` with a JSON metadata record.

    Arrays keep their shapes and float64 values exactly; ``__meta__`` holds
    ``{"format": "gdrec-checkpoint", "version": 1, ...}``.
    """
    header = {"format": "gdrec-checkpoint", "version": CHECKPOINT_VERSION}
    header.update(meta or {})
    arrays = {k: np.asarray(v) for k, v in params.items()}
    if "__meta__" in arrays:
        raise ValueError("'__meta__' is reserved")
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_checkpoint(path) -> tuple[dict, dict]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format") != "gdrec-checkpoint":
            raise ValueError("not a gdrec checkpoint")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k: data[k].copy() for k in data.files if k != "__meta__"}
    return params, meta
