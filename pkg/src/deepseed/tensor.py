"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the handful of primitives needed by GRU layers, layer normalization,
linear layers and the clustering losses are provided.  Broadcasting is
limited to adding a row vector to every row of a matrix.

Usage::

    w = Tensor(np.zeros(3), requires_grad=True)
    with Tape() as tape:
        loss = total(sigmoid(w))
    tape.backward(loss)
    w.grad  # -> [0.25, 0.25, 0.25]
"""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

TENSOR_FORMAT = "deepseed-tensors/1"

_state = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes do not fit a primitive's signature."""

    def __init__(self, primitive: str, *shapes: tuple[int, ...], detail: str = ""):
        dims = " x ".join(str(tuple(s)) for s in shapes)
        msg = f"{primitive}: incompatible shapes {dims}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.primitive = primitive
        self.shapes = shapes


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, other)
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, -other)
        return sub(self, other)

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("op", "out", "inputs", "backward")

    def __init__(self, op: str, out: Tensor, inputs: tuple[Tensor, ...],
                 backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitive applications, replayed in reverse by backward().

    A tape is bound to the thread that entered it; tapes on different
    threads never share state.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._prev: Tape | None = None

    def __enter__(self) -> "Tape":
        self._prev = getattr(_state, "tape", None)
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = self._prev
        self._prev = None

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def ops(self) -> list[str]:
        return [n.op for n in self.nodes]

    def backward(self, loss: Tensor, seed: float = 1.0) -> list[str]:
        """Accumulate d(seed*loss)/d(leaf) into every reachable leaf's ``grad``.

        Returns the primitive names in the order they were visited.
        """
        if loss.data.size != 1 or loss.data.ndim > 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.full(loss.shape, seed)}
        refs: dict[int, Tensor] = {id(loss): loss}
        visited = []
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            visited.append(node.op)
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    refs[key] = inp
        # whatever is left belongs to leaves (tensors not produced on this tape)
        for key, g in grads.items():
            t = refs[key]
            t.grad = g.copy() if t.grad is None else t.grad + g
        return visited


def current_tape() -> Tape | None:
    return getattr(_state, "tape", None)


def _emit(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = needs
    out.name = None
    tape = current_tape()
    if needs and tape is not None:
        tape.nodes.append(_Node(op, out, inputs, backward))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- primitives ---------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    A, B = a.data, b.data
    return _emit("matmul", A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def _check_add(op: str, a: Tensor, b: Tensor) -> bool:
    """True when b is a row vector broadcast over the rows of a."""
    if a.shape == b.shape:
        return False
    if a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        return True
    raise ShapeError(op, a.shape, b.shape, detail="only row-vector bias broadcasting")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    row = _check_add("add", a, b)
    if row:
        return _emit("add", a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    row = _check_add("sub", a, b)
    if row:
        return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g.sum(axis=0)))
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)
    A, B = a.data, b.data
    return _emit("mul", A * B, (a, b), lambda g: (g * B, g * A))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _emit("add_scalar", a.data + float(c), (a,), lambda g: (g,))


def _expit(x: np.ndarray) -> np.ndarray:
    # tanh form: overflow-free and much faster than exp-based variants on small arrays
    return 0.5 * np.tanh(0.5 * x) + 0.5


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    s = _expit(a.data)
    return _emit("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.data)
    return _emit("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = tuple(_as_tensor(p) for p in parts)
    ref = parts[0].data
    ax = axis % ref.ndim
    for p in parts[1:]:
        if p.data.ndim != ref.ndim or any(
            p.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ShapeError("concat", *(q.shape for q in parts))
    sizes = [p.shape[ax] for p in parts]
    bounds = np.cumsum(sizes)[:-1]
    return _emit(
        "concat",
        np.concatenate([p.data for p in parts], axis=ax),
        parts,
        lambda g: tuple(np.split(g, bounds, axis=ax)),
    )


def take(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``[start, stop)`` along the last axis."""
    n = a.shape[-1]
    if not 0 <= start < stop <= n:
        raise ShapeError("slice", a.shape, detail=f"range [{start}, {stop}) out of bounds")
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[..., start:stop] = g
        return (out,)

    return _emit("slice", a.data[..., start:stop], (a,), back)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.shape, detail="expects a matrix")
    return _emit("transpose", a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.shape
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", orig, tuple(shape)) from None
    return _emit("reshape", data, (a,), lambda g: (g.reshape(orig),))


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return _emit("sum", np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.data.size
    if n == 0:
        raise ShapeError("mean", shape, detail="empty tensor")
    return _emit("mean", np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def sqnorm(a: Tensor, axis: int | None = None) -> Tensor:
    """Sum of squares over all entries, or along ``axis`` (keeping the others)."""
    x = a.data
    if axis is None:
        return _emit("sqnorm", np.asarray((x * x).sum()), (a,), lambda g: (2.0 * float(g) * x,))
    out = (x * x).sum(axis=axis)
    return _emit("sqnorm", out, (a,), lambda g: (2.0 * np.expand_dims(g, axis) * x,))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row of ``x`` to zero mean / unit variance, then apply gain and bias."""
    if x.data.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    X = x.data
    H = X.shape[1]
    mu = X.mean(axis=1, keepdims=True)
    xc = X - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    G = gain.data

    def back(g):
        dxhat = g * G
        dx = (inv / H) * (H * dxhat - dxhat.sum(axis=1, keepdims=True)
                          - xhat * (dxhat * xhat).sum(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _emit("layer_norm", xhat * G + bias.data, (x, gain, bias), back)


def gru_cell(xp: Tensor, h: Tensor, u_ur: Tensor, u_c: Tensor) -> Tensor:
    """Fused GRU update.

    ``xp`` (B, 3H) holds the input projections plus biases for the update,
    reset and candidate gates; ``u_ur`` (H, 2H) and ``u_c`` (H, H) are the
    transposed recurrent weights.  Computes::

        u = sigmoid(xp_u + h @ U_u'),  r = sigmoid(xp_r + h @ U_r')
        c = tanh(xp_c + (r * h) @ U_c'),  h_new = (1 - u) * h + u * c
    """
    B, H = h.shape if h.data.ndim == 2 else (0, 0)
    if (h.data.ndim != 2 or xp.shape != (B, 3 * H) or u_ur.shape != (H, 2 * H)
            or u_c.shape != (H, H)):
        raise ShapeError("gru_cell", xp.shape, h.shape, u_ur.shape, u_c.shape)
    X, Hp, Wur, Wc = xp.data, h.data, u_ur.data, u_c.data
    gates = _expit(X[:, :2 * H] + Hp @ Wur)
    u, r = gates[:, :H], gates[:, H:]
    hr = r * Hp
    c = np.tanh(X[:, 2 * H:] + hr @ Wc)
    out = Hp + u * (c - Hp)

    def back(g):
        dpre_c = g * u * (1.0 - c * c)
        dhr = dpre_c @ Wc.T
        dpre_ur = np.concatenate([g * (c - Hp) * u * (1.0 - u), dhr * Hp * r * (1.0 - r)], axis=1)
        dh = g * (1.0 - u) + dhr * r + dpre_ur @ Wur.T
        return np.concatenate([dpre_ur, dpre_c], axis=1), dh, Hp.T @ dpre_ur, hr.T @ dpre_c

    return _emit("gru_cell", out, (xp, h, u_ur, u_c), back)


# -- serialization ------------------------------------------------------------

def tensors_to_dict(tensors: Mapping[str, np.ndarray | Tensor], meta: Mapping | None = None) -> dict:
    out = {"format": TENSOR_FORMAT, "tensors": {}, "meta": dict(meta or {})}
    for name in sorted(tensors):
        arr = tensors[name]
        arr = arr.data if isinstance(arr, Tensor) else np.asarray(arr, dtype=np.float64)
        out["tensors"][name] = {"shape": list(arr.shape), "values": arr.ravel().tolist()}
    return out


def tensors_from_dict(doc: Mapping) -> tuple[dict[str, np.ndarray], dict]:
    if doc.get("format") != TENSOR_FORMAT:
        raise ValueError(f"unsupported tensor format {doc.get('format')!r}, expected {TENSOR_FORMAT}")
    arrays = {}
    for name, entry in doc["tensors"].items():
        values = np.asarray(entry["values"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if int(np.prod(shape)) != values.size:
            raise ValueError(f"tensor {name!r}: {values.size} values do not fill shape {shape}")
        arrays[name] = values.reshape(shape)
    return arrays, dict(doc.get("meta", {}))


def save_tensors(path: str | Path, tensors: Mapping[str, np.ndarray | Tensor], meta: Mapping | None = None) -> None:
    Path(path).write_text(json.dumps(tensors_to_dict(tensors, meta), sort_keys=True))


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    return tensors_from_dict(json.loads(Path(path).read_text()))


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
