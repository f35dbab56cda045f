"""Minimal trainable-network substrate.

A small reverse-mode tape over float64 numpy arrays provides exactly the
operations the four networks need (dense products, gating, a bi-directional
GRU, stable losses) plus AdamW with a linear learning-rate decay, central
finite-difference gradient verification, and a deterministic checkpoint
format.

Checkpoint byte layout (version 1), all integers little-endian:

    bytes 0..3    magic b"RGCK"
    bytes 4..7    uint32 format version
    bytes 8..15   uint64 header length in bytes
    header        UTF-8 JSON: {"arrays": [{"name", "dtype", "shape"}...],
                               "meta": {...}, "version": 1}
                  (keys sorted, no whitespace)
    payload       raw C-order array bytes, concatenated in header order

Supported dtypes are "<f8", "<i8" and "|b1". Saving and re-loading is
bit-identical, and the container embeds no timestamps, so equal inputs
produce equal files.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RGCK"
CHECKPOINT_VERSION = 1
_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8"), "|b1": np.dtype("|b1")}


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Node of the reverse-mode tape; wraps a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad: bool = False, parents=(), vjps=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjps = vjps

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            upstream = node.grad
            for parent, vjp in zip(node._parents, node._vjps):
                if not parent.requires_grad:
                    continue
                contribution = vjp(upstream)
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += contribution
            if node._parents:
                node.grad = None  # free interior grads, keep leaves

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf with a persistent gradient accumulator and Adam state.

    ``trainable_mask`` (optional boolean array, broadcastable to the value
    shape) freezes entries where it is False: their gradients are discarded
    and neither the update nor the weight decay touches them.
    """

    __slots__ = ("name", "m", "v", "trainable_mask")

    def __init__(self, name: str, data, trainable_mask: np.ndarray | None = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.trainable_mask = None if trainable_mask is None else np.asarray(trainable_mask, bool)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data, parents, vjps) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=tuple(parents), vjps=tuple(vjps))
    return Tensor(data)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _make(a.data + b.data, (a, b),
                 (lambda g: _unbroadcast(g, a.data.shape),
                  lambda g: _unbroadcast(g, b.data.shape)))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _make(a.data - b.data, (a, b),
                 (lambda g: _unbroadcast(g, a.data.shape),
                  lambda g: -_unbroadcast(g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _make(a.data * b.data, (a, b),
                 (lambda g: _unbroadcast(g * b.data, a.data.shape),
                  lambda g: _unbroadcast(g * a.data, b.data.shape)))


def scale(a, s: float) -> Tensor:
    a = _wrap(a)
    return _make(a.data * s, (a,), (lambda g: g * s,))


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _make(a.data @ b.data, (a, b),
                 (lambda g: g @ b.data.T, lambda g: a.data.T @ g))


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (a,), (lambda g: g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = np.tanh(a.data)
    return _make(out, (a,), (lambda g: g * (1.0 - out * out),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        return vjp

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), tuple(make_vjp(i) for i in range(len(tensors))))


def slice_cols(a, lo: int, hi: int) -> Tensor:
    a = _wrap(a)

    def vjp(g):
        full = np.zeros_like(a.data)
        full[..., lo:hi] = g
        return full

    return _make(a.data[..., lo:hi], (a,), (vjp,))


def gather_rows(table, ids) -> Tensor:
    """Row lookup (embedding); backward scatter-adds into the table."""
    table = _wrap(table)
    ids = np.asarray(ids, dtype=np.int64)

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return full

    return _make(table.data[ids], (table,), (vjp,))


def sum_all(a) -> Tensor:
    a = _wrap(a)
    return _make(np.asarray(a.data.sum()), (a,),
                 (lambda g: np.broadcast_to(g, a.data.shape).copy(),))


def mean_all(a) -> Tensor:
    a = _wrap(a)
    n = a.data.size
    return _make(np.asarray(a.data.mean()), (a,),
                 (lambda g: np.broadcast_to(g / n, a.data.shape).copy(),))


def l2_normalize(a, eps: float = 0.0) -> Tensor:
    """Row-wise L2 normalization (1-D input treated as a single row).

    With eps == 0 a zero-norm row raises; a positive eps floors the norm
    instead, which keeps training alive through degenerate matches.
    """
    a = _wrap(a)
    vector_in = a.data.ndim == 1
    x = a.data.reshape(1, -1) if vector_in else a.data
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    if eps <= 0.0:
        if np.any(norms == 0.0):
            raise ValueError("zero norm")
        floored = norms
    else:
        floored = np.maximum(norms, eps)
    y = x / floored

    def vjp(g):
        g2 = g.reshape(1, -1) if vector_in else g
        dot = (g2 * y).sum(axis=1, keepdims=True)
        # rows at the eps floor are a plain constant division
        at_floor = norms < floored
        dx = np.where(at_floor, g2 / floored, (g2 - y * dot) / floored)
        return dx.reshape(a.data.shape)

    return _make(y.reshape(a.data.shape), (a,), (vjp,))


def softmax_rows(a) -> Tensor:
    a = _wrap(a)
    x = a.data if a.data.ndim == 2 else a.data.reshape(1, -1)
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    y = y.reshape(a.data.shape)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return y * (g - dot)

    return _make(y, (a,), (vjp,))


def cross_entropy(logits, class_ids) -> Tensor:
    """Mean softmax cross-entropy over rows, in log-sum-exp form."""
    logits = _wrap(logits)
    ids = np.asarray(class_ids, dtype=np.int64)
    x = logits.data
    if x.ndim != 2 or ids.shape != (x.shape[0],):
        raise ValueError(f"shape mismatch: logits {x.shape} vs ids {ids.shape}")
    rows = np.arange(x.shape[0])
    mx = x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(x - mx).sum(axis=1)) + mx[:, 0]
    losses = lse - x[rows, ids]

    def vjp(g):
        soft = np.exp(x - mx)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[rows, ids] -= 1.0
        return g * soft / x.shape[0]

    return _make(np.asarray(losses.mean()), (logits,), (vjp,))


def bce_with_logits(logits, targets, mask=None, weights=None) -> Tensor:
    """Weighted mean per-logit binary cross-entropy in numerically stable form.

    ``mask`` (optional boolean array) selects which elements contribute;
    ``weights`` (optional non-negative array) reweights elements, e.g. for
    class balancing, with the loss normalized by the total weight. A zero
    weight excludes an element exactly like a false mask entry.
    """
    logits = _wrap(logits)
    t = np.asarray(targets, dtype=np.float64)
    x = logits.data
    if x.shape != t.shape:
        raise ValueError(f"shape mismatch: logits {x.shape} vs targets {t.shape}")
    w = np.ones_like(x)
    if mask is not None:
        w = w * np.asarray(mask, dtype=np.float64)
    if weights is not None:
        w = w * np.asarray(weights, dtype=np.float64)
    total_weight = w.sum()
    if total_weight <= 0.0:
        raise ValueError("empty mask in bce_with_logits")
    elem = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    loss = (elem * w).sum() / total_weight

    def vjp(g):
        sig = np.empty_like(x)
        pos = x >= 0
        sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ez = np.exp(x[~pos])
        sig[~pos] = ez / (1.0 + ez)
        return g * w * (sig - t) / total_weight

    return _make(np.asarray(loss), (logits,), (vjp,))


def dense(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# ---------------------------------------------------------------------------
# GRU


class GruCell:
    """Standard GRU cell (update/reset/candidate gating, fused gate weights)."""

    def __init__(self, name: str, input_dim: int, hidden: int, rng: np.random.Generator):
        k = 1.0 / math.sqrt(hidden)
        self.hidden = hidden
        self.w = Parameter(f"{name}.w", rng.uniform(-k, k, (input_dim, 3 * hidden)))
        self.u = Parameter(f"{name}.u", rng.uniform(-k, k, (hidden, 3 * hidden)))
        self.b = Parameter(f"{name}.b", np.zeros(3 * hidden))

    def parameters(self) -> list[Parameter]:
        return [self.w, self.u, self.b]

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        hid = self.hidden
        gx = add(matmul(x, self.w), self.b)
        gh = matmul(h, self.u)
        z = sigmoid(add(slice_cols(gx, 0, hid), slice_cols(gh, 0, hid)))
        r = sigmoid(add(slice_cols(gx, hid, 2 * hid), slice_cols(gh, hid, 2 * hid)))
        cand = tanh(add(slice_cols(gx, 2 * hid, 3 * hid),
                        mul(r, slice_cols(gh, 2 * hid, 3 * hid))))
        # h' = (1 - z) * cand + z * h
        return add(cand, mul(z, sub(h, cand)))


class BiGru:
    """Bi-directional GRU over a token sequence, zero initial states.

    Outputs per step are the backward hidden state concatenated with the
    forward one, giving 2 * hidden features per position.
    """

    def __init__(self, name: str, input_dim: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.fwd = GruCell(f"{name}.fwd", input_dim, hidden, rng)
        self.bwd = GruCell(f"{name}.bwd", input_dim, hidden, rng)

    def parameters(self) -> list[Parameter]:
        return self.fwd.parameters() + self.bwd.parameters()

    def run(self, xs: list[Tensor]) -> list[Tensor]:
        if not xs:
            raise ValueError("empty sequence")
        batch = xs[0].data.shape[0]
        h0 = Tensor(np.zeros((batch, self.hidden)))
        forward: list[Tensor] = []
        h = h0
        for x in xs:
            h = self.fwd.step(x, h)
            forward.append(h)
        backward: list[Tensor] = [None] * len(xs)  # type: ignore[list-item]
        h = h0
        for t in range(len(xs) - 1, -1, -1):
            h = self.bwd.step(xs[t], h)
            backward[t] = h
        return [concat([backward[t], forward[t]], axis=1) for t in range(len(xs))]

    def run_sequence(self, vectors: list[np.ndarray]) -> list[np.ndarray]:
        """Single unbatched sequence of embedding vectors -> 2*hidden vectors."""
        xs = [Tensor(np.asarray(v, dtype=np.float64).reshape(1, -1)) for v in vectors]
        return [out.data[0] for out in self.run(xs)]


# ---------------------------------------------------------------------------
# Optimizer


def linear_decay_lr(base_lr: float, step: int, total_steps: int) -> float:
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    return base_lr * max(0.0, 1.0 - step / total_steps)


def adamw_step(params: list[Parameter], lr: float, step: int,
               betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 1e-2) -> None:
    """One decoupled-weight-decay Adam update at the given (0-based) step."""
    b1, b2 = betas
    t = step + 1
    for p in params:
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise ValueError(f"gradient overflow in {p.name}")
        if p.trainable_mask is not None:
            g = np.where(p.trainable_mask, g, 0.0)
        p.m = b1 * p.m + (1.0 - b1) * g
        p.v = b2 * p.v + (1.0 - b2) * g * g
        m_hat = p.m / (1.0 - b1 ** t)
        v_hat = p.v / (1.0 - b2 ** t)
        update = lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p.data)
        if p.trainable_mask is not None:
            update = np.where(p.trainable_mask, update, 0.0)
        p.data -= update
        if not np.all(np.isfinite(p.data)):
            raise ValueError(f"non-finite parameter after update in {p.name}")


class AdamW:
    """AdamW with linear decay of the learning rate to zero over total_steps."""

    def __init__(self, params: list[Parameter], lr: float = 5e-4, total_steps: int = 1000,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-2):
        self.params = params
        self.lr = lr
        self.total_steps = total_steps
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0

    def current_lr(self) -> float:
        return linear_decay_lr(self.lr, self.step_count, self.total_steps)

    def step(self) -> None:
        adamw_step(self.params, self.current_lr(), self.step_count,
                   self.betas, self.eps, self.weight_decay)
        self.step_count += 1

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for p in self.params:
            out[f"opt.m.{p.name}"] = p.m
            out[f"opt.v.{p.name}"] = p.v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for p in self.params:
            p.m = arrays[f"opt.m.{p.name}"].copy()
            p.v = arrays[f"opt.v.{p.name}"].copy()
        self.step_count = step_count


# ---------------------------------------------------------------------------
# Gradient verification


def gradient_check(build_loss, params: list[Parameter], rng: np.random.Generator,
                   points: int = 3, coords_per_param: int = 4,
                   step: float = 1e-5) -> float:
    """Central finite-difference check at random parameter points.

    ``build_loss`` must rebuild the forward graph from the current parameter
    values with fixed inputs. Returns the worst relative error
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-6) over all probes.
    """
    worst = 0.0
    for _ in range(points):
        for p in params:
            p.data[...] = rng.uniform(-0.5, 0.5, p.data.shape)
        for p in params:
            p.zero_grad()
        loss = build_loss()
        loss.backward()
        analytic = {p.name: p.grad.copy() for p in params}
        for p in params:
            flat = p.data.reshape(-1)
            n_probe = min(coords_per_param, flat.size)
            idxs = rng.choice(flat.size, size=n_probe, replace=False)
            for i in idxs:
                original = flat[i]
                flat[i] = original + step
                f_plus = float(build_loss().data)
                flat[i] = original - step
                f_minus = float(build_loss().data)
                flat[i] = original
                numeric = (f_plus - f_minus) / (2.0 * step)
                ana = analytic[p.name].reshape(-1)[i]
                err = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-6)
                worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    entries = []
    payload = bytearray()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype == np.float64:
            dtype = "<f8"
        elif arr.dtype == np.int64:
            dtype = "<i8"
        elif arr.dtype == np.bool_:
            dtype = "|b1"
        else:
            raise ValueError(f"unsupported checkpoint dtype {arr.dtype} for {name!r}")
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape)})
        payload.extend(arr.tobytes())
    header = json.dumps(
        {"arrays": entries, "meta": meta or {}, "version": CHECKPOINT_VERSION},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(bytes(payload))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError("not a checkpoint file")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header_len = struct.unpack("<Q", blob[8:16])[0]
    header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    arrays: dict[str, np.ndarray] = {}
    offset = 16 + header_len
    for entry in header["arrays"]:
        dtype = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
        offset += nbytes
    return arrays, header["meta"]
