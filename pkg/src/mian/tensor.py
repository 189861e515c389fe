"""Minimal deterministic tensor engine with reverse-mode differentiation.

Double precision throughout. Tapes are rebuilt on every forward pass
(define-by-run); ops record onto the innermost active ``Tape`` whenever any
input requires a gradient. Broadcasting is deliberately restricted to the
row-vector case (p x d) o (d,) -- anything else raises ``ShapeError``.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "MaskError", "GradError",
    "tensor", "constant", "backward", "grad_check",
    "matmul", "transpose", "add", "sub", "mul", "scale", "scale_rows",
    "relu", "tanh", "sigmoid", "log", "clip",
    "softmax_rows", "layer_norm", "concat_last_dim",
    "masked_mean_rows", "sum_all",
]

NEG_INF = -1e9  # additive mask constant; exp underflows to exactly 0


class ShapeError(ValueError):
    pass


class MaskError(ValueError):
    pass


class GradError(RuntimeError):
    pass


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64, copy=True)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g.reshape(self.data.shape).astype(np.float64,
                                                          copy=True)
        else:
            self.grad += g.reshape(self.data.shape)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of primitive ops; backward replays it in reverse."""

    def __init__(self):
        self._records: list = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise GradError(f"backward requires a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise GradError("loss was not produced by operations recorded on this tape")
        if self._spent:
            raise GradError("tape already consumed by a previous backward call")
        self._spent = True
        loss.grad = np.ones_like(loss.data)
        for rec in reversed(self._records):
            rec()


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def backward(loss: Tensor) -> None:
    """Populate grads of every requires_grad tensor reachable from ``loss``."""
    if loss._tape is None:
        raise GradError("loss was not produced by taped operations")
    loss._tape.backward(loss)


def _make(out_data: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    rg = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = rg
    out.grad = None
    out._tape = None
    tape = _active_tape()
    if rg and tape is not None:
        out._tape = tape

        def rec():
            if out.grad is not None:
                backward_fn(out.grad)

        tape._records.append(rec)
    return out


def _check_2d(name: str, *ts: Tensor) -> None:
    for t in ts:
        if t.data.ndim != 2:
            raise ShapeError(f"{name}: expected 2-D tensor, got shape {t.shape}")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        a._accum(g @ b.data.T)
        b._accum(a.data.T @ g)

    return _make(out, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    _check_2d("transpose", a)
    out = a.data.T.copy()

    def bwd(g):
        a._accum(g.T)

    return _make(out, (a,), bwd)


# ---------------------------------------------------------------------------
# elementwise / broadcast arithmetic


def _broadcast_pair(name: str, a: Tensor, b: Tensor):
    """Supported: exact shape match, or b a (d,) / (1,d) vector over rows of a."""
    if a.shape == b.shape:
        return "same"
    if a.data.ndim == 2:
        if b.data.ndim == 1 and b.shape[0] == a.shape[1]:
            return "rowvec"
        if b.data.ndim == 2 and b.shape == (1, a.shape[1]):
            return "rowvec"
    raise ShapeError(f"{name}: incompatible shapes {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    mode = _broadcast_pair("add", a, b)
    bvec = b.data if mode == "same" else b.data.reshape(1, -1)
    out = a.data + bvec

    def bwd(g):
        a._accum(g)
        b._accum(g if mode == "same" else g.sum(axis=0))

    return _make(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    mode = _broadcast_pair("sub", a, b)
    bvec = b.data if mode == "same" else b.data.reshape(1, -1)
    out = a.data - bvec

    def bwd(g):
        a._accum(g)
        b._accum(-g if mode == "same" else -g.sum(axis=0))

    return _make(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    mode = _broadcast_pair("mul", a, b)
    bvec = b.data if mode == "same" else b.data.reshape(1, -1)
    out = a.data * bvec

    def bwd(g):
        a._accum(g * bvec)
        gb = g * a.data
        b._accum(gb if mode == "same" else gb.sum(axis=0))

    return _make(out, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = a.data * c

    def bwd(g):
        a._accum(g * c)

    return _make(out, (a,), bwd)


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """Multiply row i of x (n x d) by w[i]; w has shape (1, n)."""
    _check_2d("scale_rows", x)
    if w.data.ndim != 2 or w.shape != (1, x.shape[0]):
        raise ShapeError(f"scale_rows: weights {w.shape} do not match rows of {x.shape}")
    col = w.data.T  # (n, 1)
    out = x.data * col

    def bwd(g):
        x._accum(g * col)
        w._accum((g * x.data).sum(axis=1).reshape(1, -1))

    return _make(out, (x, w), bwd)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    pos = a.data > 0

    def bwd(g):
        a._accum(g * pos)

    return _make(out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bwd(g):
        a._accum(g * (1.0 - out * out))

    return _make(out, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)

    def bwd(g):
        a._accum(g * out * (1.0 - out))

    return _make(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def bwd(g):
        a._accum(g / a.data)

    return _make(out, (a,), bwd)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def bwd(g):
        a._accum(g * inside)

    return _make(out, (a,), bwd)


# ---------------------------------------------------------------------------
# structured ops


def _as_mask(mask, shape) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.shape == shape:
        return m
    if m.ndim == 1 and m.shape[0] == shape[1]:
        return np.broadcast_to(m, shape)
    raise ShapeError(f"mask shape {m.shape} incompatible with scores {shape}")


def softmax_rows(x: Tensor, mask=None) -> Tensor:
    """Row softmax with optional boolean mask (True = keep).

    Masked entries enter as an additive -1e9, which underflows to exactly 0
    after exponentiation; outputs at masked positions are clamped to 0.
    """
    _check_2d("softmax_rows", x)
    if mask is not None:
        m = _as_mask(mask, x.shape)
        if not m.any(axis=1).all():
            raise MaskError("softmax_rows: a row has every entry masked")
        scores = np.where(m, x.data, NEG_INF)
    else:
        m = None
        scores = x.data
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    if m is not None:
        e = np.where(m, e, 0.0)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        x._accum(out * (g - dot))

    return _make(out, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    _check_2d("layer_norm", x)
    d = x.shape[1]
    if d < 2:
        raise ShapeError(f"layer_norm: need at least 2 features, got {d}")
    if gain.data.reshape(-1).shape[0] != d or bias.data.reshape(-1).shape[0] != d:
        raise ShapeError(
            f"layer_norm: gain/bias {gain.shape}/{bias.shape} do not match width {d}")
    gvec = gain.data.reshape(1, -1)
    bvec = bias.data.reshape(1, -1)
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = xhat * gvec + bvec

    def bwd(g):
        gain._accum((g * xhat).sum(axis=0).reshape(gain.data.shape))
        bias._accum(g.sum(axis=0).reshape(bias.data.shape))
        dxhat = g * gvec
        mean_d = dxhat.mean(axis=1, keepdims=True)
        mean_dx = (dxhat * xhat).mean(axis=1, keepdims=True)
        x._accum(inv_std * (dxhat - mean_d - xhat * mean_dx))

    return _make(out, (x, gain, bias), bwd)


def concat_last_dim(*parts: Tensor) -> Tensor:
    if len(parts) < 2:
        raise ShapeError("concat_last_dim needs at least two tensors")
    _check_2d("concat_last_dim", *parts)
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ShapeError(
                f"concat_last_dim: row counts differ, {parts[0].shape} vs {p.shape}")
    widths = [p.shape[1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=1)

    def bwd(g):
        off = 0
        for p, w in zip(parts, widths):
            p._accum(g[:, off:off + w])
            off += w

    return _make(out, parts, bwd)


def masked_mean_rows(x: Tensor, mask=None) -> Tensor:
    """Mean over (unmasked) rows of an n x d tensor; returns shape (1, d)."""
    _check_2d("masked_mean_rows", x)
    n = x.shape[0]
    if mask is None:
        m = np.ones(n, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.shape != (n,):
            raise ShapeError(f"masked_mean_rows: mask {m.shape} does not match rows {n}")
    k = int(m.sum())
    if k == 0:
        raise MaskError("masked_mean_rows: every row is masked")
    out = x.data[m].mean(axis=0, keepdims=True)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[m] = g / k
        x._accum(gx)

    return _make(out, (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    out = np.array([[x.data.sum()]])

    def bwd(g):
        x._accum(np.full_like(x.data, g.reshape(-1)[0]))

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# finite-difference oracle


def grad_check(loss_fn, params: dict, h: float = 1e-5,
               denom_floor: float = 1e-6) -> dict[str, float]:
    """Compare analytic grads of ``loss_fn()`` to central finite differences.

    ``loss_fn`` must build a fresh forward pass on each call and return a
    scalar Tensor. Returns the max relative error per parameter, where the
    relative error uses max(|analytic|, |numeric|, denom_floor) as the
    denominator so that near-zero gradients do not amplify round-off noise.
    """
    for p in params.values():
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    report: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        a = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn().item()
            flat[i] = orig - h
            f_minus = loss_fn().item()
            flat[i] = orig
            num = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(a[i]), abs(num), denom_floor)
            worst = max(worst, abs(a[i] - num) / denom)
        report[name] = worst
    return report
