"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every operation whose inputs include a value living on
that tape.  Values without a tape are constants: operations on constants only
compute forward results and record nothing, which is how inference runs the
exact same model code without paying for gradient bookkeeping.

    tape = Tape()
    params = tape.watch(params_dict)      # name -> Var leaves
    loss = model(params, ...)             # build graph with ops below
    grads = backward(tape, loss)          # name -> ndarray

Each backward rule receives the output gradient plus a tuple saying which
parents need gradients, and returns one gradient (or None) per parent.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from . import features, nn
from .errors import UsageError


class Var:
    __slots__ = ("value", "tape", "name", "_parents", "_backward")
    __array_ufunc__ = None  # make ndarray <op> Var dispatch to Var's reflected ops

    def __init__(self, value, tape: "Tape | None" = None, name: str | None = None):
        self.value = np.asarray(value)
        self.tape = tape
        self.name = name
        self._parents: tuple = ()
        self._backward: Callable | None = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def requires_grad(self) -> bool:
        return self.tape is not None

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float(self.value)

    def __float__(self):
        return self.item()

    def __repr__(self):
        kind = "leaf" if self.name else ("node" if self.tape else "const")
        return f"Var({kind}, shape={self.value.shape}, dtype={self.value.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)


class Tape:
    """Operation record for one forward evaluation; consumed by one backward."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.leaves: dict[str, Var] = {}
        self.consumed = False

    def leaf(self, name: str, value: np.ndarray) -> Var:
        if name in self.leaves:
            raise UsageError(f"duplicate leaf name {name!r}")
        var = Var(value, self, name)
        self.leaves[name] = var
        return var

    def watch(self, params: Mapping[str, np.ndarray]) -> dict[str, Var]:
        return {name: self.leaf(name, value) for name, value in params.items()}


def constants(params: Mapping[str, np.ndarray]) -> dict[str, Var]:
    """Wrap arrays as tape-less Vars (no gradients, no recording)."""
    return {name: Var(value) for name, value in params.items()}


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _record(value: np.ndarray, parents: Sequence, backward: Callable) -> Var:
    tape = None
    for p in parents:
        if isinstance(p, Var) and p.tape is not None:
            if tape is None:
                tape = p.tape
            elif p.tape is not tape:
                raise UsageError("cannot combine values from two different tapes")
    out = Var(value, tape)
    if tape is not None:
        if tape.consumed:
            raise UsageError("tape was already consumed by backward()")
        out._parents = tuple(parents)
        out._backward = backward
        tape.nodes.append(out)
    return out


def _val(x):
    return x.value if isinstance(x, Var) else x


def backward(tape: Tape, objective: Var) -> dict[str, np.ndarray]:
    """Reverse-accumulate d(objective)/d(leaf) for every leaf on ``tape``.

    Leaves the objective does not depend on get zero gradients.
    """
    if tape.consumed:
        raise UsageError("a tape supports exactly one backward pass")
    if not isinstance(objective, Var) or objective.value.size != 1:
        raise UsageError("backward() needs a scalar objective")
    tape.consumed = True
    grads: dict[int, np.ndarray] = {}
    if objective.tape is tape:
        grads[id(objective)] = np.ones_like(objective.value)
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is not None:
            needs = tuple(isinstance(p, Var) and p.tape is tape for p in node._parents)
            parent_grads = node._backward(g, needs)
            for p, need, pg in zip(node._parents, needs, parent_grads):
                if need and pg is not None:
                    key = id(p)
                    grads[key] = pg if key not in grads else grads[key] + pg
        node._parents = ()
        node._backward = None
    return {
        name: grads[id(leaf)] if id(leaf) in grads else np.zeros_like(leaf.value)
        for name, leaf in tape.leaves.items()
    }


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ----------------------------------------------------------------- elementwise


def add(a, b) -> Var:
    av, bv = _val(a), _val(b)
    out = av + bv

    def bwd(g, needs):
        return (
            _unbroadcast(g, np.shape(av)) if needs[0] else None,
            _unbroadcast(g, np.shape(bv)) if needs[1] else None,
        )

    return _record(out, (a, b), bwd)


def sub(a, b) -> Var:
    av, bv = _val(a), _val(b)

    def bwd(g, needs):
        return (
            _unbroadcast(g, np.shape(av)) if needs[0] else None,
            _unbroadcast(-g, np.shape(bv)) if needs[1] else None,
        )

    return _record(av - bv, (a, b), bwd)


def mul(a, b) -> Var:
    av, bv = _val(a), _val(b)

    def bwd(g, needs):
        return (
            _unbroadcast(g * bv, np.shape(av)) if needs[0] else None,
            _unbroadcast(g * av, np.shape(bv)) if needs[1] else None,
        )

    return _record(av * bv, (a, b), bwd)


def div(a, b) -> Var:
    av, bv = _val(a), _val(b)
    out = av / bv

    def bwd(g, needs):
        return (
            _unbroadcast(g / bv, np.shape(av)) if needs[0] else None,
            _unbroadcast(-g * out / bv, np.shape(bv)) if needs[1] else None,
        )

    return _record(out, (a, b), bwd)


def tanh(x) -> Var:
    out = np.tanh(_val(x))
    return _record(out, (x,), lambda g, needs: (g * (1 - out * out),))


def log(x) -> Var:
    xv = _val(x)
    return _record(np.log(xv), (x,), lambda g, needs: (g / xv,))


def absolute(x) -> Var:
    xv = _val(x)
    return _record(np.abs(xv), (x,), lambda g, needs: (g * np.sign(xv),))


def relu(x) -> Var:
    xv = _val(x)
    return _record(np.maximum(xv, 0), (x,), lambda g, needs: (g * (xv > 0),))


def leaky_relu(x, slope: float = 0.2) -> Var:
    xv = _val(x)
    return _record(nn.leaky_relu(xv, slope), (x,), lambda g, needs: (np.where(xv >= 0, g, g * slope),))


# ----------------------------------------------------------------- reductions


def total(x) -> Var:
    xv = _val(x)
    out = np.asarray(xv.sum())
    return _record(out, (x,), lambda g, needs: (np.broadcast_to(g, xv.shape).copy(),))


def mean(x, axis: int | None = None) -> Var:
    xv = _val(x)
    if axis is None:
        out = np.asarray(xv.mean())
        return _record(out, (x,), lambda g, needs: (np.full(xv.shape, g / xv.size, dtype=xv.dtype),))
    n = xv.shape[axis]
    out = xv.mean(axis=axis)
    return _record(out, (x,), lambda g, needs: (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),))


def frobenius_norm(x) -> Var:
    """``sqrt(sum(x**2))``; the gradient at the origin is taken as zero."""
    xv = _val(x)
    out = np.asarray(np.sqrt(np.sum(xv * xv)))

    def bwd(g, needs):
        if out == 0:
            return (np.zeros_like(xv),)
        return (g * xv / out,)

    return _record(out, (x,), bwd)


# ----------------------------------------------------------------- shape ops


def reshape(x, shape) -> Var:
    xv = _val(x)
    return _record(xv.reshape(shape), (x,), lambda g, needs: (g.reshape(xv.shape),))


def time_slice(x, start: int, stop: int) -> Var:
    xv = _val(x)

    def bwd(g, needs):
        full = np.zeros_like(xv)
        full[..., start:stop] = g
        return (full,)

    return _record(xv[..., start:stop], (x,), bwd)


def upsample_nearest(x, factor: int) -> Var:
    xv = _val(x)
    out = nn.upsample_nearest(xv, factor)
    if factor == 1:
        return _record(out, (x,), lambda g, needs: (g,))

    def bwd(g, needs):
        return (g.reshape(*g.shape[:-1], xv.shape[-1], factor).sum(axis=-1),)

    return _record(out, (x,), bwd)


# ----------------------------------------------------------------- layers


def conv1d(x, weight, bias=None, dilation: int = 1, stride: int = 1) -> Var:
    xv, wv = _val(x), _val(weight)
    bv = None if bias is None else _val(bias)
    out = nn.conv1d_raw(xv, wv, bv, dilation, stride)
    out_ch, in_ch, kernel = wv.shape

    def bwd(g, needs):
        gx = gw = gb = None
        w2 = wv.reshape(out_ch, -1).astype(g.dtype, copy=False)
        if needs[0]:
            gx = nn.fold(np.matmul(w2.T, g), in_ch, xv.shape[-1], kernel, dilation, stride)
        if needs[1]:
            cols = nn.unfold(xv, kernel, dilation, stride)
            gw = np.matmul(g, np.swapaxes(cols, -1, -2))
            while gw.ndim > 2:
                gw = gw.sum(axis=0)
            gw = gw.reshape(wv.shape).astype(wv.dtype, copy=False)
        if len(needs) > 2 and needs[2]:
            gb = g.sum(axis=-1)
            while gb.ndim > 1:
                gb = gb.sum(axis=0)
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _record(out, parents, bwd)


def weight_norm(v, g) -> Var:
    vv, gv = _val(v), _val(g)
    norms = nn.weight_norm_scale(vv)
    unit = vv / norms
    shape = (-1,) + (1,) * (vv.ndim - 1)
    out = gv.reshape(shape) * unit
    axes = tuple(range(1, vv.ndim))

    def bwd(grad, needs):
        gv_grad = np.sum(grad * unit, axis=axes)
        gvv = None
        if needs[0]:
            gvv = (gv.reshape(shape) / norms) * (grad - gv_grad.reshape(shape) * unit)
        return (gvv, gv_grad if needs[1] else None)

    return _record(out, (v, g), bwd)


def instance_norm(x, epsilon: float = nn.INSTANCE_NORM_EPS) -> Var:
    xv = _val(x)
    mu = xv.mean(axis=-1, keepdims=True)
    centered = xv - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + epsilon)
    out = centered * inv

    def bwd(g, needs):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - out * gxm),)

    return _record(out, (x,), bwd)


def gated_tanh(a, b) -> Var:
    av, bv = _val(a), _val(b)
    if av.shape != bv.shape:
        nn.softmax_gated_tanh(av, bv)  # raises ConfigurationError
    t = np.tanh(av)
    s = nn.softmax_channels(bv)
    out = t * s

    def bwd(g, needs):
        ga = g * s * (1 - t * t) if needs[0] else None
        gb = None
        if needs[1]:
            u = g * t
            gb = s * (u - np.sum(u * s, axis=-2, keepdims=True))
        return (ga, gb)

    return _record(out, (a, b), bwd)


def stft_magnitude(x, fft_size: int, hop_size: int, win_size: int) -> Var:
    """Differentiable counterpart of :func:`tadevoc.features.stft_magnitude`."""
    xv = _val(x)
    window = features.hann_window(win_size).astype(xv.dtype)
    pad = win_size // 2
    spec = features.stft(xv, fft_size, hop_size, win_size)  # (..., F, bins)
    mag = np.abs(spec)
    out = np.swapaxes(mag, -1, -2).astype(xv.dtype, copy=False)
    n_frames = spec.shape[-2]

    def bwd(g, needs):
        gmag = np.swapaxes(g, -1, -2)
        with np.errstate(invalid="ignore", divide="ignore"):
            phase = np.where(mag > 0, spec / np.where(mag > 0, mag, 1), 0)
        y = gmag * phase
        y[..., 1 : fft_size // 2 + (fft_size % 2)] *= 0.5
        frames_grad = np.fft.irfft(y, n=fft_size, axis=-1)[..., :win_size] * fft_size
        frames_grad = frames_grad * window
        length = xv.shape[-1]
        gpad = np.zeros((*xv.shape[:-1], length + 2 * pad), dtype=frames_grad.dtype)
        for f in range(n_frames):
            gpad[..., f * hop_size : f * hop_size + win_size] += frames_grad[..., f, :]
        gx = gpad[..., pad : pad + length].copy()
        gx[..., 1 : pad + 1] += gpad[..., :pad][..., ::-1]
        gx[..., length - pad - 1 : length - 1] += gpad[..., pad + length :][..., ::-1]
        return (gx.astype(xv.dtype, copy=False),)

    return _record(out, (x,), bwd)


# ----------------------------------------------------------------- verification


def finite_diff_gradcheck(
    f: Callable[[Mapping[str, Var]], Var],
    params: Mapping[str, np.ndarray],
    probe_count: int = 10,
    h: float = 1e-4,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Compare tape gradients with central differences on random coordinates.

    ``f`` maps a dict of Vars to a scalar Var.  Returns the largest relative
    error ``|tape - fd| / max(|tape|, |fd|, floor)`` over the probes.
    """
    params = {k: np.array(v, copy=True) for k, v in params.items()}
    tape = Tape()
    out = f(tape.watch(params))
    grads = backward(tape, out)

    names = list(params)
    sizes = np.array([params[n].size for n in names])
    total_size = int(sizes.sum())
    if total_size == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    flat = rng.choice(total_size, size=min(probe_count, total_size), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    for index in flat:
        which = int(np.searchsorted(offsets, index, side="right") - 1)
        name = names[which]
        local = np.unravel_index(int(index - offsets[which]), params[name].shape)
        arr = params[name]
        original = arr[local]
        arr[local] = original + h
        f_plus = float(f(constants(params)))
        arr[local] = original - h
        f_minus = float(f(constants(params)))
        arr[local] = original
        numeric = (f_plus - f_minus) / (2 * h)
        analytic = float(grads[name][local])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, err)
    return worst
