"""Tape-based reverse-mode differentiation over the pipeline's primitives.

The primitive functions below accept either plain numpy arrays or Var
handles. With plain arrays they execute the forward math and return an
array; when any argument is a Var they additionally record the operation
on that Var's tape. Both paths run the exact same numpy expressions, so a
recorded forward is bitwise identical to an un-taped one, and replaying a
tape reproduces every recorded value bitwise.

Conventions:
  * ReLU subgradient at exactly 0 is 0.
  * L2 row normalization maps zero rows to zero rows (gradient 0 there).
  * argmax-style quantities are never recorded; they are not differentiable.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NonDeterministicFunction, ShapeMismatch


class Var:
    """Handle to a value recorded on a Tape."""

    __slots__ = ("value", "tape", "index")

    def __init__(self, value: np.ndarray, tape: "Tape", index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.value.shape})"


class _Node:
    __slots__ = ("op", "value", "parent_ids", "parent_values", "vjp", "fwd", "name")

    def __init__(self, op, value, parent_ids, parent_values, vjp, fwd, name=None):
        self.op = op
        self.value = value
        self.parent_ids = parent_ids
        self.parent_values = parent_values
        self.vjp = vjp
        self.fwd = fwd
        self.name = name


class Tape:
    """Append-only record of primitive operations."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, name: str | None = None) -> Var:
        value = np.asarray(value, dtype=np.float64)
        node = _Node("leaf", value, (), (), None, None, name)
        self.nodes.append(node)
        return Var(value, self, len(self.nodes) - 1)

    def record(self, op, value, parents, vjp, fwd) -> Var:
        ids = tuple(p.index if isinstance(p, Var) else None for p in parents)
        vals = tuple(None if isinstance(p, Var) else p for p in parents)
        self.nodes.append(_Node(op, value, ids, vals, vjp, fwd))
        return Var(value, self, len(self.nodes) - 1)

    def leaves(self) -> dict[str, int]:
        return {n.name: i for i, n in enumerate(self.nodes) if n.op == "leaf" and n.name}

    def op_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for n in self.nodes:
            counts[n.op] = counts.get(n.op, 0) + 1
        return counts

    def replay(self) -> list[np.ndarray]:
        """Recompute every node value from the leaves; bitwise-identical to
        the recorded values by construction."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.op == "leaf":
                values.append(node.value)
                continue
            args = [
                values[pid] if pid is not None else pv
                for pid, pv in zip(node.parent_ids, node.parent_values)
            ]
            values.append(node.fwd(*args))
        return values


class GradientSet:
    """Gradients keyed by parameter name, plus access to intermediate nodes."""

    def __init__(self, grads: dict[str, np.ndarray], node_grads: list[np.ndarray | None]):
        self.grads = grads
        self._node_grads = node_grads

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]

    def __contains__(self, name: str) -> bool:
        return name in self.grads

    def items(self):
        return self.grads.items()

    def of(self, var: Var) -> np.ndarray:
        """Gradient accumulated at an intermediate Var (zeros if none)."""
        g = self._node_grads[var.index]
        return np.zeros_like(var.value) if g is None else g


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _apply(op: str, parents: tuple, fwd: Callable, make_vjp: Callable):
    """Run fwd on raw values; record on the tape when any parent is a Var."""
    vals = tuple(value_of(p) for p in parents)
    out = fwd(*vals)
    tape = _tape_of(*parents)
    if tape is None:
        return out
    needs = tuple(isinstance(p, Var) for p in parents)
    vjp = make_vjp(vals, out, needs)
    return tape.record(op, out, parents, vjp, fwd)


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- elementwise / linear algebra primitives ---


def matmul(a, b):
    def fwd(av, bv):
        return av @ bv

    def make_vjp(vals, out, needs):
        av, bv = vals

        def vjp(g):
            ga = gb = None
            if needs[0]:
                if av.ndim == 1 and bv.ndim == 2:
                    ga = bv @ g
                elif av.ndim == 2 and bv.ndim == 1:
                    ga = np.outer(g, bv)
                else:
                    ga = g @ bv.T
            if needs[1]:
                if av.ndim == 1 and bv.ndim == 2:
                    gb = np.outer(av, g)
                elif av.ndim == 2 and bv.ndim == 1:
                    gb = av.T @ g
                else:
                    gb = av.T @ g
            return ga, gb

        return vjp

    return _apply("matmul", (a, b), fwd, make_vjp)


def transpose(a):
    def fwd(av):
        return av.T.copy()

    def make_vjp(vals, out, needs):
        return lambda g: (g.T,)

    return _apply("transpose", (a,), fwd, make_vjp)


def reshape(a, shape: tuple[int, ...]):
    def fwd(av):
        return av.reshape(shape)

    def make_vjp(vals, out, needs):
        (av,) = vals
        return lambda g: (g.reshape(av.shape),)

    return _apply("reshape", (a,), fwd, make_vjp)


def add(a, b):
    def fwd(av, bv):
        return av + bv

    def make_vjp(vals, out, needs):
        av, bv = vals

        def vjp(g):
            ga = _sum_to_shape(g, np.shape(av)) if needs[0] else None
            gb = _sum_to_shape(g, np.shape(bv)) if needs[1] else None
            return ga, gb

        return vjp

    return _apply("add", (a, b), fwd, make_vjp)


def sub(a, b):
    def fwd(av, bv):
        return av - bv

    def make_vjp(vals, out, needs):
        av, bv = vals

        def vjp(g):
            ga = _sum_to_shape(g, np.shape(av)) if needs[0] else None
            gb = _sum_to_shape(-g, np.shape(bv)) if needs[1] else None
            return ga, gb

        return vjp

    return _apply("sub", (a, b), fwd, make_vjp)


def mul(a, b):
    def fwd(av, bv):
        return av * bv

    def make_vjp(vals, out, needs):
        av, bv = vals

        def vjp(g):
            ga = _sum_to_shape(g * bv, np.shape(av)) if needs[0] else None
            gb = _sum_to_shape(g * av, np.shape(bv)) if needs[1] else None
            return ga, gb

        return vjp

    return _apply("mul", (a, b), fwd, make_vjp)


def scale(a, s: float):
    s = float(s)

    def fwd(av):
        return av * s

    def make_vjp(vals, out, needs):
        return lambda g: (g * s,)

    return _apply("scale", (a,), fwd, make_vjp)


def relu(a):
    def fwd(av):
        return np.maximum(av, 0.0)

    def make_vjp(vals, out, needs):
        (av,) = vals
        return lambda g: (g * (av > 0.0),)

    return _apply("relu", (a,), fwd, make_vjp)


def sigmoid(a):
    def fwd(av):
        out = np.empty_like(av)
        pos = av >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
        e = np.exp(av[~pos])
        out[~pos] = e / (1.0 + e)
        return out

    def make_vjp(vals, out, needs):
        return lambda g: (g * out * (1.0 - out),)

    return _apply("sigmoid", (a,), fwd, make_vjp)


def l2norm_rows(a):
    """Row-wise L2 normalization; zero rows stay zero."""

    def fwd(av):
        norms = np.sqrt((av * av).sum(axis=1, keepdims=True))
        safe = np.where(norms > 0.0, norms, 1.0)
        return av / safe

    def make_vjp(vals, out, needs):
        (av,) = vals
        norms = np.sqrt((av * av).sum(axis=1, keepdims=True))
        safe = np.where(norms > 0.0, norms, 1.0)
        y = av / safe

        def vjp(g):
            dot = (g * y).sum(axis=1, keepdims=True)
            ga = (g - dot * y) / safe
            ga[norms[:, 0] == 0.0] = 0.0
            return (ga,)

        return vjp

    return _apply("l2norm_rows", (a,), fwd, make_vjp)


def take_rows(a, idx: np.ndarray):
    idx = np.asarray(idx, dtype=np.int64)

    def fwd(av):
        return av[idx]

    def make_vjp(vals, out, needs):
        (av,) = vals

        def vjp(g):
            ga = np.zeros_like(av)
            np.add.at(ga, idx, g)
            return (ga,)

        return vjp

    return _apply("take_rows", (a,), fwd, make_vjp)


def row_sums(a):
    """Sum along axis 1, keepdims -> (N, 1)."""

    def fwd(av):
        return av.sum(axis=1, keepdims=True)

    def make_vjp(vals, out, needs):
        (av,) = vals
        return lambda g: (np.broadcast_to(g, av.shape).copy(),)

    return _apply("row_sums", (a,), fwd, make_vjp)


def div_rows(a, d):
    """Divide each row of a by the matching (N, 1) entry of d."""

    def fwd(av, dv):
        return av / dv

    def make_vjp(vals, out, needs):
        av, dv = vals

        def vjp(g):
            ga = g / dv if needs[0] else None
            gd = -(g * av / (dv * dv)).sum(axis=1, keepdims=True) if needs[1] else None
            return ga, gd

        return vjp

    return _apply("div_rows", (a, d), fwd, make_vjp)


def mean_over(a, axes: tuple[int, ...]):
    axes = tuple(axes)

    def fwd(av):
        return av.mean(axis=axes)

    def make_vjp(vals, out, needs):
        (av,) = vals
        count = 1
        for ax in axes:
            count *= av.shape[ax]

        def vjp(g):
            ge = np.expand_dims(g, axes)
            return (np.broadcast_to(ge / count, av.shape).copy(),)

        return vjp

    return _apply("mean_over", (a,), fwd, make_vjp)


def concat(parts: list, axis: int = 0):
    def fwd(*vals):
        return np.concatenate(vals, axis=axis)

    def make_vjp(vals, out, needs):
        sizes = [v.shape[axis] for v in vals]
        splits = np.cumsum(sizes)[:-1]

        def vjp(g):
            pieces = np.split(g, splits, axis=axis)
            return tuple(p if n else None for p, n in zip(pieces, needs))

        return vjp

    return _apply("concat", tuple(parts), fwd, make_vjp)


# --- kernel responsibilities (the EM / top-down edge primitive) ---


def _squared_distances(xv: np.ndarray, cv: np.ndarray) -> np.ndarray:
    d = (
        (xv * xv).sum(axis=1)[:, None]
        + (cv * cv).sum(axis=1)[None, :]
        - 2.0 * (xv @ cv.T)
    )
    return np.maximum(d, 0.0)


def kernel_resp(x, c, sigma: float, axis: int, stop_gradient: bool = False):
    """Gaussian-kernel responsibilities between rows of x (N, D) and rows of
    c (M, D), normalized along `axis` (0: columns sum to 1, 1: rows sum to 1).

    Stabilized by max-subtraction along the normalization axis; a slice
    whose responsibilities all underflow falls back to uniform weights.
    With stop_gradient the result is treated as a constant in backward.
    """
    sigma = float(sigma)
    if axis not in (0, 1):
        raise ShapeMismatch(f"axis must be 0 or 1, got {axis}")

    def fwd(xv, cv):
        d = _squared_distances(xv, cv)
        s = -d / (sigma * sigma)
        s = s - s.max(axis=axis, keepdims=True)
        e = np.exp(s)
        z = e.sum(axis=axis, keepdims=True)
        degenerate = z == 0.0
        if degenerate.any():
            n = e.shape[axis]
            e = np.where(np.broadcast_to(degenerate, e.shape), 1.0 / n, e)
            z = np.where(degenerate, 1.0, z)
        return e / z

    def make_vjp(vals, out, needs):
        xv, cv = vals
        p = out

        def vjp(g):
            if stop_gradient:
                return (None, None)
            # softmax along `axis` of s = -d / sigma^2
            inner = (g * p).sum(axis=axis, keepdims=True)
            ds = p * (g - inner)
            t = ds * (-1.0 / (sigma * sigma))  # dL/dd
            gx = gc = None
            if needs[0]:
                gx = 2.0 * (t.sum(axis=1, keepdims=True) * xv - t @ cv)
            if needs[1]:
                gc = 2.0 * (t.sum(axis=0)[:, None] * cv - t.T @ xv)
            return gx, gc

        return vjp

    return _apply("kernel_resp", (x, c), fwd, make_vjp)


# --- grid <-> region primitives ---


def broadcast_regions(u, labels: np.ndarray):
    """Copy row u[r] to every pixel with label r; labels (h, w) -> (C, h, w)."""
    labels = np.asarray(labels, dtype=np.int64)
    flat = labels.ravel()
    h, w = labels.shape

    def fwd(uv):
        c = uv.shape[1]
        return uv[flat].T.reshape(c, h, w).copy()

    def make_vjp(vals, out, needs):
        (uv,) = vals

        def vjp(g):
            gu = np.zeros_like(uv)
            c = uv.shape[1]
            np.add.at(gu, flat, g.reshape(c, -1).T)
            return (gu,)

        return vjp

    return _apply("broadcast_regions", (u,), fwd, make_vjp)


def channel_matmul(f, w):
    """Per-pixel linear map over channels: (C, h, w) x (C, K) -> (K, h, w)."""

    def fwd(fv, wv):
        return np.tensordot(wv, fv, axes=([0], [0]))

    def make_vjp(vals, out, needs):
        fv, wv = vals

        def vjp(g):
            gf = np.tensordot(wv, g, axes=([1], [0])) if needs[0] else None
            gw = np.tensordot(fv, g, axes=([1, 2], [1, 2])) if needs[1] else None
            return gf, gw

        return vjp

    return _apply("channel_matmul", (f, w), fwd, make_vjp)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense 1-D bilinear interpolation matrix, half-pixel-center convention
    (corner-aligned=false), edges replicated."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * n_in / n_out - 0.5
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    lo_c = np.clip(lo, 0, n_in - 1)
    hi_c = np.clip(lo + 1, 0, n_in - 1)
    for i in range(n_out):
        m[i, lo_c[i]] += 1.0 - frac[i]
        m[i, hi_c[i]] += frac[i]
    return m


def bilinear_upsample(a, out_hw: tuple[int, int]):
    """Resize (C, h, w) -> (C, H, W) with separable bilinear interpolation."""
    ho, wo = out_hw

    def fwd(av):
        _, hi, wi = av.shape
        wy = _interp_matrix(hi, ho)
        wx = _interp_matrix(wi, wo)
        tmp = np.tensordot(wy, av, axes=([1], [1])).transpose(1, 0, 2)
        return np.ascontiguousarray(np.tensordot(tmp, wx, axes=([2], [1])))

    def make_vjp(vals, out, needs):
        (av,) = vals
        _, hi, wi = av.shape
        wy = _interp_matrix(hi, ho)
        wx = _interp_matrix(wi, wo)

        def vjp(g):
            tmp = np.tensordot(wy.T, g, axes=([1], [1])).transpose(1, 0, 2)
            return (np.ascontiguousarray(np.tensordot(tmp, wx.T, axes=([2], [1]))),)

        return vjp

    return _apply("bilinear_upsample", (a,), fwd, make_vjp)


# --- losses ---


def cross_entropy_map(logits, targets: np.ndarray):
    """Mean cross-entropy over pixels with target >= 0.

    logits (K, h, w); targets (h, w) int with -1 = ignored. The caller is
    responsible for raising if every pixel is ignored.
    """
    targets = np.asarray(targets)
    mask = targets >= 0
    count = int(mask.sum())
    safe_t = np.where(mask, targets, 0).astype(np.int64)

    def fwd(lv):
        m = lv.max(axis=0)
        lse = m + np.log(np.exp(lv - m).sum(axis=0))
        picked = np.take_along_axis(lv, safe_t[None], axis=0)[0]
        return np.asarray(((lse - picked) * mask).sum() / count)

    def make_vjp(vals, out, needs):
        (lv,) = vals
        m = lv.max(axis=0)
        p = np.exp(lv - m)
        p /= p.sum(axis=0)

        def vjp(g):
            gl = p * (mask / count)
            k, h, w = lv.shape
            ys, xs = np.nonzero(mask)
            gl[safe_t[ys, xs], ys, xs] -= 1.0 / count
            return (gl * g,)

        return vjp

    return _apply("cross_entropy_map", (logits,), fwd, make_vjp)


def cross_entropy_vec(logits, target: int):
    """Cross-entropy of a single label against a (K,) logit vector."""
    target = int(target)

    def fwd(lv):
        m = lv.max()
        lse = m + np.log(np.exp(lv - m).sum())
        return np.asarray(lse - lv[target])

    def make_vjp(vals, out, needs):
        (lv,) = vals
        m = lv.max()
        p = np.exp(lv - m)
        p /= p.sum()

        def vjp(g):
            gl = p.copy()
            gl[target] -= 1.0
            return (gl * g,)

        return vjp

    return _apply("cross_entropy_vec", (logits,), fwd, make_vjp)


# --- recording, backward, finite differences ---


def forward_record(fn, params: dict[str, np.ndarray]):
    """Run fn with tape-recorded leaves for every parameter.

    Returns (outputs, tape). Outputs are whatever fn returns, with Vars
    wherever values depend on the parameters; they match an un-taped run
    bitwise because recording never perturbs the forward math.
    """
    tape = Tape()
    leaves = {name: tape.leaf(value, name) for name, value in params.items()}
    out = fn(leaves)
    return out, tape


def backward(tape: Tape, seed_grad=1.0, output: Var | None = None) -> GradientSet:
    """Reverse sweep of vector-Jacobian products over a recorded tape.

    Gradients for every named leaf are returned (zeros when a parameter
    does not influence the output); the tape itself is never mutated.
    """
    if output is None:
        if not tape.nodes:
            return GradientSet({}, [])
        output = Var(tape.nodes[-1].value, tape, len(tape.nodes) - 1)
    seed = np.asarray(seed_grad, dtype=np.float64)
    if seed.shape != output.value.shape:
        if seed.ndim == 0 and output.value.ndim == 0:
            pass
        else:
            raise ShapeMismatch(
                f"seed gradient shape {seed.shape} != output shape {output.value.shape}"
            )
    node_grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    node_grads[output.index] = np.broadcast_to(seed, output.value.shape).astype(np.float64)
    for i in range(output.index, -1, -1):
        g = node_grads[i]
        node = tape.nodes[i]
        if g is None or node.vjp is None:
            continue
        parent_grads = node.vjp(g)
        for pid, pg in zip(node.parent_ids, parent_grads):
            if pid is None or pg is None:
                continue
            if node_grads[pid] is None:
                node_grads[pid] = pg
            else:
                node_grads[pid] = node_grads[pid] + pg
    grads = {}
    for name, idx in tape.leaves().items():
        g = node_grads[idx]
        grads[name] = np.zeros_like(tape.nodes[idx].value) if g is None else g
    return GradientSet(grads, node_grads)


def finite_diff_check(f, params: dict[str, np.ndarray], eps: float = 1e-5) -> float:
    """Max relative error between analytic gradients of f and central
    finite differences over every entry of every parameter.

    f maps a dict of arrays (or Vars) to a scalar. Relative error per
    coordinate is |a - n| / max(|a|, |n|, 1e-8).
    """
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    base1 = float(value_of(f(params)))
    base2 = float(value_of(f(params)))
    if base1 != base2:
        raise NonDeterministicFunction("two baseline evaluations disagree")

    out, tape = forward_record(f, params)
    if not isinstance(out, Var):
        analytic = {k: np.zeros_like(v) for k, v in params.items()}
    else:
        analytic = backward(tape, 1.0, out).grads

    worst = 0.0
    for name, value in params.items():
        flat = value.ravel()
        a_flat = analytic[name].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(value_of(f(params)))
            flat[i] = orig - eps
            lo = float(value_of(f(params)))
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a = float(a_flat[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
