"""Define-by-run reverse-mode differentiation over real numpy arrays.

Every complex quantity is a :class:`ComplexVar`, a pair of real :class:`Var`
nodes. Complex primitives are lowered to real ones, so the real and imaginary
parts of each parameter receive independent partial derivatives.

    tape = Tape()
    x = tape.leaf(np.array(3.0))
    loss = x * x
    grads = backward(loss)
    grads[x]  # -> 6.0
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import POLE_EPS, PoleError, ShapeError


class Tape:
    """Records primitives in execution order, which is also a topological order."""

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.parents: list[tuple[int, ...]] = []
        self.backfns: list = []
        self.needs_grad: list[bool] = []
        self.leaves: list[int] = []

    def __len__(self):
        return len(self.values)

    def _push(self, value, parents=(), backfn=None, needs_grad=None) -> "Var":
        value = np.asarray(value, dtype=np.float64)
        if needs_grad is None:
            needs_grad = any(self.needs_grad[p] for p in parents)
        self.values.append(value)
        self.parents.append(tuple(parents))
        self.backfns.append(backfn)
        self.needs_grad.append(needs_grad)
        return Var(self, len(self.values) - 1)

    def leaf(self, value) -> "Var":
        """A trainable input; its gradient is reported by :func:`backward`."""
        v = self._push(np.array(value, dtype=np.float64), needs_grad=True)
        self.leaves.append(v.id)
        return v

    def constant(self, value) -> "Var":
        return self._push(np.array(value, dtype=np.float64), needs_grad=False)

    def complex_leaf(self, re, im) -> "ComplexVar":
        return ComplexVar(self.leaf(re), self.leaf(im))


@dataclass(frozen=True, eq=False)
class Var:
    tape: Tape
    id: int

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.id]

    @property
    def shape(self):
        return self.value.shape

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return record_matmul(self, other)

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape})"


@dataclass(frozen=True, eq=False)
class ComplexVar:
    re: Var
    im: Var

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ShapeError(f"re {self.re.shape} and im {self.im.shape} differ")

    @property
    def shape(self):
        return self.re.shape

    @property
    def value(self) -> np.ndarray:
        return self.re.value + 1j * self.im.value


def _as_var(x, tape: Tape) -> Var:
    if isinstance(x, Var):
        return x
    return tape.constant(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(x, y, forward, grads):
    tape = _tape_of(x, y)
    x, y = _as_var(x, tape), _as_var(y, tape)
    xv, yv = x.value, y.value
    out = forward(xv, yv)

    def backfn(g, need):
        gx, gy = grads(g, xv, yv, out, need)
        return (
            _unbroadcast(gx, xv.shape) if need[0] else None,
            _unbroadcast(gy, yv.shape) if need[1] else None,
        )

    return tape._push(out, (x.id, y.id), backfn)


def add(x, y) -> Var:
    return _binary(x, y, np.add, lambda g, a, b, o, n: (g, g))


def sub(x, y) -> Var:
    return _binary(x, y, np.subtract, lambda g, a, b, o, n: (g, -g if n[1] else None))


def mul(x, y) -> Var:
    return _binary(
        x, y, np.multiply,
        lambda g, a, b, o, n: (g * b if n[0] else None, g * a if n[1] else None),
    )


def div(x, y) -> Var:
    return _binary(
        x, y, np.divide,
        lambda g, a, b, o, n: (g / b if n[0] else None, -g * o / b if n[1] else None),
    )


def _unary(x: Var, out, grad) -> Var:
    def backfn(g, need):
        return (grad(g),)

    return x.tape._push(out, (x.id,), backfn)


def neg(x: Var) -> Var:
    return _unary(x, -x.value, lambda g: -g)


def square(x: Var) -> Var:
    xv = x.value
    return _unary(x, xv * xv, lambda g: 2.0 * xv * g)


def scale(x: Var, k: float) -> Var:
    return _unary(x, k * x.value, lambda g: k * g)


def record_relu(x: Var) -> Var:
    """max(0, x); the subgradient at exactly 0 is 0."""
    mask = x.value > 0.0
    return _unary(x, np.where(mask, x.value, 0.0), lambda g: g * mask)


def total(x: Var) -> Var:
    """Sum of all entries, as a 0-d Var."""
    shape = x.shape
    return _unary(x, np.sum(x.value), lambda g: np.broadcast_to(g, shape).copy())


def mean_over_batch(x: Var) -> Var:
    n = x.shape[0]
    return scale(total(x), 1.0 / n)


def take(x: Var, index: int) -> Var:
    """Row ``index`` along axis 0."""
    shape = x.shape

    def grad(g):
        out = np.zeros(shape)
        out[index] = g
        return out

    return _unary(x, x.value[index].copy(), grad)


def stack(xs) -> Var:
    """Stack same-shape Vars along a new leading axis."""
    xs = list(xs)
    tape = xs[0].tape

    def backfn(g, need):
        return tuple(g[k] if need[k] else None for k in range(len(xs)))

    return tape._push(np.stack([x.value for x in xs]), tuple(x.id for x in xs), backfn)


def transpose(x: Var) -> Var:
    return _unary(x, np.swapaxes(x.value, -1, -2), lambda g: np.swapaxes(g, -1, -2))


def record_matmul(a, b) -> Var:
    """Matrix product with numpy broadcasting over leading batch axes.

    Backward: dL/da = g b^T and dL/db = a^T g, summed over broadcast axes.
    """
    tape = _tape_of(a, b)
    a, b = _as_var(a, tape), _as_var(b, tape)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2 or av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"cannot multiply {av.shape} by {bv.shape}")

    if av.ndim > 2 and bv.ndim == 2:
        return _batched_right_matmul(tape, a, b)
    if av.ndim == 2 and bv.ndim > 2:
        return _batched_left_matmul(tape, a, b)

    def backfn(g, need):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape) if need[0] else None
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape) if need[1] else None
        return ga, gb

    return tape._push(av @ bv, (a.id, b.id), backfn)


def _batched_right_matmul(tape: Tape, a: Var, b: Var) -> Var:
    # (..., n, k) @ (k, m): fold the batch axes into rows, one BLAS call each way
    av, bv = a.value, b.value
    a2 = av.reshape(-1, av.shape[-1])

    def backfn(g, need):
        g2 = g.reshape(-1, g.shape[-1])
        ga = (g2 @ bv.T).reshape(av.shape) if need[0] else None
        gb = a2.T @ g2 if need[1] else None
        return ga, gb

    out = (a2 @ bv).reshape(av.shape[:-1] + (bv.shape[-1],))
    return tape._push(out, (a.id, b.id), backfn)


def _batched_left_matmul(tape: Tape, a: Var, b: Var) -> Var:
    # (n, k) @ (..., k, m): fold the batch axes into columns
    av, bv = a.value, b.value
    k = bv.shape[-2]
    b2 = np.moveaxis(bv, -2, 0).reshape(k, -1)

    def unfold(x2, rows):
        batch = bv.shape[:-2]
        return np.moveaxis(x2.reshape((rows,) + batch + (bv.shape[-1],)), 0, -2)

    def backfn(g, need):
        g2 = np.moveaxis(g, -2, 0).reshape(av.shape[0], -1)
        ga = g2 @ b2.T if need[0] else None
        gb = unfold(av.T @ g2, k) if need[1] else None
        return ga, gb

    out = unfold(av @ b2, av.shape[0])
    return tape._push(out, (a.id, b.id), backfn)


def record_complex_matmul(a: ComplexVar, b: ComplexVar) -> ComplexVar:
    """(A + iB)(x + iy) lowered to (Ax - By) + i(Bx + Ay)."""
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    re = record_matmul(a.re, b.re) - record_matmul(a.im, b.im)
    im = record_matmul(a.im, b.re) + record_matmul(a.re, b.im)
    return ComplexVar(re, im)


def record_node_mix(k, x) -> Var:
    """out[n, ...] = sum_m k[n, m] x[m, ...]: a node-mixing matrix applied to a
    node-major signal of shape (N, ...). Equals ``k @ x`` for 2-D ``x``."""
    tape = _tape_of(k, x)
    k, x = _as_var(k, tape), _as_var(x, tape)
    kv, xv = k.value, x.value
    if kv.ndim != 2 or kv.shape[1] != xv.shape[0]:
        raise ShapeError(f"cannot mix nodes of {xv.shape} with {kv.shape}")
    x2 = xv.reshape(xv.shape[0], -1)

    def backfn(g, need):
        g2 = g.reshape(g.shape[0], -1)
        gk = g2 @ x2.T if need[0] else None
        gx = (kv.T @ g2).reshape(xv.shape) if need[1] else None
        return gk, gx

    out = (kv @ x2).reshape((kv.shape[0],) + xv.shape[1:])
    return tape._push(out, (k.id, x.id), backfn)


def record_complex_node_mix(k: ComplexVar, x: ComplexVar) -> ComplexVar:
    """Complex node mixing, lowered to four real products like record_complex_matmul."""
    re = record_node_mix(k.re, x.re) - record_node_mix(k.im, x.im)
    im = record_node_mix(k.im, x.re) + record_node_mix(k.re, x.im)
    return ComplexVar(re, im)


def moveaxis(x: Var, source: int, destination: int) -> Var:
    return _unary(
        x, np.moveaxis(x.value, source, destination),
        lambda g: np.moveaxis(g, destination, source),
    )


def real_complex_matmul(x: Var, w: ComplexVar) -> ComplexVar:
    """Real left operand times complex right operand: two real products."""
    return ComplexVar(record_matmul(x, w.re), record_matmul(x, w.im))


def record_twice_real(z: ComplexVar) -> Var:
    """z + conj(z) = 2 Re z; the imaginary part receives no gradient."""
    return scale(z.re, 2.0)


def cadd(x: ComplexVar, y: ComplexVar) -> ComplexVar:
    return ComplexVar(x.re + y.re, x.im + y.im)


def csub(x: ComplexVar, y: ComplexVar) -> ComplexVar:
    return ComplexVar(x.re - y.re, x.im - y.im)


def cmul(x: ComplexVar, y: ComplexVar) -> ComplexVar:
    return ComplexVar(x.re * y.re - x.im * y.im, x.re * y.im + x.im * y.re)


def cmul_real(x: ComplexVar, r) -> ComplexVar:
    return ComplexVar(x.re * r, x.im * r)


def cdiv(num: ComplexVar, den: ComplexVar, eps: float = POLE_EPS) -> ComplexVar:
    """Entrywise quotient num * conj(den) / |den|^2; raises PoleError on |den| <= eps."""
    mag = np.hypot(den.re.value, den.im.value)
    bad = np.flatnonzero(mag.ravel() <= eps)
    if bad.size:
        i = int(bad[0])
        raise PoleError(i, float(mag.ravel()[i]))
    mag2 = square(den.re) + square(den.im)
    re = (num.re * den.re + num.im * den.im) / mag2
    im = (num.im * den.re - num.re * den.im) / mag2
    return ComplexVar(re, im)


def record_complex_sqrt(z: ComplexVar) -> ComplexVar:
    """Principal square root (argument in (-pi/2, pi/2]).

    Holomorphic away from 0, so the real Jacobian follows from
    d sqrt(z)/dz = 1 / (2 sqrt(z)) via Cauchy-Riemann.
    """
    tape = z.re.tape
    w = np.sqrt(z.re.value + 1j * z.im.value)
    deriv = 0.5 / w
    p, q = deriv.real, deriv.imag

    def back_re(g, need):
        return (g * p if need[0] else None, -g * q if need[1] else None)

    def back_im(g, need):
        return (g * q if need[0] else None, g * p if need[1] else None)

    parents = (z.re.id, z.im.id)
    re = tape._push(w.real, parents, back_re)
    im = tape._push(w.imag, parents, back_im)
    return ComplexVar(re, im)


def record_complex_diag_mobius(lam, coeffs: ComplexVar) -> ComplexVar:
    """Entry i = (a_i lam_i + b_i) / (c_i lam_i + d_i) for coeffs rows (a, b, c, d).

    ``lam`` is a constant real array; ``coeffs`` has shape (4, N).
    """
    lam = np.asarray(lam, dtype=np.float64)
    if coeffs.shape[0] != 4 or coeffs.shape[1:] != lam.shape:
        raise ShapeError(f"coefficients {coeffs.shape} do not match eigenvalues {lam.shape}")
    a, b, c, d = (ComplexVar(take(coeffs.re, k), take(coeffs.im, k)) for k in range(4))
    num = cadd(cmul_real(a, lam), b)
    den = cadd(cmul_real(c, lam), d)
    return cdiv(num, den)


class GradTable:
    """Gradients by Var; leaves that did not influence the loss map to zeros."""

    def __init__(self, tape: Tape, grads: dict[int, np.ndarray]):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, var: Var) -> np.ndarray:
        g = self._grads.get(var.id)
        if g is None:
            return np.zeros_like(self._tape.values[var.id])
        return g

    def __contains__(self, var: Var) -> bool:
        return var.tape is self._tape and var.id < len(self._tape)


def backward(loss: Var) -> GradTable:
    """Reverse sweep from a scalar loss; each node is visited once."""
    if loss.value.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    tape = loss.tape
    leaves = set(tape.leaves)
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
    for node in range(loss.id, -1, -1):
        g = grads.get(node)
        if g is None:
            continue
        parents = tape.parents[node]
        if not parents:
            continue
        need = tuple(tape.needs_grad[p] for p in parents)
        if not any(need):
            continue
        for p, gp in zip(parents, tape.backfns[node](g, need)):
            if gp is None or not tape.needs_grad[p]:
                continue
            if p in grads:
                grads[p] = grads[p] + gp
            else:
                grads[p] = gp
        if node not in leaves:
            del grads[node]
    leaf_grads = {i: grads[i] for i in leaves if i in grads}
    return GradTable(tape, leaf_grads)
