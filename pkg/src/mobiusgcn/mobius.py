"""Möbius spectral filters and the stacked network.

A block maps a real node signal X (N x d) to

    Z = act(2 Re{ U diag(f_i(lam_i)) U^T X W } + b),   f_i(z) = (a_i z + b_i) / (c_i z + d_i)

with one complex coefficient quadruple per Laplacian eigenvalue, a complex
channel-mixing matrix W and a real per-channel bias. Coefficients are rescaled to
unit determinant inside every forward pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ComplexVar, Tape, Var
from .linalg import POLE_EPS, PoleError
from .skeleton import SkeletonTopology, SpectralDecomposition, decompose

DET_EPS = 1e-12
AFFINE_EPS = 1e-12
NUM_BLOCKS = 7
INIT_JITTER = 0.01


class DegenerateFilterError(ValueError):
    def __init__(self, index: int, det: complex):
        super().__init__(f"Möbius coefficients at index {index} have near-zero determinant {det!r}")
        self.index = index


class AffineMapError(ValueError):
    pass


@dataclass(frozen=True)
class MobiusCoefficients:
    """Per-eigenvalue complex coefficients; each field is a length-N complex array."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        for name in "abcd":
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=np.complex128)))

    @classmethod
    def from_split(cls, re, im) -> "MobiusCoefficients":
        z = np.asarray(re) + 1j * np.asarray(im)
        return cls(z[0], z[1], z[2], z[3])

    @classmethod
    def identity(cls, n: int) -> "MobiusCoefficients":
        return cls(np.ones(n), np.zeros(n), np.zeros(n), np.ones(n))

    def stacked(self) -> np.ndarray:
        return np.stack([self.a, self.b, self.c, self.d])

    def determinant(self) -> np.ndarray:
        return self.a * self.d - self.b * self.c

    def __call__(self, z):
        return mobius_value(self.a, self.b, self.c, self.d, z)

    def normalized(self) -> "MobiusCoefficients":
        return normalize_coefficients(self)


def mobius_value(a, b, c, d, z):
    return (a * z + b) / (c * z + d)


def normalize_coefficients(raw: MobiusCoefficients) -> MobiusCoefficients:
    """Divide each quadruple by the principal square root of its determinant."""
    det = raw.determinant()
    bad = np.flatnonzero(np.abs(det) <= DET_EPS)
    if bad.size:
        raise DegenerateFilterError(int(bad[0]), complex(det[bad[0]]))
    s = np.sqrt(det)
    return MobiusCoefficients(raw.a / s, raw.b / s, raw.c / s, raw.d / s)


def composed_value(a, b, c, d, z):
    """The same map built as translation, inversion, rotation/homothety, translation (c != 0)."""
    f1 = z + d / c
    f2 = 1.0 / f1
    f3 = (b * c - a * d) / c**2 * f2
    return f3 + a / c


@dataclass(frozen=True)
class FixedPoints:
    gamma1: complex
    gamma2: complex


def mobius_fixed_points(a, b, c, d) -> FixedPoints:
    """Both roots of c z^2 + (d - a) z - b = 0."""
    a, b, c, d = (complex(v) for v in (a, b, c, d))
    if abs(c) <= AFFINE_EPS:
        raise AffineMapError("c is zero: the map is affine and has no finite fixed-point pair")
    root = np.sqrt(complex((a - d) ** 2 + 4 * b * c))
    return FixedPoints((a - d + root) / (2 * c), (a - d - root) / (2 * c))


def normalize_coefficients_var(coeffs: ComplexVar) -> ComplexVar:
    """Differentiable unit-determinant rescaling of a (4, N) coefficient ComplexVar."""
    parts = [ComplexVar(ad.take(coeffs.re, k), ad.take(coeffs.im, k)) for k in range(4)]
    a, b, c, d = parts
    det = ad.csub(ad.cmul(a, d), ad.cmul(b, c))
    mag = np.abs(det.value)
    bad = np.flatnonzero(mag <= DET_EPS)
    if bad.size:
        raise DegenerateFilterError(int(bad[0]), complex(det.value[bad[0]]))
    s = ad.record_complex_sqrt(det)
    scaled = [ad.cdiv(p, s) for p in parts]
    return ComplexVar(ad.stack(p.re for p in scaled), ad.stack(p.im for p in scaled))


def filter_response_var(dec: SpectralDecomposition, coeffs: ComplexVar, normalize: bool = True) -> ComplexVar:
    """Per-eigenvalue filter values f_i(lam_i).

    ``normalize=False`` skips the unit-determinant rescaling, which leaves the
    values unchanged but also admits singular (constant) quadruples.
    """
    if normalize:
        coeffs = normalize_coefficients_var(coeffs)
    return ad.record_complex_diag_mobius(dec.eigenvalues, coeffs)


def filter_matrix_var(dec: SpectralDecomposition, coeffs: ComplexVar, normalize: bool = True) -> ComplexVar:
    """U diag(f(lam)) U^T as a differentiable complex N x N matrix."""
    resp = filter_response_var(dec, coeffs, normalize)
    u, ut = dec.eigenvectors, dec.eigenvectors.T
    return ComplexVar(ad.record_matmul(resp.re * u, ut), ad.record_matmul(resp.im * u, ut))


def mobius_filter_apply(dec: SpectralDecomposition, coeffs: ComplexVar, x: ComplexVar,
                        normalize: bool = True) -> ComplexVar:
    """Filter a node-major complex signal of shape (N, ...), e.g. (N, d) or (N, B, d)."""
    return ad.record_complex_node_mix(filter_matrix_var(dec, coeffs, normalize), x)


def filter_matrix(dec: SpectralDecomposition, coeffs: MobiusCoefficients, normalize: bool = True) -> np.ndarray:
    """Complex U diag(f(lam)) U^T without a tape."""
    norm = normalize_coefficients(coeffs) if normalize else coeffs
    den = norm.c * dec.eigenvalues + norm.d
    bad = np.flatnonzero(np.abs(den) <= POLE_EPS)
    if bad.size:
        raise PoleError(int(bad[0]), float(abs(den[bad[0]])))
    resp = (norm.a * dec.eigenvalues + norm.b) / den
    u = dec.eigenvectors
    return (u * resp) @ u.T


def pole_margins(dec: SpectralDecomposition, coeffs: MobiusCoefficients) -> np.ndarray:
    """|c_i lam_i + d_i| per index, after normalization."""
    norm = normalize_coefficients(coeffs)
    return np.abs(norm.c * dec.eigenvalues + norm.d)


@dataclass
class MobiusBlockParams:
    coeff_re: np.ndarray  # (4, N), rows a, b, c, d
    coeff_im: np.ndarray
    w_re: np.ndarray  # (d_in, d_out)
    w_im: np.ndarray
    bias: np.ndarray  # (d_out,)
    activation: str = "relu"

    FIELDS = ("coeff_re", "coeff_im", "w_re", "w_im", "bias")

    @property
    def in_channels(self) -> int:
        return self.w_re.shape[0]

    @property
    def out_channels(self) -> int:
        return self.w_re.shape[1]

    @property
    def coefficients(self) -> MobiusCoefficients:
        return MobiusCoefficients.from_split(self.coeff_re, self.coeff_im)

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f) for f in self.FIELDS]

    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays())


@dataclass
class BlockVars:
    coeffs: ComplexVar
    weights: ComplexVar
    bias: Var
    activation: str

    @classmethod
    def bind(cls, tape: Tape, p: MobiusBlockParams) -> "BlockVars":
        return cls(
            tape.complex_leaf(p.coeff_re, p.coeff_im),
            tape.complex_leaf(p.w_re, p.w_im),
            tape.leaf(p.bias),
            p.activation,
        )

    def leaves(self) -> list[Var]:
        return [self.coeffs.re, self.coeffs.im, self.weights.re, self.weights.im, self.bias]


def block_forward(params: BlockVars, dec: SpectralDecomposition, x) -> Var:
    """One block on a real node-major signal (N, d_in) or (N, B, d_in)."""
    if not isinstance(x, Var):
        x = params.bias.tape.constant(x)
    # U f(Lam) U^T (X W): mixing channels first keeps the big products real x complex.
    xw = ad.real_complex_matmul(x, params.weights)
    z = ad.record_twice_real(mobius_filter_apply(dec, params.coeffs, xw))
    z = z + params.bias
    if params.activation == "relu":
        return ad.record_relu(z)
    if params.activation == "identity":
        return z
    raise ValueError(f"unknown activation {params.activation!r}")


def block_widths(width: int, in_channels: int = 2, out_channels: int = 3, blocks: int = NUM_BLOCKS):
    return [in_channels] + [width] * (blocks - 1) + [out_channels]


@dataclass
class MobiusNetwork:
    topology: SkeletonTopology
    widths: list[int]
    blocks: list[MobiusBlockParams]
    center_of_mass: bool = False
    decomposition: SpectralDecomposition = field(init=False, repr=False)

    def __post_init__(self):
        self.decomposition = decompose(self.topology)
        if len(self.blocks) != len(self.widths) - 1:
            raise ValueError("need one block per consecutive width pair")
        for k, blk in enumerate(self.blocks):
            if blk.w_re.shape != (self.widths[k], self.widths[k + 1]):
                raise ValueError(f"block {k} weight shape {blk.w_re.shape} disagrees with widths")
            if blk.coeff_re.shape != (4, self.topology.num_joints):
                raise ValueError(f"block {k} coefficient shape {blk.coeff_re.shape}")
        expected_in = 4 if self.center_of_mass else 2
        if self.widths[0] != expected_in:
            raise ValueError(f"first block takes {expected_in} channels, widths say {self.widths[0]}")

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        return [
            (f"block{k}.{name}", getattr(blk, name))
            for k, blk in enumerate(self.blocks)
            for name in MobiusBlockParams.FIELDS
        ]

    def parameters(self) -> list[np.ndarray]:
        return [arr for _, arr in self.named_parameters()]

    def bind(self, tape: Tape) -> list[BlockVars]:
        return [BlockVars.bind(tape, blk) for blk in self.blocks]

    def prepare_input(self, joints2d) -> np.ndarray:
        x = np.asarray(joints2d, dtype=np.float64)
        if self.center_of_mass:
            com = np.broadcast_to(x.mean(axis=-2, keepdims=True), x.shape)
            x = np.concatenate([x, com], axis=-1)
        return x

    def forward_on_tape(self, tape: Tape, bound: list[BlockVars], joints2d) -> Var:
        """(N, 2) or (B, N, 2) inputs to outputs of the same layout with 3 channels."""
        x = self.prepare_input(joints2d)
        batched = x.ndim == 3
        # blocks run node-major so node mixing is a single product on a view
        h = tape.constant(np.moveaxis(x, 1, 0) if batched else x)
        for blk in bound:
            h = block_forward(blk, self.decomposition, h)
        return ad.moveaxis(h, 0, 1) if batched else h

    def copy(self) -> "MobiusNetwork":
        blocks = [
            MobiusBlockParams(*(a.copy() for a in blk.arrays()), activation=blk.activation)
            for blk in self.blocks
        ]
        return MobiusNetwork(self.topology, list(self.widths), blocks, self.center_of_mass)


def block_apply(params: MobiusBlockParams, dec: SpectralDecomposition, x: np.ndarray) -> np.ndarray:
    """Tape-free block on a node-major real signal (N, d) or (N, B, d)."""
    k = filter_matrix(dec, params.coefficients)
    w = params.w_re + 1j * params.w_im
    xw = x @ w
    n = xw.shape[0]
    z = 2.0 * (k @ xw.reshape(n, -1)).real.reshape(xw.shape) + params.bias
    if params.activation == "relu":
        return np.maximum(z, 0.0)
    if params.activation == "identity":
        return z
    raise ValueError(f"unknown activation {params.activation!r}")


def network_forward(net: MobiusNetwork, joints2d) -> np.ndarray:
    """Inference: (N, 2) or (B, N, 2) normalized 2D joints to (N, 3) or (B, N, 3).

    Same arithmetic as the taped forward pass, without recording anything.
    """
    x = net.prepare_input(joints2d)
    batched = x.ndim == 3
    h = np.moveaxis(x, 1, 0) if batched else x
    for blk in net.blocks:
        h = block_apply(blk, net.decomposition, h)
    return np.ascontiguousarray(np.moveaxis(h, 0, 1)) if batched else h


def init_network(widths, topo: SkeletonTopology, seed: int, center_of_mass: bool = False) -> MobiusNetwork:
    """Xavier-uniform complex weights, near-identity Möbius coefficients, zero biases.

    Real and imaginary weight parts each get half the Xavier variance, so the
    complex weight as a whole matches it. Coefficients are a = d = 1 + eps and
    b = c = eps with eps ~ U(-0.01, 0.01) per real/imaginary component.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2 or min(widths) < 1:
        raise ValueError(f"invalid widths {widths}")
    rng = np.random.default_rng(seed)
    n = topo.num_joints
    blocks = []
    for k, (d_in, d_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = np.sqrt(6.0 / (d_in + d_out)) / np.sqrt(2.0)
        w_re = rng.uniform(-bound, bound, size=(d_in, d_out))
        w_im = rng.uniform(-bound, bound, size=(d_in, d_out))
        eps_re = rng.uniform(-INIT_JITTER, INIT_JITTER, size=(4, n))
        eps_im = rng.uniform(-INIT_JITTER, INIT_JITTER, size=(4, n))
        coeff_re = eps_re + np.array([1.0, 0.0, 0.0, 1.0])[:, None]
        last = k == len(widths) - 2
        blocks.append(
            MobiusBlockParams(
                coeff_re, eps_im, w_re, w_im, np.zeros(d_out),
                activation="identity" if last else "relu",
            )
        )
    return MobiusNetwork(topo, widths, blocks, center_of_mass)


def count_parameters(net_or_widths, num_nodes: int | None = None) -> int:
    """Real scalars: per block 2*d*F (complex W) + 8*N (four complex diagonals) + F (bias)."""
    if isinstance(net_or_widths, MobiusNetwork):
        widths, num_nodes = net_or_widths.widths, net_or_widths.topology.num_joints
    else:
        widths = list(net_or_widths)
    return sum(2 * d * f + 8 * num_nodes + f for d, f in zip(widths[:-1], widths[1:]))
