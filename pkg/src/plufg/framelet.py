"""Quasi-framelet transforms on graphs.

A scaling set ``g_0..g_R`` with ``sum_r g_r^2 == 1`` on ``[0, pi]`` defines the
operator bank ``W_{r,l}`` over the index set ``{(0, J)} U {(r, l): r=1..R,
l=0..J}``; stacking the bank gives a tight frame, ``W^T W = I``.  Operators are
functions of the augmented normalized Laplacian and are available either
exactly (dense eigendecomposition) or matrix-free through Chebyshev
polynomials of the Laplacian.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Mapping, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .exceptions import ScalingSetError
from .graph import Graph, as_features, normalized_operators, spectral_radius

Index = Tuple[int, int]

EXACT_SIZE_LIMIT = 3000
IDENTITY_GRID = 1024
IDENTITY_TOL = 1e-6


@dataclass(frozen=True)
class ScalingSet:
    """Scaling functions ``g_0..g_R`` on ``[0, pi]``; each maps arrays to arrays."""

    functions: Tuple[Callable[[np.ndarray], np.ndarray], ...]
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "functions", tuple(self.functions))
        if len(self.functions) < 2:
            raise ScalingSetError("a scaling set needs at least a low-pass and a high-pass function")

    @property
    def R(self) -> int:
        return len(self.functions) - 1

    def __call__(self, r: int, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return np.broadcast_to(np.asarray(self.functions[r](xi), dtype=float), xi.shape)


def _haar_low(xi):
    return np.cos(np.asarray(xi) / 2.0)


def _haar_high(xi):
    return np.sin(np.asarray(xi) / 2.0)


def haar_scaling_set() -> ScalingSet:
    """Haar-type set, ``g_0 = cos(xi/2)``, ``g_1 = sin(xi/2)``."""
    return ScalingSet((_haar_low, _haar_high), name="haar")


def validate_identity(scaling: ScalingSet, grid: int = IDENTITY_GRID, tol: float = IDENTITY_TOL) -> float:
    """Return ``max |sum_r g_r^2 - 1|`` over a uniform grid of ``[0, pi]``.

    Raises ScalingSetError when the deviation exceeds ``tol`` or when the
    endpoint conditions ``g_0(0)=1, g_0(pi)=0, g_R(0)=0, g_R(pi)=1`` fail.
    """
    xi = np.linspace(0.0, np.pi, grid)
    total = sum(scaling(r, xi) ** 2 for r in range(scaling.R + 1))
    dev = float(np.max(np.abs(total - 1.0)))
    if dev > tol:
        i = int(np.argmax(np.abs(total - 1.0)))
        raise ScalingSetError(f"{scaling.name}: sum of squares deviates by {dev:.3g} at xi={xi[i]:.4g}")
    ends = np.array([0.0, np.pi])
    g0, gR = scaling(0, ends), scaling(scaling.R, ends)
    expected = [(g0[0], 1.0, "g_0(0)"), (g0[1], 0.0, "g_0(pi)"),
                (gR[0], 0.0, "g_R(0)"), (gR[1], 1.0, "g_R(pi)")]
    for got, want, label in expected:
        if abs(got - want) > tol:
            raise ScalingSetError(f"{scaling.name}: endpoint condition {label}={want} violated (got {got:.6g})")
    return dev


def coarsest_scale(lambda_max: float, s: float = 2.0) -> int:
    """Smallest ``m >= 0`` with ``lambda_max / s**m <= pi``."""
    if s <= 1:
        raise ValueError(f"dilation base must be > 1, got {s}")
    if lambda_max <= 0:
        raise ValueError(f"lambda_max must be positive, got {lambda_max}")
    m = 0
    while lambda_max / s ** m > np.pi:
        m += 1
    return m


def framelet_indices(R: int, J: int) -> list[Index]:
    return [(0, J)] + [(r, l) for r in range(1, R + 1) for l in range(J + 1)]


def _chain(index: Index, J: int) -> list[tuple[int, int]]:
    """``(function, scale offset)`` factors of ``W_{r,l}``, finest-first."""
    r, l = index
    if r == 0:
        return [(0, k) for k in range(J + 1)]
    return [(0, k) for k in range(l)] + [(r, l)]


def cheb_coefficients(gfun: Callable, degree: int, interval=(0.0, np.pi)) -> np.ndarray:
    """Degree-``degree`` Chebyshev expansion of ``gfun`` on ``interval``.

    Computed by collocation at the ``degree + 1`` Chebyshev nodes of the first
    kind; the result ``c`` satisfies ``gfun(xi) ~ sum_j c_j T_j(x)`` with ``x``
    the affine image of ``xi`` in ``[-1, 1]``.
    """
    if degree < 1:
        raise ValueError(f"Chebyshev degree must be >= 1, got {degree}")
    a, b = interval
    return np.polynomial.chebyshev.chebinterpolate(
        lambda x: np.asarray(gfun(a + (b - a) * (x + 1.0) / 2.0), dtype=float), int(degree))


def cheb_eval(coeffs: np.ndarray, xi, interval=(0.0, np.pi)) -> np.ndarray:
    a, b = interval
    x = (2.0 * np.asarray(xi, dtype=float) - (a + b)) / (b - a)
    return np.polynomial.chebyshev.chebval(x, coeffs)


def _cheb_apply(L: sp.spmatrix, coeffs: np.ndarray, scale: float, F: np.ndarray) -> np.ndarray:
    """Evaluate ``p(L / scale) F`` by the three-term recurrence, ``p`` on ``[0, pi]``."""
    a = 2.0 / (np.pi * scale)

    def X(V):
        return a * (L @ V) - V

    t_prev, t_cur = F, X(F)
    out = coeffs[0] * t_prev
    if len(coeffs) > 1:
        out = out + coeffs[1] * t_cur
    for c in coeffs[2:]:
        t_prev, t_cur = t_cur, 2.0 * X(t_cur) - t_prev
        out = out + c * t_cur
    return out


class FrameletSystem:
    """Operator bank ``{(r, l): W_{r,l}}`` over a graph.

    Build with :func:`exact_framelet_system` or :func:`cheb_framelet_system`.
    All operators are real polynomials/functions of the same symmetric
    Laplacian, hence symmetric and mutually commuting.
    """

    def __init__(self, graph: Graph, scaling: ScalingSet, J: int, s: float, mode: str,
                 laplacian: sp.csr_matrix, lambda_max: float, degree: int | None = None,
                 eig: tuple[np.ndarray, np.ndarray] | None = None):
        if J < 0:
            raise ValueError(f"level J must be >= 0, got {J}")
        self.graph = graph
        self.scaling = scaling
        self.J = int(J)
        self.s = float(s)
        self.mode = mode
        self.laplacian = laplacian
        self.lambda_max = float(lambda_max)
        self.m = coarsest_scale(self.lambda_max, self.s)
        self.degree = degree
        self.indices = framelet_indices(scaling.R, self.J)
        self._eig = eig
        self._matrices: Dict[Index, np.ndarray] = {}
        self.coefficients: Dict[int, np.ndarray] = {}
        if mode == "exact":
            lam, U = eig
            for idx in self.indices:
                self._matrices[idx] = (U * self.response(idx, lam)) @ U.T
        elif mode == "chebyshev":
            self.coefficients = {r: cheb_coefficients(scaling.functions[r], degree)
                                 for r in range(scaling.R + 1)}
        else:
            raise ValueError(f"unknown mode {mode!r}")

    def __repr__(self):
        extra = f", degree={self.degree}" if self.mode == "chebyshev" else ""
        return (f"FrameletSystem({self.scaling.name}, N={self.graph.n}, J={self.J}, s={self.s}, "
                f"m={self.m}, mode={self.mode}{extra})")

    @property
    def eigenpairs(self):
        return self._eig

    def _scale(self, offset: int) -> float:
        return self.s ** (self.m + offset)

    def response(self, index: Index, lam) -> np.ndarray:
        """Exact spectral response of ``W_{r,l}`` at Laplacian eigenvalues ``lam``."""
        lam = np.asarray(lam, dtype=float)
        out = np.ones_like(lam)
        for r, k in _chain(index, self.J):
            out = out * self.scaling(r, lam / self._scale(k))
        return out

    def approx_response(self, index: Index, lam) -> np.ndarray:
        """Spectral response of the Chebyshev approximant (exact mode: same as response)."""
        if self.mode == "exact":
            return self.response(index, lam)
        lam = np.asarray(lam, dtype=float)
        out = np.ones_like(lam)
        for r, k in _chain(index, self.J):
            out = out * cheb_eval(self.coefficients[r], lam / self._scale(k))
        return out

    def apply(self, index: Index, F) -> np.ndarray:
        """``W_{r,l} F``."""
        F = as_features(F, self.graph.n)
        if self.mode == "exact":
            return self._matrices[index] @ F
        out = F
        for r, k in _chain(index, self.J):
            out = _cheb_apply(self.laplacian, self.coefficients[r], self._scale(k), out)
        return out

    # operators are symmetric in both modes
    apply_adjoint = apply

    def matrix(self, index: Index) -> np.ndarray:
        if self.mode == "exact":
            return self._matrices[index]
        return self.apply(index, np.eye(self.graph.n))

    def analyze(self, F) -> Dict[Index, np.ndarray]:
        return analyze(self, F)

    def synthesize(self, coeffs: Mapping[Index, np.ndarray]) -> np.ndarray:
        return synthesize(self, coeffs)

    def filter(self, F, theta: Mapping[Index, np.ndarray | float]) -> np.ndarray:
        """``sum_{(r,l)} W_{r,l}^T diag(theta_{r,l}) W_{r,l} F``."""
        F = as_features(F, self.graph.n)
        out = np.zeros_like(F)
        for idx in self.indices:
            th = np.asarray(theta[idx], dtype=float)
            if th.ndim == 0:
                th = np.full(self.graph.n, float(th))
            if th.shape != (self.graph.n,):
                raise ValueError(f"theta{idx} must be a scalar or length-{self.graph.n} vector")
            out += self.apply_adjoint(idx, th[:, None] * self.apply(idx, F))
        return out


def _framelet_laplacian(g: Graph):
    _, L = normalized_operators(g, degrees="aug")
    return L


def exact_framelet_system(g: Graph, scaling: ScalingSet | None = None, J: int = 1,
                          s: float = 2.0) -> FrameletSystem:
    """Exact operator bank from a dense eigendecomposition of the Laplacian."""
    scaling = scaling or haar_scaling_set()
    validate_identity(scaling)
    if g.n > EXACT_SIZE_LIMIT:
        raise ValueError(f"exact mode needs a dense eigendecomposition; N={g.n} exceeds "
                         f"{EXACT_SIZE_LIMIT}, use cheb_framelet_system instead")
    L = _framelet_laplacian(g)
    lam, U = scipy.linalg.eigh(L.toarray())
    lam = np.clip(lam, 0.0, None)
    return FrameletSystem(g, scaling, J, s, "exact", L, max(lam[-1], 1e-12), eig=(lam, U))


def cheb_framelet_system(g: Graph, scaling: ScalingSet | None = None, J: int = 1, s: float = 2.0,
                         degree: int = 3) -> FrameletSystem:
    """Matrix-free bank: each ``g_r`` replaced by its Chebyshev approximant."""
    scaling = scaling or haar_scaling_set()
    validate_identity(scaling)
    L = _framelet_laplacian(g)
    return FrameletSystem(g, scaling, J, s, "chebyshev", L, spectral_radius(L), degree=int(degree))


def analyze(sys: FrameletSystem, F) -> Dict[Index, np.ndarray]:
    """Coefficient bank ``{(r, l): W_{r,l} F}``."""
    F = as_features(F)
    if F.shape[0] != sys.graph.n:
        raise ValueError(f"F has {F.shape[0]} rows, framelet system has {sys.graph.n} nodes")
    return {idx: sys.apply(idx, F) for idx in sys.indices}


def synthesize(sys: FrameletSystem, coeffs: Mapping[Index, np.ndarray]) -> np.ndarray:
    """``sum_{(r,l)} W_{r,l}^T coeffs[(r,l)]``."""
    missing = [idx for idx in sys.indices if idx not in coeffs]
    if missing:
        raise ValueError(f"coefficient bank is missing indices {missing}")
    out = None
    for idx in sys.indices:
        term = sys.apply_adjoint(idx, coeffs[idx])
        out = term if out is None else out + term
    return out


_COEFF_RE = re.compile(r"coeff_r(\d+)_l(\d+)\.csv$")


def save_coefficients(coeffs: Mapping[Index, np.ndarray], directory: str | os.PathLike) -> list[Path]:
    """Write each coefficient matrix to ``coeff_r{r}_l{l}.csv`` under ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for (r, l), C in sorted(coeffs.items()):
        path = directory / f"coeff_r{r}_l{l}.csv"
        np.savetxt(path, np.atleast_2d(np.asarray(C, dtype=float).reshape(len(C), -1)),
                   delimiter=",", fmt="%.17g")
        paths.append(path)
    return paths


def load_coefficients(directory: str | os.PathLike) -> Dict[Index, np.ndarray]:
    out = {}
    for path in sorted(Path(directory).iterdir()):
        m = _COEFF_RE.match(path.name)
        if m:
            out[(int(m.group(1)), int(m.group(2)))] = np.loadtxt(path, delimiter=",", ndmin=2)
    return out


def haar_theta(sys: FrameletSystem, theta: float) -> Dict[Index, float]:
    """Dynamics-controlling filter: 1 on the low-pass index, ``theta`` on every high-pass one."""
    return {idx: (1.0 if idx[0] == 0 else float(theta)) for idx in sys.indices}
