"""The p-Laplacian implicit layer.

The layer returns an approximate minimizer of

    L(F) = S_p^phi(F) + mu ||F - Y||_F^2,   S_p^phi(F) = 1/2 sum_i phi(||grad F(v_i)||_p)

computed by the message-passing fixed-point iteration

    F <- alpha D^-1/2 M D^-1/2 F + beta Y

with ``M_ij = zeta_ij w_ij ||grad F[i,j]||^(p-2)``,
``alpha_ii = 1 / (sum_j M_ij / d_ii + 2 mu)`` and ``beta = 2 mu alpha``.
All degrees here are raw degrees.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .energy import (EnergyRecord, EnergyTrace, _scaled_message, dirichlet_energy,
                     generalized_energy_epf, rayleigh_normalized_energy)
from .exceptions import AdmissibilityError, NumericalError
from .graph import Graph, _row_sum, as_features, edge_norms, graph_gradient

log = logging.getLogger(__name__)


def _unimodal_sup(h, peak, lo, hi):
    # sup of a function increasing up to `peak` and decreasing after it
    return float(h(min(max(peak, lo), hi)))


@dataclass(frozen=True)
class PowerP:
    """``phi(xi) = xi^p``, the plain p-Laplacian regularizer."""

    name = "power"

    def value(self, xi, p):
        return np.asarray(xi, dtype=float) ** p

    def derivative(self, xi, p):
        return p * np.asarray(xi, dtype=float) ** (p - 1)

    def ratio(self, a, p):
        return np.full(np.shape(a), float(p))

    def max_p(self):
        return np.inf

    def zeta_bound(self, p, a_min, a_max):
        return float(p)


@dataclass(frozen=True)
class Tikhonov:
    """``phi(xi) = xi^2``."""

    name = "tikhonov"

    def value(self, xi, p):
        return np.asarray(xi, dtype=float) ** 2

    def derivative(self, xi, p):
        return 2.0 * np.asarray(xi, dtype=float)

    def ratio(self, a, p):
        return 2.0 * np.asarray(a, dtype=float) ** (2.0 - p)

    def max_p(self):
        return 2.0

    def zeta_bound(self, p, a_min, a_max):
        return 2.0 * a_max ** (2.0 - p)


@dataclass(frozen=True)
class Identity:
    """``phi(xi) = xi``; with ``p = 1`` this is total variation."""

    name = "identity"

    def value(self, xi, p):
        return np.asarray(xi, dtype=float)

    def derivative(self, xi, p):
        return np.ones(np.shape(xi))

    def ratio(self, a, p):
        return np.asarray(a, dtype=float) ** (1.0 - p)

    def max_p(self):
        return 1.0

    def zeta_bound(self, p, a_min, a_max):
        return a_max ** (1.0 - p)


@dataclass(frozen=True)
class LogDiffusion:
    """``phi(xi) = r^2 log(1 + xi^2 / r^2)`` (Perona-Malik type)."""

    r: float = 1.0
    name = "log_diffusion"

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("LogDiffusion needs r > 0")

    def value(self, xi, p):
        xi = np.asarray(xi, dtype=float)
        return self.r ** 2 * np.log1p(xi ** 2 / self.r ** 2)

    def derivative(self, xi, p):
        xi = np.asarray(xi, dtype=float)
        return 2.0 * xi / (1.0 + xi ** 2 / self.r ** 2)

    def ratio(self, a, p):
        a = np.asarray(a, dtype=float)
        return 2.0 * a ** (2.0 - p) / (1.0 + a ** 2 / self.r ** 2)

    def max_p(self):
        return 2.0

    def zeta_bound(self, p, a_min, a_max):
        peak = self.r * np.sqrt((2.0 - p) / p)
        return _unimodal_sup(lambda a: self.ratio(a, p), peak, a_min, a_max)


@dataclass(frozen=True)
class SoftAbs:
    """``phi(xi) = sqrt(xi^2 + eps^2) - eps``."""

    eps: float = 1.0
    name = "soft_abs"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("SoftAbs needs eps > 0")

    def value(self, xi, p):
        xi = np.asarray(xi, dtype=float)
        return np.sqrt(xi ** 2 + self.eps ** 2) - self.eps

    def derivative(self, xi, p):
        xi = np.asarray(xi, dtype=float)
        return xi / np.sqrt(xi ** 2 + self.eps ** 2)

    def ratio(self, a, p):
        a = np.asarray(a, dtype=float)
        return a ** (2.0 - p) / np.sqrt(a ** 2 + self.eps ** 2)

    def max_p(self):
        return 2.0

    def zeta_bound(self, p, a_min, a_max):
        if p <= 1.0:
            peak = np.inf
        else:
            peak = self.eps * np.sqrt((2.0 - p) / (p - 1.0)) if p < 2.0 else 0.0
        return _unimodal_sup(lambda a: self.ratio(a, p), peak, a_min, a_max)


PHI_VARIANTS = {"power": PowerP, "tikhonov": Tikhonov, "identity": Identity,
                "log_diffusion": LogDiffusion, "soft_abs": SoftAbs}


def make_phi(desc) -> object:
    """Build a phi variant from a name, ``{"name": ..., **params}`` or an instance."""
    if isinstance(desc, (PowerP, Tikhonov, Identity, LogDiffusion, SoftAbs)):
        return desc
    if isinstance(desc, str):
        desc = {"name": desc}
    desc = dict(desc)
    name = desc.pop("name")
    try:
        return PHI_VARIANTS[name](**desc)
    except KeyError:
        raise ValueError(f"unknown phi variant {name!r}; choose from {sorted(PHI_VARIANTS)}") from None


def phi_to_dict(phi) -> dict:
    out = {"name": phi.name}
    if isinstance(phi, LogDiffusion):
        out["r"] = phi.r
    elif isinstance(phi, SoftAbs):
        out["eps"] = phi.eps
    return out


def check_admissible(phi, p: float) -> None:
    if p < 1:
        raise AdmissibilityError(f"p must be >= 1, got {p}")
    if p > phi.max_p():
        raise AdmissibilityError(
            f"phi={phi.name} with p={p}: phi'(xi)/xi^(p-1) is unbounded, so zeta has no "
            f"bound C; this variant requires p <= {phi.max_p():g}")


def admissible_pairs(p_values, phis=None):
    """All ``(phi, p)`` combinations with bounded zeta."""
    phis = phis if phis is not None else [PowerP(), Tikhonov(), Identity(), LogDiffusion(), SoftAbs()]
    return [(phi, p) for phi in phis for p in p_values if 1 <= p <= phi.max_p()]


def phi_eval(phi, xi, p: float = 2.0):
    """``(phi(xi), phi'(xi))``."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi < 0):
        raise ValueError("phi is evaluated at norms, xi must be >= 0")
    v, d = phi.value(xi, p), phi.derivative(xi, p)
    if v.ndim == 0:
        return float(v), float(d)
    return v, d


@dataclass(frozen=True)
class PLapConfig:
    p: float = 2.0
    mu: float = 1.0
    phi: object = field(default_factory=PowerP)
    max_iters: int = 50
    tol: float = 1e-6
    eps_grad: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "phi", make_phi(self.phi))
        if not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if not self.eps_grad > 0:
            raise ValueError("eps_grad must be > 0")
        if int(self.max_iters) < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        check_admissible(self.phi, self.p)

    def to_dict(self) -> dict:
        return {"p": self.p, "mu": self.mu, "phi": phi_to_dict(self.phi), "max_iters": self.max_iters,
                "tol": self.tol, "eps_grad": self.eps_grad}


@dataclass
class IterationState:
    """Quantities of one iteration, all evaluated at ``F``."""

    F: np.ndarray
    M: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    k: int = 0
    zeta: Optional[np.ndarray] = None
    node_norms: Optional[np.ndarray] = None


def _floored_pow(x, e, floor):
    if e == 0:
        return np.ones_like(x)
    return np.maximum(x, floor) ** e


def zeta_matrix(g: Graph, F, cfg: PLapConfig, grad=None) -> np.ndarray:
    """Per-directed-edge ``zeta_ij = (q_i + q_j) / 2`` with ``q = phi'(a) / a^(p-1)``."""
    check_admissible(cfg.phi, cfg.p)
    if grad is None:
        grad = graph_gradient(g, F)
    nrm = edge_norms(g, grad=grad)
    a = _row_sum(g, nrm ** cfg.p) ** (1.0 / cfg.p)
    q = cfg.phi.ratio(np.maximum(a, cfg.eps_grad), cfg.p)
    return 0.5 * (q[g.rows] + q[g.indices])


def m_matrix(g: Graph, F, cfg: PLapConfig, grad=None, zeta=None) -> np.ndarray:
    """Edge weights ``M_ij = zeta_ij w_ij max(||grad F[i,j]||, eps)^(p-2)``."""
    if grad is None:
        grad = graph_gradient(g, F)
    if zeta is None:
        zeta = zeta_matrix(g, F, cfg, grad=grad)
    nrm = edge_norms(g, grad=grad)
    return zeta * g.weights * _floored_pow(nrm, cfg.p - 2.0, cfg.eps_grad)


def alpha_beta(g: Graph, M, mu: float):
    if not mu > 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    alpha = 1.0 / (_row_sum(g, np.asarray(M, dtype=float)) / g.deg_raw + 2.0 * mu)
    return alpha, 2.0 * mu * alpha


def iteration_state(g: Graph, F, cfg: PLapConfig, k: int = 0) -> IterationState:
    F = as_features(F, g.n)
    grad = graph_gradient(g, F)
    zeta = zeta_matrix(g, F, cfg, grad=grad)
    M = m_matrix(g, F, cfg, grad=grad, zeta=zeta)
    alpha, beta = alpha_beta(g, M, cfg.mu)
    return IterationState(F, M, alpha, beta, k, zeta)


def _apply_state(g: Graph, state: IterationState, Y: np.ndarray) -> np.ndarray:
    F_next = state.alpha[:, None] * _scaled_message(g, state.M, state.F) + state.beta[:, None] * Y
    bad = ~np.all(np.isfinite(F_next), axis=1)
    if np.any(bad):
        raise NumericalError(f"non-finite value at node {int(np.flatnonzero(bad)[0])} "
                             f"in iteration {state.k}")
    return F_next


def iterate_step(g: Graph, F, Y, cfg: PLapConfig, k: int = 0):
    """One message-passing step; returns ``(F_next, state at F)``."""
    F = as_features(F, g.n)
    Y = as_features(Y, g.n, "Y")
    if Y.shape != F.shape:
        raise ValueError(f"Y shape {Y.shape} does not match F shape {F.shape}")
    state = iteration_state(g, F, cfg, k)
    return _apply_state(g, state, Y), state


def p_dirichlet_form(g: Graph, F, p: float) -> float:
    """``1/2 sum over ordered pairs of ||grad F[i,j]||^p``."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return 0.5 * float(np.sum(edge_norms(g, F) ** p))


def phi_regularizer(g: Graph, F, cfg: PLapConfig) -> float:
    """``1/2 sum_i phi(||grad F(v_i)||_p)``."""
    nrm = edge_norms(g, F)
    a = _row_sum(g, nrm ** cfg.p) ** (1.0 / cfg.p)
    return 0.5 * float(np.sum(cfg.phi.value(a, cfg.p)))


def fidelity(F, Y, mu: float) -> float:
    D = as_features(F) - as_features(Y)
    return mu * float(np.sum(D * D))


def objective(g: Graph, F, Y, cfg: PLapConfig) -> float:
    return phi_regularizer(g, F, cfg) + fidelity(F, Y, cfg.mu)


def analytic_gradient(g: Graph, F, Y, cfg: PLapConfig) -> np.ndarray:
    """Gradient of the objective, ``(F - iterate_step(F)) / alpha`` row-wise."""
    F_next, state = iterate_step(g, F, Y, cfg)
    return (as_features(F) - F_next) / state.alpha[:, None]


def _record(g, k, F, Y, cfg, state, laplacian) -> EnergyRecord:
    reg = phi_regularizer(g, F, cfg)
    fid = fidelity(F, Y, cfg.mu)
    norm = np.linalg.norm(F)
    ray = rayleigh_normalized_energy(g, F, laplacian) if norm > 0 else 0.0
    return EnergyRecord(k, reg + fid, reg, fid, dirichlet_energy(g, F),
                        generalized_energy_epf(g, F, Y, state, cfg.mu), ray)


def solve_implicit(g: Graph, Y, cfg: PLapConfig, F0=None, laplacian=None,
                   descent_slack: float = 1e-9):
    """Run the fixed-point iteration from ``F0`` (default ``Y``).

    Returns ``(F_star, EnergyTrace)``.  The trace holds one record per iterate,
    starting with ``F0``; the ``epf`` column uses ``Y`` as the source term and
    ``alpha``/``M`` evaluated at the recorded iterate.  Objective increases are
    logged and listed in ``trace.descent_violations`` but do not stop the run.
    """
    Y = as_features(Y, g.n, "Y")
    F = Y.copy() if F0 is None else as_features(F0, g.n, "F0").copy()
    if F.shape != Y.shape:
        raise ValueError(f"F0 shape {F.shape} does not match Y shape {Y.shape}")
    trace = EnergyTrace()
    state = iteration_state(g, F, cfg, 0)
    trace.append(_record(g, 0, F, Y, cfg, state, laplacian))
    for k in range(int(cfg.max_iters)):
        F_next = _apply_state(g, state, Y)
        change = np.linalg.norm(F_next - F)
        scale = np.linalg.norm(F)
        F = F_next
        state = iteration_state(g, F, cfg, k + 1)
        rec = _record(g, k + 1, F, Y, cfg, state, laplacian)
        if rec.objective > trace.records[-1].objective + descent_slack:
            trace.descent_violations.append(k + 1)
            log.warning("objective increased at iteration %d: %.12g -> %.12g (mu=%g may be below "
                        "the descent threshold)", k + 1, trace.records[-1].objective, rec.objective, cfg.mu)
        trace.append(rec)
        if change <= cfg.tol * (scale if scale > 0 else 1.0):
            break
    return F, trace
