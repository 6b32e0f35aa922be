"""Energy diagnostics: Dirichlet, normalized Rayleigh, the implicit-layer energy
``E^PF``, the framelet energy ``E^Fr`` and LFD/HFD classification."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, List, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .graph import Graph, as_features, graph_gradient, gradient_laplacian

TRACE_COLUMNS = ("k", "objective", "regularizer", "fidelity", "dirichlet", "epf", "rayleigh")


@dataclass
class EnergyRecord:
    k: int
    objective: float
    regularizer: float
    fidelity: float
    dirichlet: float
    epf: float
    rayleigh: float


@dataclass
class EnergyTrace:
    """Per-iteration energy records, plus any descent violations observed."""

    records: List[EnergyRecord] = field(default_factory=list)
    descent_violations: List[int] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def append(self, record: EnergyRecord) -> None:
        self.records.append(record)

    def extend(self, other: "EnergyTrace", renumber: bool = True) -> None:
        offset = (self.records[-1].k + 1) if (renumber and self.records) else 0
        for r in other.records:
            self.records.append(EnergyRecord(**{**asdict(r), "k": r.k + offset}))
        self.descent_violations.extend(k + offset for k in other.descent_violations)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([r.k] + [repr(float(getattr(r, c))) for c in TRACE_COLUMNS[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EnergyTrace":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls([EnergyRecord(int(r["k"]), *(float(r[c]) for c in TRACE_COLUMNS[1:])) for r in rows])


@dataclass(frozen=True)
class DynamicsVerdict:
    verdict: str
    terminal_rayleigh: float
    rho_half: float

    def to_json(self) -> str:
        return json.dumps({"verdict": self.verdict, "terminal_rayleigh": self.terminal_rayleigh,
                           "rho_half": self.rho_half})


def dirichlet_energy(g: Graph, F) -> float:
    """``1/2 sum_i sum_j ||sqrt(w_ij/d_jj) f_j - sqrt(w_ij/d_ii) f_i||^2`` (raw degrees)."""
    grad = graph_gradient(g, F)
    return 0.5 * float(np.sum(grad * grad))


def quadratic_energy(L, F) -> float:
    """``tr(F^T L F) / 2``."""
    F = as_features(F)
    return 0.5 * float(np.sum(F * (L @ F)))


def rayleigh_normalized_energy(g: Graph, F, laplacian=None) -> float:
    """Energy of ``F / ||F||_F``.

    With ``laplacian=None`` this is ``dirichlet_energy(F / ||F||)``, i.e. the
    quadratic form of :func:`plufg.graph.gradient_laplacian`.  Passing another
    symmetric operator ``L`` (e.g. the framelet Laplacian) evaluates
    ``tr(F^T L F) / (2 ||F||^2)`` instead; in both cases the value lies in
    ``[0, rho(L) / 2]``.
    """
    F = as_features(F, g.n)
    norm = np.linalg.norm(F)
    if norm == 0:
        raise ValueError("Rayleigh energy undefined for the zero signal")
    if laplacian is None:
        return dirichlet_energy(g, F / norm)
    return quadratic_energy(laplacian, F / norm)


def _scaled_message(g: Graph, M: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``D^-1/2 M D^-1/2 F`` with ``M`` aligned to the CSR entries."""
    coef = M / np.sqrt(g.deg_raw[g.rows] * g.deg_raw[g.indices])
    return np.add.reduceat(coef[:, None] * F[g.indices], g.indptr[:-1], axis=0)


def generalized_energy_epf(g: Graph, F_next, F0, state, mu: float) -> float:
    """Implicit-layer energy of ``F_next`` with source ``F0``.

    ``<F, 1/2 (F - alpha D^-1/2 M D^-1/2 F) + 2 mu alpha F0>`` where ``alpha``
    and ``M`` (from ``state``) are evaluated at ``F_next``.  Kronecker factors
    act channel-wise, so nothing of size ``Nc x Nc`` is formed.
    """
    F = as_features(F_next, g.n, "F_next")
    F0 = as_features(F0, name="F0")
    if F0.shape != F.shape:
        raise ValueError(f"F0 shape {F0.shape} does not match F_next shape {F.shape}")
    alpha = np.asarray(state.alpha)[:, None]
    diffused = alpha * _scaled_message(g, np.asarray(state.M), F)
    return float(np.sum(F * (0.5 * (F - diffused) + 2.0 * mu * alpha * F0)))


def _check_symmetric(name, A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, rtol=0, atol=1e-12):
        raise ValueError(f"{name} must be a symmetric square matrix")
    return A


def framelet_energy_efr(sys, F, theta: Mapping, W_hat=None, Omega=None) -> float:
    """Framelet energy summed over the index set.

    Each index contributes ``1/2 tr((W F)^T (W F) Omega) -
    1/2 tr((W F)^T diag(theta) (W F) W_hat)`` with ``W = W_{r,l}``.
    """
    F = as_features(F, sys.graph.n)
    c = F.shape[1]
    W_hat = np.eye(c) if W_hat is None else _check_symmetric("W_hat", W_hat)
    Omega = np.eye(c) if Omega is None else _check_symmetric("Omega", Omega)
    if W_hat.shape != (c, c) or Omega.shape != (c, c):
        raise ValueError(f"channel matrices must be {c}x{c}")
    total = 0.0
    for idx in sys.indices:
        th = np.asarray(theta[idx], dtype=float)
        th = np.full(sys.graph.n, float(th)) if th.ndim == 0 else th
        C = sys.apply(idx, F)
        total += 0.5 * np.sum(C * (C @ Omega)) - 0.5 * np.sum(C * (th[:, None] * C @ W_hat))
    return float(total)


def classify_dynamics(trace, rho: float, lfd_eps: float = 1e-3, hfd_eps: float = 1e-3,
                      min_length: int = 10) -> DynamicsVerdict:
    """Label a trajectory LFD, HFD or Indeterminate from its terminal Rayleigh energy.

    ``trace`` is an EnergyTrace or a plain sequence of Rayleigh values; ``rho``
    is the spectral radius of the Laplacian those values were measured with.
    """
    values = trace.column("rayleigh") if isinstance(trace, EnergyTrace) else np.asarray(trace, dtype=float)
    rho_half = rho / 2.0
    if len(values) == 0:
        return DynamicsVerdict("Indeterminate", float("nan"), rho_half)
    terminal = float(values[-1])
    if len(values) < min_length:
        return DynamicsVerdict("Indeterminate", terminal, rho_half)
    if terminal <= lfd_eps:
        return DynamicsVerdict("LFD", terminal, rho_half)
    if abs(terminal - rho_half) <= hfd_eps:
        return DynamicsVerdict("HFD", terminal, rho_half)
    return DynamicsVerdict("Indeterminate", terminal, rho_half)


def framelet_dynamics(sys, F0, theta: float, steps: int, W_hat=None) -> np.ndarray:
    """Rayleigh energies (framelet Laplacian) of a repeated linear framelet layer.

    The signal is renormalized every step; only its direction matters here.
    """
    from .framelet import haar_theta

    th = haar_theta(sys, theta)
    F = as_features(F0, sys.graph.n)
    F = F / np.linalg.norm(F)
    out = np.empty(steps)
    for k in range(steps):
        F = sys.filter(F, th)
        if W_hat is not None:
            F = F @ W_hat
        F = F / np.linalg.norm(F)
        out[k] = quadratic_energy(sys.laplacian, F)
    return out
