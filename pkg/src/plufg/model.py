"""pL-UFG forward pass and a decoupled linear classification head.

The model alternates a spectral framelet layer

    Y = sigma(sum_{(r,l)} W_{r,l}^T diag(theta_{r,l}) W_{r,l} F W_hat)

with the p-Laplacian implicit layer ``F = argmin S_p^phi(F) + mu ||F - Y||^2``.
Setting ``theta = 1`` on the low-pass index and ``theta`` on every high-pass
index gives the two controlled variants: LFD for ``theta < 1`` and HFD for
``theta > 1``.

Training is decoupled: features are propagated with a fixed ``W_hat`` and a
multinomial logistic head is fit on the result.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .energy import EnergyTrace
from .framelet import FrameletSystem, cheb_framelet_system, exact_framelet_system, haar_theta
from .graph import Graph, as_features
from .plap import PLapConfig, make_phi, phi_to_dict, solve_implicit

ACTIVATIONS = {"identity": lambda x: x, "relu": lambda x: np.maximum(x, 0.0)}
DEFAULT_THETA = {"LFD": 0.2, "HFD": 2.0}


def _activation(name):
    try:
        return ACTIVATIONS[str(name).lower()]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def check_dynamics(dynamics: str, theta: float) -> None:
    if dynamics == "LFD":
        if not 0 <= theta < 1:
            raise ValueError(f"LFD dynamics needs theta in [0, 1), got {theta}")
    elif dynamics == "HFD":
        if not theta > 1:
            raise ValueError(f"HFD dynamics needs theta > 1, got {theta}")
    else:
        raise ValueError(f"dynamics must be 'LFD' or 'HFD', got {dynamics!r}")


@dataclass(frozen=True)
class HeadConfig:
    lr: float = 0.5
    epochs: int = 300
    l2: float = 1e-3
    standardize: bool = True


@dataclass(frozen=True)
class ModelConfig:
    dynamics: str = "HFD"
    theta: Optional[float] = None
    J: int = 1
    s: float = 2.0
    degree: int = 3
    mode: str = "exact"
    plap: PLapConfig = field(default_factory=PLapConfig)
    framelet_layers: int = 1
    channel_mixer: Optional[tuple] = None
    activation: str = "relu"
    head: HeadConfig = field(default_factory=HeadConfig)
    seed: int = 0
    dataset: Optional[str] = None

    def __post_init__(self):
        theta = DEFAULT_THETA.get(self.dynamics) if self.theta is None else float(self.theta)
        object.__setattr__(self, "theta", theta)
        check_dynamics(self.dynamics, theta)
        if isinstance(self.plap, dict):
            object.__setattr__(self, "plap", PLapConfig(**self.plap))
        if isinstance(self.head, dict):
            object.__setattr__(self, "head", HeadConfig(**self.head))
        if self.mode not in ("exact", "chebyshev"):
            raise ValueError(f"mode must be 'exact' or 'chebyshev', got {self.mode!r}")
        if int(self.framelet_layers) < 1:
            raise ValueError("framelet_layers must be >= 1")
        _activation(self.activation)
        if self.channel_mixer is not None:
            W = np.asarray(self.channel_mixer, dtype=float)
            if W.ndim != 2 or W.shape[0] != W.shape[1]:
                raise ValueError("channel_mixer must be a square matrix")
            object.__setattr__(self, "channel_mixer", tuple(map(tuple, W.tolist())))

    def with_seed(self, seed: int) -> "ModelConfig":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["plap"] = self.plap.to_dict()
        d["head"] = asdict(self.head)
        if self.channel_mixer is not None:
            d["channel_mixer"] = [list(r) for r in self.channel_mixer]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown ModelConfig fields: {sorted(unknown)}")
        if "plap" in d and isinstance(d["plap"], dict):
            plap = dict(d["plap"])
            if "phi" in plap:
                plap["phi"] = make_phi(plap["phi"])
            d["plap"] = PLapConfig(**plap)
        if "head" in d and isinstance(d["head"], dict):
            d["head"] = HeadConfig(**d["head"])
        return cls(**d)

    @classmethod
    def from_json(cls, path_or_text) -> "ModelConfig":
        """Load from a JSON file path or a JSON string; ``PLUFG_SEED`` overrides ``seed``."""
        text = str(path_or_text)
        if not text.lstrip().startswith("{"):
            with open(text) as fh:
                text = fh.read()
        cfg = cls.from_dict(json.loads(text))
        env = os.environ.get("PLUFG_SEED")
        return cfg.with_seed(int(env)) if env not in (None, "") else cfg


def build_framelet_system(g: Graph, cfg: ModelConfig) -> FrameletSystem:
    if cfg.mode == "exact":
        return exact_framelet_system(g, J=cfg.J, s=cfg.s)
    return cheb_framelet_system(g, J=cfg.J, s=cfg.s, degree=cfg.degree)


def spectral_framelet_layer(sys: FrameletSystem, F, theta_diag, W_hat=None, activation="identity"):
    """``sigma(sum W^T diag(theta) W F W_hat)``; ``theta_diag`` maps each index to a scalar or length-N vector."""
    F = as_features(F, sys.graph.n)
    out = sys.filter(F, theta_diag)
    if W_hat is not None:
        W_hat = np.asarray(W_hat, dtype=float)
        if W_hat.shape != (F.shape[1], F.shape[1]):
            raise ValueError(f"W_hat must be {F.shape[1]}x{F.shape[1]}, got {W_hat.shape}")
        out = out @ W_hat
    return _activation(activation)(out)


def plufg_forward(g: Graph, X, cfg: ModelConfig, sys: Optional[FrameletSystem] = None):
    """Run ``framelet_layers`` rounds of framelet layer then implicit layer.

    Returns ``(F_out, trace)``; the trace concatenates the solver traces of
    every round, with Rayleigh energies measured under the framelet Laplacian.
    """
    F = as_features(X, g.n, "X")
    sys = sys if sys is not None else build_framelet_system(g, cfg)
    theta = haar_theta(sys, cfg.theta)
    trace = EnergyTrace()
    for _ in range(int(cfg.framelet_layers)):
        Y = spectral_framelet_layer(sys, F, theta, cfg.channel_mixer, cfg.activation)
        F, tr = solve_implicit(g, Y, cfg.plap, laplacian=sys.laplacian)
        trace.extend(tr)
    return F, trace


def framelet_only(g: Graph, X, cfg: ModelConfig, sys: Optional[FrameletSystem] = None):
    """The same forward pass with the implicit layers removed."""
    F = as_features(X, g.n, "X")
    sys = sys if sys is not None else build_framelet_system(g, cfg)
    theta = haar_theta(sys, cfg.theta)
    for _ in range(int(cfg.framelet_layers)):
        F = spectral_framelet_layer(sys, F, theta, cfg.channel_mixer, cfg.activation)
    return F


class SpectralFrameletLayer(TransformerMixin, BaseEstimator):
    """Framelet filtering of node features over a fixed graph."""

    def __init__(self, graph=None, theta=1.0, J=1, s=2.0, mode="exact", degree=3,
                 activation="identity", W_hat=None):
        self.graph = graph
        self.theta = theta
        self.J = J
        self.s = s
        self.mode = mode
        self.degree = degree
        self.activation = activation
        self.W_hat = W_hat

    def fit(self, X=None, y=None):
        if self.graph is None:
            raise ValueError("SpectralFrameletLayer needs a graph")
        if self.mode == "exact":
            self.system_ = exact_framelet_system(self.graph, J=self.J, s=self.s)
        else:
            self.system_ = cheb_framelet_system(self.graph, J=self.J, s=self.s, degree=self.degree)
        self.theta_ = (dict(self.theta) if isinstance(self.theta, dict)
                       else haar_theta(self.system_, self.theta))
        return self

    def transform(self, X):
        check_is_fitted(self, "system_")
        X = check_array(X, ensure_2d=False)
        return spectral_framelet_layer(self.system_, X, self.theta_, self.W_hat, self.activation)


class PLaplacianLayer(TransformerMixin, BaseEstimator):
    """Implicit p-Laplacian smoothing layer; ``transform`` returns the solver fixed point."""

    def __init__(self, graph=None, p=2.0, mu=1.0, phi="power", max_iters=50, tol=1e-6,
                 eps_grad=1e-8):
        self.graph = graph
        self.p = p
        self.mu = mu
        self.phi = phi
        self.max_iters = max_iters
        self.tol = tol
        self.eps_grad = eps_grad

    def fit(self, X=None, y=None):
        if self.graph is None:
            raise ValueError("PLaplacianLayer needs a graph")
        self.config_ = PLapConfig(p=self.p, mu=self.mu, phi=self.phi, max_iters=self.max_iters,
                                  tol=self.tol, eps_grad=self.eps_grad)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        F, self.trace_ = solve_implicit(self.graph, check_array(X, ensure_2d=False), self.config_)
        return F


class PLUFG(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`plufg_forward`."""

    def __init__(self, graph=None, dynamics="HFD", theta=None, mu=1.0, p=2.0, phi="power",
                 J=1, s=2.0, mode="exact", degree=3, framelet_layers=1, activation="relu",
                 max_iters=50, tol=1e-6):
        self.graph = graph
        self.dynamics = dynamics
        self.theta = theta
        self.mu = mu
        self.p = p
        self.phi = phi
        self.J = J
        self.s = s
        self.mode = mode
        self.degree = degree
        self.framelet_layers = framelet_layers
        self.activation = activation
        self.max_iters = max_iters
        self.tol = tol

    @classmethod
    def from_config(cls, graph, cfg: ModelConfig) -> "PLUFG":
        return cls(graph, cfg.dynamics, cfg.theta, cfg.plap.mu, cfg.plap.p, phi_to_dict(cfg.plap.phi),
                   cfg.J, cfg.s, cfg.mode, cfg.degree, cfg.framelet_layers, cfg.activation,
                   cfg.plap.max_iters, cfg.plap.tol)

    def config(self) -> ModelConfig:
        plap = PLapConfig(p=self.p, mu=self.mu, phi=self.phi, max_iters=self.max_iters, tol=self.tol)
        return ModelConfig(dynamics=self.dynamics, theta=self.theta, J=self.J, s=self.s,
                           degree=self.degree, mode=self.mode, plap=plap,
                           framelet_layers=self.framelet_layers, activation=self.activation)

    def fit(self, X=None, y=None):
        if self.graph is None:
            raise ValueError("PLUFG needs a graph")
        self.config_ = self.config()
        self.system_ = build_framelet_system(self.graph, self.config_)
        return self

    def transform(self, X):
        check_is_fitted(self, "system_")
        F, self.trace_ = plufg_forward(self.graph, check_array(X, ensure_2d=False),
                                       self.config_, self.system_)
        return F


class LinearHead(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression fit by full-batch gradient descent.

    Weights start from a seeded ``N(0, 0.01^2)`` draw; the loss is mean
    cross-entropy plus ``l2/2 ||W||^2`` (bias unpenalized).
    """

    def __init__(self, lr=0.5, epochs=300, l2=1e-3, standardize=True, seed=0):
        self.lr = lr
        self.epochs = epochs
        self.l2 = l2
        self.standardize = standardize
        self.seed = seed

    def _prep(self, X):
        return (X - self.mean_) / self.scale_

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValueError("training set contains a single class; a classifier needs at least two")
        idx = np.searchsorted(self.classes_, y)
        n, c = X.shape
        K = len(self.classes_)
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            sd = X.std(axis=0)
            self.scale_ = np.where(sd > 0, sd, 1.0)
        else:
            self.mean_, self.scale_ = np.zeros(c), np.ones(c)
        Z = self._prep(X)
        T = np.eye(K)[idx]
        rng = np.random.default_rng(self.seed)
        W = 0.01 * rng.standard_normal((c, K))
        b = np.zeros(K)
        self.loss_curve_ = []
        for _ in range(int(self.epochs)):
            logits = Z @ W + b
            P = softmax(logits, axis=1)
            G = (P - T) / n
            self.loss_curve_.append(float(-np.sum(T * log_softmax(logits, axis=1)) / n
                                          + 0.5 * self.l2 * np.sum(W * W)))
            W = W - self.lr * (Z.T @ G + self.l2 * W)
            b = b - self.lr * G.sum(axis=0)
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise FloatingPointError("head training diverged; lower the learning rate")
        self.coef_, self.intercept_ = W, b
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        return self._prep(check_array(X)) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X):
        # argmax returns the first maximum, i.e. the lowest class index on ties
        check_is_fitted(self, "coef_")
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def fit_head(features, labels, train_mask, head_cfg: Optional[HeadConfig] = None, seed: int = 0) -> LinearHead:
    head_cfg = head_cfg or HeadConfig()
    train_mask = np.asarray(train_mask, dtype=bool)
    if not train_mask.any():
        raise ValueError("empty training mask")
    X = np.asarray(features)[train_mask]
    return LinearHead(head_cfg.lr, head_cfg.epochs, head_cfg.l2, head_cfg.standardize, seed).fit(
        X, np.asarray(labels)[train_mask])


def evaluate(head, features, labels, mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("cannot evaluate on an empty mask")
    pred = head.predict(np.asarray(features)[mask])
    return float(np.mean(pred == np.asarray(labels)[mask]))


def run_experiment(ds, cfg: ModelConfig, seed: Optional[int] = None):
    """Propagate, fit the head on the train mask and score every split.

    Returns ``(result_row, trace)`` with ``result_row`` keyed by the results CSV columns.
    """
    seed = cfg.seed if seed is None else int(seed)
    F, trace = plufg_forward(ds.graph, ds.features, cfg)
    head = fit_head(F, ds.labels, ds.masks["train"], cfg.head, seed)
    row = {"dataset": ds.meta.get("name", "unnamed"), "dynamics": cfg.dynamics, "theta": cfg.theta,
           "mu": cfg.plap.mu, "p": cfg.plap.p, "seed": seed}
    for split in ("train", "val", "test"):
        row[f"{split}_acc"] = evaluate(head, F, ds.labels, ds.masks[split])
    return row, trace
