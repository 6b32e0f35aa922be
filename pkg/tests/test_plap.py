import json
import logging
from pathlib import Path

import numpy as np
import pytest

from plufg.energy import dirichlet_energy
from plufg.exceptions import AdmissibilityError, NumericalError
from plufg.graph import node_gradient_pnorm
from plufg.plap import (Identity, LogDiffusion, PLapConfig, PowerP, SoftAbs, Tikhonov, admissible_pairs,
                        alpha_beta, analytic_gradient, check_admissible, iterate_step, m_matrix,
                        make_phi, objective, p_dirichlet_form, phi_eval, phi_regularizer,
                        phi_to_dict, solve_implicit, zeta_matrix)

from conftest import cycle_graph, edge2, path_graph, random_graph

FROZEN = json.loads((Path(__file__).parent / "data" / "frozen_oracles.json").read_text())
TOY_Y = np.array([0.0, 2.0])
ALL_PHI = [PowerP(), Tikhonov(), Identity(), LogDiffusion(1.0), SoftAbs(1.0)]


def toy_cfg(**kw):
    return PLapConfig(**{"p": 2.0, "mu": 1.0, "phi": "tikhonov", **kw})


def test_phi_eval_examples():
    assert phi_eval(PowerP(), 3.0, 2.0) == (9.0, 6.0)
    assert phi_eval(SoftAbs(1.0), 0.0) == (0.0, 0.0)
    assert phi_eval(LogDiffusion(1.0), 1.0) == pytest.approx(tuple(FROZEN["logdiffusion_r1_at1"]), abs=1e-15)
    with pytest.raises(ValueError):
        phi_eval(PowerP(), -1.0)


@pytest.mark.parametrize("phi", ALL_PHI, ids=lambda f: f.name)
def test_phi_nonnegative_and_derivative_matches_fd(phi):
    xi = np.linspace(0.05, 4.0, 30)
    v, d = phi_eval(phi, xi, 1.5 if phi.max_p() >= 1.5 else 1.0)
    assert np.all(v >= 0) and np.all(d >= 0)
    p = 1.5 if phi.max_p() >= 1.5 else 1.0
    h = 1e-6
    fd = (phi.value(xi + h, p) - phi.value(xi - h, p)) / (2 * h)
    assert np.allclose(d, fd, rtol=1e-6)


def test_phi_registry_roundtrip():
    for phi in ALL_PHI:
        assert make_phi(phi_to_dict(phi)) == phi
    with pytest.raises(ValueError, match="unknown phi"):
        make_phi("nope")
    with pytest.raises(ValueError):
        LogDiffusion(0.0)


@pytest.mark.parametrize("phi,p", [(Identity(), 1.5), (Tikhonov(), 2.5), (SoftAbs(), 3.0), (LogDiffusion(), 2.1)])
def test_inadmissible_pairs_rejected(phi, p):
    with pytest.raises(AdmissibilityError, match="unbounded"):
        PLapConfig(p=p, phi=phi)


def test_admissible_table():
    pairs = {(f.name, p) for f, p in admissible_pairs([1, 1.5, 2, 2.5])}
    assert ("power", 2.5) in pairs and ("tikhonov", 2) in pairs and ("identity", 1) in pairs
    assert ("identity", 1.5) not in pairs and ("soft_abs", 2.5) not in pairs
    assert len(pairs) == 14


def test_config_validation():
    with pytest.raises(ValueError):
        PLapConfig(mu=0.0)
    with pytest.raises(ValueError):
        PLapConfig(max_iters=0)
    with pytest.raises(ValueError):
        PLapConfig(eps_grad=0.0)
    with pytest.raises(AdmissibilityError):
        PLapConfig(p=0.5)


def test_zeta_closed_forms(rng):
    g = random_graph(rng, 15)
    F = rng.normal(size=(15, 2))
    assert np.all(zeta_matrix(g, F, toy_cfg()) == 2.0)
    for p in (1.0, 1.5, 2.5, 4.0):
        assert np.all(zeta_matrix(g, F, PLapConfig(p=p)) == p)


@pytest.mark.parametrize("phi,p", admissible_pairs([1, 1.2, 1.5, 1.8, 2, 2.5]), ids=str)
def test_zeta_symmetric_and_bounded(rng, phi, p):
    cfg = PLapConfig(p=p, phi=phi)
    for scale in (1e-3, 1.0, 30.0):
        g = random_graph(rng, 12)
        F = scale * rng.normal(size=(12, 2))
        z = zeta_matrix(g, F, cfg)
        assert np.array_equal(z, z[g.rev])
        a = np.maximum(node_gradient_pnorm(g, F, p), cfg.eps_grad)
        assert z.max() <= phi.zeta_bound(p, a.min(), a.max()) * (1 + 1e-12)


def test_m_matrix_examples():
    g = edge2()
    assert m_matrix(g, TOY_Y, toy_cfg()).tolist() == [2.0, 2.0]
    assert m_matrix(g, TOY_Y, PLapConfig(p=1.0, phi="power")).tolist() == [0.5, 0.5]


def test_m_independent_of_magnitude_at_p2(rng):
    g = random_graph(rng, 10)
    F = rng.normal(size=(10, 2))
    cfg = PLapConfig(p=2.0)
    assert np.array_equal(m_matrix(g, F, cfg), m_matrix(g, 17.0 * F, cfg))


def test_m_symmetric_nonnegative(rng):
    g = random_graph(rng, 14)
    F = rng.normal(size=(14, 3))
    for phi, p in admissible_pairs([1, 1.5, 2, 2.5]):
        M = m_matrix(g, F, PLapConfig(p=p, phi=phi))
        assert np.array_equal(M, M[g.rev]) and np.all(M >= 0)


def test_alpha_beta_examples(rng):
    a, b = alpha_beta(edge2(), np.array([2.0, 2.0]), 1.0)
    assert a.tolist() == [0.25, 0.25] and b.tolist() == [0.5, 0.5]
    g = random_graph(rng, 8)
    a, b = alpha_beta(g, np.zeros(g.nnz), 3.0)
    assert np.allclose(a, 1 / 6) and np.allclose(b, 1.0)
    a, b = alpha_beta(g, rng.uniform(0, 5, g.nnz), 0.7)
    assert np.all(a > 0) and np.all(b <= 1.0) and np.allclose(b, 1.4 * a)
    with pytest.raises(ValueError):
        alpha_beta(g, np.zeros(g.nnz), 0.0)


def test_iterate_step_toy():
    F1, st = iterate_step(edge2(), TOY_Y, TOY_Y, toy_cfg())
    assert F1.ravel().tolist() == [1.0, 1.0]
    assert st.alpha.tolist() == [0.25, 0.25] and st.beta.tolist() == [0.5, 0.5]
    assert st.k == 0 and st.M.tolist() == [2.0, 2.0]


def test_iterate_step_large_mu(rng):
    g = random_graph(rng, 12)
    Y = rng.normal(size=(12, 2))
    F1, _ = iterate_step(g, rng.normal(size=(12, 2)), Y, PLapConfig(p=1.5, mu=1e6))
    assert np.abs(F1 - Y).max() <= 1e-4


def test_constant_is_fixed_point_on_regular_graph():
    g = cycle_graph(8)
    Y = np.full((8, 2), 3.0)
    for phi, p in admissible_pairs([1, 1.5, 2, 2.5]):
        F1, _ = iterate_step(g, Y, Y, PLapConfig(p=p, phi=phi))
        assert np.abs(F1 - Y).max() <= 1e-10


def test_iterate_step_shape_and_finiteness(monkeypatch):
    with pytest.raises(ValueError, match="shape"):
        iterate_step(edge2(), np.zeros((2, 1)), np.zeros((2, 2)), toy_cfg())
    import plufg.plap as pl
    monkeypatch.setattr(pl, "_scaled_message", lambda g, M, F: np.full_like(F, np.inf))
    with pytest.raises(NumericalError, match="node 0"):
        pl.iterate_step(edge2(), TOY_Y, TOY_Y, toy_cfg())


def test_toy_objective_trace_matches_hand_values():
    F, tr = solve_implicit(edge2(), TOY_Y, toy_cfg())
    obj = tr.column("objective")
    assert obj[:4].tolist() == pytest.approx(FROZEN["toy_objectives"], abs=1e-12)
    assert np.all(np.diff(obj) <= 1e-12)
    assert F.ravel() == pytest.approx([2 / 3, 4 / 3], abs=1e-5)
    assert tr.descent_violations == []


def test_solve_from_zero_and_from_y_agree(rng):
    g = random_graph(rng, 15)
    Y = rng.normal(size=(15, 2))
    cfg = PLapConfig(p=2.0, mu=2.0, max_iters=500, tol=1e-10)
    Fa, _ = solve_implicit(g, Y, cfg)
    Fb, _ = solve_implicit(g, Y, cfg, F0=np.zeros_like(Y))
    assert np.linalg.norm(Fa - Fb) <= 10 * cfg.tol * max(1.0, np.linalg.norm(Fa))


def test_contraction_to_y(rng):
    g = random_graph(rng, 20)
    Y = rng.normal(size=(20, 3))
    F, _ = solve_implicit(g, Y, PLapConfig(p=1.5, mu=1e6))
    assert np.linalg.norm(F - Y) / np.linalg.norm(Y) <= 1e-4


def test_descent_violation_is_logged_not_raised(caplog):
    # gradient-scale blowup at p=1 with a tiny mu can overshoot; the solver must keep going
    g = edge2()
    cfg = PLapConfig(p=1.0, mu=1e-3, max_iters=5)
    Y = np.array([0.0, 1e-3])
    with caplog.at_level(logging.WARNING, logger="plufg.plap"):
        F, tr = solve_implicit(g, Y, cfg, descent_slack=-np.inf)
    assert tr.descent_violations  # slack -inf flags every step
    assert "objective increased" in caplog.text
    assert len(tr) >= 2


def test_p_dirichlet_form_examples(rng):
    g = edge2()
    assert p_dirichlet_form(g, TOY_Y, 2) == 4.0
    assert p_dirichlet_form(cycle_graph(5), np.ones(5), 1.5) == 0.0
    h = random_graph(rng, 12)
    F = rng.normal(size=(12, 3))
    assert p_dirichlet_form(h, F, 2) == pytest.approx(dirichlet_energy(h, F), rel=1e-12)
    with pytest.raises(ValueError):
        p_dirichlet_form(g, TOY_Y, 0.5)


def test_phi_regularizer_examples(rng):
    assert phi_regularizer(edge2(), TOY_Y, toy_cfg()) == 4.0
    g = random_graph(rng, 12)
    F = rng.normal(size=(12, 3))
    assert phi_regularizer(g, F, PLapConfig(p=2)) == pytest.approx(p_dirichlet_form(g, F, 2), rel=1e-12)
    for phi, p in admissible_pairs([1, 1.5, 2, 2.5]):
        assert phi_regularizer(cycle_graph(6), np.ones((6, 2)), PLapConfig(p=p, phi=phi)) == 0.0


def test_objective_examples():
    g = edge2()
    assert objective(g, TOY_Y, TOY_Y, toy_cfg()) == 4.0
    assert objective(g, [1.0, 1.0], TOY_Y, toy_cfg()) == 2.0
    assert objective(g, np.ones(2), np.ones(2), toy_cfg()) == 0.0
    F = np.array([0.3, 1.1])
    o1 = objective(g, F, TOY_Y, toy_cfg(mu=1.0))
    o2 = objective(g, F, TOY_Y, toy_cfg(mu=2.0))
    reg = phi_regularizer(g, F, toy_cfg())
    assert o2 - reg == pytest.approx(2 * (o1 - reg), rel=1e-14)


def test_analytic_gradient_toy_and_fixed_point():
    G = analytic_gradient(edge2(), TOY_Y, TOY_Y, toy_cfg())
    assert G[0, 0] == -4.0
    F, _ = solve_implicit(edge2(), TOY_Y, toy_cfg(max_iters=2000, tol=1e-15))
    assert np.abs(analytic_gradient(edge2(), F, TOY_Y, toy_cfg())).max() <= 1e-9


def _fd_grad(g, F, Y, cfg, h=1e-6):
    G = np.zeros_like(F)
    for idx in np.ndindex(F.shape):
        E = np.zeros_like(F)
        E[idx] = h
        G[idx] = (objective(g, F + E, Y, cfg) - objective(g, F - E, Y, cfg)) / (2 * h)
    return G


@pytest.mark.parametrize("phi", ["tikhonov", "power"])
def test_analytic_gradient_matches_finite_differences(rng, phi):
    for _ in range(5):
        g = random_graph(rng, int(rng.integers(4, 12)))
        F = rng.normal(size=(g.n, 2))
        Y = rng.normal(size=(g.n, 2))
        cfg = PLapConfig(p=2.0, mu=float(rng.uniform(0.5, 5)), phi=phi)
        A = analytic_gradient(g, F, Y, cfg)
        N = _fd_grad(g, F, Y, cfg)
        assert np.abs(A - N).max() / np.abs(N).max() <= 1e-4


def test_descent_can_fail_for_p_above_two(caplog):
    # three-node path, p = 2.5, weak fidelity: the first step overshoots
    g = path_graph(3)
    Y = np.array([[2.1], [3.6], [-5.1]])
    cfg = PLapConfig(p=2.5, mu=0.1, max_iters=10, tol=0)
    F, tr = solve_implicit(g, Y, cfg)
    obj = tr.column("objective")
    assert tr.descent_violations == [1]
    assert obj[1] > obj[0]
    assert obj[-1] < obj[0]
    assert "objective increased at iteration 1" in caplog.text
