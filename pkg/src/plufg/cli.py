"""Command-line entry point: ``plufg <command> ...``.

Exit codes: 0 success, 1 usage error (bad flags, missing files), 2 a
``validate`` check failed (the failing invariant is named on stderr).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import (RESULT_COLUMNS, SYNTH_PRESETS, resolve_dataset, save_dataset, synth_preset,
                   synth_sbm, write_results, write_trace)
from .energy import classify_dynamics, framelet_dynamics, generalized_energy_epf
from .exceptions import PLUFGError
from .framelet import (cheb_framelet_system, exact_framelet_system, haar_scaling_set,
                       save_coefficients, validate_identity)
from .graph import build_graph, normalized_operators, spectral_radius
from .model import DEFAULT_THETA, ModelConfig, plufg_forward, run_experiment
from .plap import PLapConfig, admissible_pairs, iterate_step, iteration_state, solve_implicit, zeta_matrix

log = logging.getLogger("plufg")


class UsageError(Exception):
    pass


class ValidationFailure(Exception):
    def __init__(self, invariant, detail=""):
        super().__init__(f"{invariant}: {detail}" if detail else invariant)
        self.invariant = invariant


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _random_graph(rng, n):
    # random spanning tree plus n extra chords keeps every draw connected
    edges = [(i, int(rng.integers(0, i)), float(rng.uniform(0.5, 2.0))) for i in range(1, n)]
    for a, b in rng.integers(0, n, size=(n, 2)):
        if a != b:
            edges.append((int(a), int(b), float(rng.uniform(0.5, 2.0))))
    return build_graph(edges, n)


def path_graph(n):
    return build_graph([(i, i + 1, 1.0) for i in range(n - 1)], n)


def _check(ok, invariant, detail=""):
    if not ok:
        raise ValidationFailure(invariant, detail)


def _emit(rows, header, out):
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


# -- validate targets -------------------------------------------------------------------------

def validate_framelet(out, seed=0, n_graphs=20):
    rng = np.random.default_rng(seed)
    dev = validate_identity(haar_scaling_set())
    _check(dev <= 1e-12, "partition_of_unity", f"max deviation {dev:.3g}")
    rows = []
    for t in range(n_graphs):
        g = _random_graph(rng, int(rng.integers(3, 51)))
        F = rng.normal(size=(g.n, 3))
        for J in (1, 2):
            ex = exact_framelet_system(g, J=J)
            rec = np.linalg.norm(ex.synthesize(ex.analyze(F)) - F) / np.linalg.norm(F)
            _check(rec <= 1e-9, "perfect_reconstruction", f"graph {t}, J={J}, error {rec:.3g}")
            errs = [bank_error(ex, cheb_framelet_system(g, J=J, degree=d), F) for d in (2, 3, 7)]
            _check(errs[2] <= 1e-2, "chebyshev_fidelity", f"graph {t}, J={J}, degree 7 error {errs[2]:.3g}")
            _check(errs[0] >= errs[1] >= errs[2], "chebyshev_monotone", f"graph {t}, J={J}, errors {errs}")
            rows.append([t, g.n, J, f"{rec:.3e}"] + [f"{e:.3e}" for e in errs])
    _emit(rows, ["graph", "n", "J", "reconstruction", "cheb2", "cheb3", "cheb7"], out)


def bank_error(exact, approx, F):
    num = sum(np.sum((approx.apply(i, F) - exact.apply(i, F)) ** 2) for i in exact.indices)
    den = sum(np.sum(exact.apply(i, F) ** 2) for i in exact.indices)
    return float(np.sqrt(num / den))


def validate_solver(out, seed=0, n_graphs=5):
    g = build_graph([(0, 1, 1.0)], 2)
    Y = np.array([[0.0], [2.0]])
    cfg = PLapConfig(p=2.0, mu=1.0, phi="tikhonov")
    F1, st = iterate_step(g, Y, Y, cfg)
    _check(np.allclose(F1.ravel(), [1.0, 1.0], rtol=0, atol=1e-12), "toy_step", f"F1={F1.ravel()}")
    _check(np.allclose(st.alpha, 0.25) and np.allclose(st.M, 2.0), "toy_alpha_M")
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(n_graphs):
        g = _random_graph(rng, int(rng.integers(5, 31)))
        Y = rng.normal(size=(g.n, 3))
        for phi, p in admissible_pairs([1.0, 1.5, 2.0, 2.5]):
            for mu in (1.0, 5.0, 20.0):
                c = PLapConfig(p=p, mu=mu, phi=phi)
                _, tr = solve_implicit(g, Y, c)
                obj = tr.column("objective")
                worst = float(np.max(np.diff(obj))) if len(obj) > 1 else 0.0
                _check(worst <= 1e-9, "objective_descent", f"graph {t}, {phi.name}, p={p}, mu={mu}, rise {worst:.3g}")
                z = zeta_matrix(g, Y, c)
                st = iteration_state(g, Y, c)
                _check(np.all(st.alpha > 0) and np.all(st.beta <= 1.0), "alpha_beta_bounds")
                rows.append([t, phi.name, p, mu, len(tr) - 1, f"{obj[-1]:.10g}", f"{worst:.3e}", f"{z.max():.6g}"])
    _emit(rows, ["graph", "phi", "p", "mu", "iterations", "objective", "max_rise", "zeta_max"], out)


def validate_energy(out, seed=0):
    from .diffusion import toy_instance

    g, F0, _, cfg = toy_instance()
    F1, _ = iterate_step(g, F0, F0, cfg)
    epf = generalized_energy_epf(g, F1, F0, iteration_state(g, F1, cfg), cfg.mu)
    _check(abs(epf - 1.5) <= 1e-12, "toy_epf", f"E^PF={epf!r}")
    rows = [["toy_epf", repr(epf)]]
    p10 = path_graph(10)
    sys_ = exact_framelet_system(p10, J=1)
    rho = spectral_radius(sys_.laplacian)
    F = np.random.default_rng(seed).normal(size=(10, 1))
    ray = framelet_dynamics(sys_, F, 2.0, 200)
    v = classify_dynamics(ray, rho)
    _check(v.verdict == "HFD", "hfd_classification", v.to_json())
    _check(np.all(ray >= -1e-12) and np.all(ray <= rho / 2 + 1e-9), "rayleigh_bounds")
    rows.append(["p10_theta2_verdict", v.verdict])
    rows.append(["p10_theta2_terminal", repr(v.terminal_rayleigh)])
    rows.append(["rho_half", repr(v.rho_half)])
    _emit(rows, ["check", "value"], out)


def validate_diffusion(out, seed=0, n_instances=20):
    from .diffusion import toy_instance, verify_diffusion_identity

    g, F, F0, cfg = toy_instance()
    toy = verify_diffusion_identity(g, F, F0, cfg)
    rows = [["toy", cfg.phi.name, cfg.p, f"{toy.corrected:.3e}", f"{toy.literal:.6g}"]]
    _check(toy.corrected <= 1e-12, "corrected_identity_toy", f"residual {toy.corrected:.3g}")
    rng = np.random.default_rng(seed)
    pairs = admissible_pairs([1.0, 1.5, 2.0, 2.5])
    for t in range(n_instances):
        g = _random_graph(rng, int(rng.integers(3, 31)))
        phi, p = pairs[t % len(pairs)]
        c = PLapConfig(p=p, mu=float(rng.uniform(0.1, 20.0)), phi=phi)
        r = verify_diffusion_identity(g, rng.normal(size=(g.n, 2)), rng.normal(size=(g.n, 2)), c)
        _check(r.relative <= 1e-9, "corrected_identity", f"instance {t}, relative residual {r.relative:.3g}")
        rows.append([t, phi.name, p, f"{r.corrected:.3e}", f"{r.literal:.6g}"])
    _emit(rows, ["instance", "phi", "p", "corrected_residual", "literal_residual"], out)


VALIDATORS = {"framelet": validate_framelet, "solver": validate_solver,
              "energy": validate_energy, "diffusion": validate_diffusion}


# -- commands -------------------------------------------------------------------------------

def cmd_validate(args, out):
    VALIDATORS[args.target](out, seed=args.seed)
    return 0


def _load_config(path):
    if not Path(path).is_file():
        raise UsageError(f"config file {path} not found")
    try:
        return ModelConfig.from_json(path)
    except (json.JSONDecodeError, TypeError, ValueError) as e:
        raise UsageError(f"invalid config {path}: {e}") from None


def _env_seed(default):
    env = os.environ.get("PLUFG_SEED")
    return int(env) if env not in (None, "") else default


def cmd_sweep(args, out):
    theta = args.theta if args.theta is not None else DEFAULT_THETA[args.dynamics]
    seeds = args.seeds if args.seeds else [_env_seed(0)]
    grid = [(mu, p) for mu in args.mu_grid for p in args.p_grid]
    base = PLapConfig()

    def one_seed(seed):
        ds = resolve_dataset(args.dataset, seed)
        rows = []
        for mu, p in grid:
            cfg = ModelConfig(dynamics=args.dynamics, theta=theta, seed=seed,
                              plap=replace(base, mu=mu, p=p, phi=args.phi))
            rows.append(run_experiment(ds, cfg)[0])
        return rows

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        per_seed = list(pool.map(one_seed, seeds))  # map keeps seed order
    rows = [r for chunk in per_seed for r in chunk]
    if args.out:
        write_results(rows, args.out)
    else:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        w.writerows([[r[c] for c in RESULT_COLUMNS] for r in rows])
    return 0


def _dataset_for(cfg, args):
    source = args.dataset or cfg.dataset
    if source is None:
        raise UsageError("no dataset: pass --dataset or set 'dataset' in the config")
    return resolve_dataset(source, cfg.seed)


def cmd_train(args, out):
    cfg = _load_config(args.config)
    ds = _dataset_for(cfg, args)
    row, trace = run_experiment(ds, cfg)
    if args.out:
        write_results([row], args.out)
    if args.trace:
        write_trace(trace, args.trace)
    out.write(json.dumps(row) + "\n")
    return 0


def cmd_energy_trace(args, out):
    cfg = _load_config(args.config)
    ds = _dataset_for(cfg, args)
    F, trace = plufg_forward(ds.graph, ds.features, cfg)
    if args.out:
        write_trace(trace, args.out)
        _, L = normalized_operators(ds.graph)
        out.write(classify_dynamics(trace, spectral_radius(L)).to_json() + "\n")
    else:
        out.write(trace.to_csv())
    if args.coefficients:
        from .model import build_framelet_system

        sys_ = build_framelet_system(ds.graph, cfg)
        save_coefficients(sys_.analyze(ds.features), args.coefficients)
    return 0


def cmd_synth(args, out):
    seed = _env_seed(args.seed)
    if args.preset:
        ds = synth_preset(args.preset, seed)
    else:
        ds = synth_sbm(args.n, args.k, args.p_in, args.p_out, args.feat_dim, args.signal, seed)
    d = save_dataset(ds, args.out)
    out.write(json.dumps({"path": str(d), **{k: ds.meta[k] for k in ("name", "n_classes", "homophily")},
                          "n": ds.graph.n, "edges": ds.graph.n_edges}) + "\n")
    return 0


def build_parser():
    p = _Parser(prog="plufg", description="p-Laplacian regularized framelet graph models")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="run a built-in invariant check")
    v.add_argument("target", choices=sorted(VALIDATORS))
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("sweep", help="accuracy over a mu x p grid")
    s.add_argument("--mu-grid", type=_floats, required=True)
    s.add_argument("--p-grid", type=_floats, required=True)
    s.add_argument("--dataset", required=True, help=f"one of {sorted(SYNTH_PRESETS)} or a dataset directory")
    s.add_argument("--dynamics", choices=("LFD", "HFD"), required=True)
    s.add_argument("--theta", type=float)
    s.add_argument("--phi", default="power")
    s.add_argument("--seeds", type=_ints)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", help="results CSV (appended); stdout if omitted")
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("train", help="propagate, fit the head and score one config")
    t.add_argument("--config", required=True)
    t.add_argument("--dataset")
    t.add_argument("--out", help="results CSV to append to")
    t.add_argument("--trace", help="trace CSV to append to")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("energy-trace", help="per-iteration energies of the forward pass")
    e.add_argument("--config", required=True)
    e.add_argument("--dataset")
    e.add_argument("--out", help="trace CSV (appended); stdout if omitted")
    e.add_argument("--coefficients", help="directory for coeff_r{r}_l{l}.csv of the input features")
    e.set_defaults(func=cmd_energy_trace)

    y = sub.add_parser("synth", help="write a synthetic SBM dataset directory")
    y.add_argument("--out", required=True)
    y.add_argument("--preset", choices=sorted(SYNTH_PRESETS))
    y.add_argument("--n", type=int, default=200)
    y.add_argument("--k", type=int, default=2)
    y.add_argument("--p-in", type=float, default=0.1)
    y.add_argument("--p-out", type=float, default=0.002)
    y.add_argument("--feat-dim", type=int, default=16)
    y.add_argument("--signal", type=float, default=1.0)
    y.add_argument("--seed", type=int, default=0)
    y.set_defaults(func=cmd_synth)
    return p


def dispatch(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"plufg: error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, out)
    except ValidationFailure as e:
        print(f"FAIL {e.invariant}: {e}", file=sys.stderr)
        return 2
    except (UsageError, FileNotFoundError, PLUFGError, ValueError) as e:
        print(f"plufg: error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
