"""Datasets on disk, synthetic SBM graphs, and CSV persistence of traces and results."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from .energy import TRACE_COLUMNS, EnergyTrace
from .exceptions import DatasetError, GraphError
from .graph import Graph, build_graph, homophily_index, read_edge_list, write_edge_list

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("dataset", "dynamics", "theta", "mu", "p", "seed", "train_acc", "val_acc", "test_acc")
SPLITS = ("train", "val", "test")


@dataclass
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    masks: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.graph.n
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetError(f"features must have {n} rows, got shape {self.features.shape}")
        if self.labels.shape != (n,):
            raise DatasetError(f"labels must have {n} entries, got shape {self.labels.shape}")
        if np.any(self.labels < 0):
            raise DatasetError("labels must be nonnegative class indices")
        masks = {}
        for name in SPLITS:
            if name not in self.masks:
                raise DatasetError(f"missing {name} mask")
            m = np.asarray(self.masks[name])
            if m.dtype != bool:
                m = index_mask(m, n, name)
            if m.shape != (n,):
                raise DatasetError(f"{name} mask must have length {n}")
            masks[name] = m
        for a, b in (("train", "val"), ("train", "test"), ("val", "test")):
            overlap = np.flatnonzero(masks[a] & masks[b])
            if overlap.size:
                raise DatasetError(f"{a} and {b} masks overlap at node {int(overlap[0])}")
        K = int(self.meta.get("n_classes", self.labels.max() + 1))
        if self.labels.max() >= K:
            raise DatasetError(f"label {int(self.labels.max())} out of range for {K} classes")
        missing = sorted(set(range(K)) - set(self.labels[masks["train"]].tolist()))
        if missing:
            raise DatasetError(f"class {missing[0]} has no training node")
        self.masks = masks
        self.meta = {"name": "unnamed", **self.meta, "n_classes": K,
                     "homophily": homophily_index(self.graph, self.labels)}

    @property
    def n_classes(self) -> int:
        return self.meta["n_classes"]


def index_mask(idx, n: int, name: str = "mask") -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise DatasetError(f"{name} index out of range for {n} nodes")
    if np.unique(idx).size != idx.size:
        raise DatasetError(f"{name} split lists a node twice")
    m = np.zeros(n, dtype=bool)
    m[idx] = True
    return m


def _read_matrix(path: Path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for ln, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            try:
                rows.append([float(x) for x in row])
            except ValueError as e:
                raise DatasetError(f"{path.name}:{ln}: {e}") from None
            if len(rows[-1]) != len(rows[0]):
                raise DatasetError(f"{path.name}:{ln}: ragged row ({len(rows[-1])} values, "
                                   f"expected {len(rows[0])})")
    if not rows:
        raise DatasetError(f"{path.name} is empty")
    return np.array(rows)


def _read_labels(path: Path) -> np.ndarray:
    out = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                out.append(int(line))
            except ValueError:
                raise DatasetError(f"{path.name}:{ln}: label {line!r} is not an integer") from None
    return np.array(out, dtype=np.int64)


def load_dataset(dir_path) -> Dataset:
    """Read ``edges.tsv``, ``features.csv``, ``labels.csv`` and ``splits.json``.

    An optional ``meta.json`` may declare ``name``, ``n_classes`` and
    ``homophily``; a declared homophily more than 0.01 away from the
    recomputed one is logged.
    """
    d = Path(dir_path)
    if not d.is_dir():
        raise DatasetError(f"dataset directory {d} not found")
    for f in ("edges.tsv", "features.csv", "labels.csv", "splits.json"):
        if not (d / f).is_file():
            raise DatasetError(f"missing {f} in {d}")
    X = _read_matrix(d / "features.csv")
    y = _read_labels(d / "labels.csv")
    if len(y) != len(X):
        raise DatasetError(f"labels.csv has {len(y)} rows but features.csv has {len(X)}")
    try:
        g = read_edge_list(d / "edges.tsv", n=len(X))
    except GraphError as e:
        raise DatasetError(f"edges.tsv: {e}") from e
    with open(d / "splits.json") as fh:
        splits = json.load(fh)
    meta = {"name": d.name}
    if (d / "meta.json").is_file():
        with open(d / "meta.json") as fh:
            meta.update(json.load(fh))
    declared = meta.pop("homophily", None)
    ds = Dataset(g, X, y, {k: splits.get(k, ()) for k in SPLITS}, meta)
    if declared is not None and abs(declared - ds.meta["homophily"]) > 0.01:
        log.warning("%s: declared homophily %.4f differs from recomputed %.4f",
                    ds.meta["name"], declared, ds.meta["homophily"])
    return ds


def save_dataset(ds: Dataset, dir_path) -> Path:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    write_edge_list(ds.graph, d / "edges.tsv")
    with open(d / "features.csv", "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows([[repr(float(v)) for v in row] for row in ds.features])
    with open(d / "labels.csv", "w") as fh:
        fh.writelines(f"{int(v)}\n" for v in ds.labels)
    with open(d / "splits.json", "w") as fh:
        json.dump({k: np.flatnonzero(ds.masks[k]).tolist() for k in SPLITS}, fh)
    with open(d / "meta.json", "w") as fh:
        json.dump({k: ds.meta[k] for k in ("name", "n_classes", "homophily")}, fh, indent=1)
    return d


def stratified_split(labels, rng, fractions=(0.6, 0.2, 0.2)) -> dict:
    labels = np.asarray(labels)
    masks = {k: np.zeros(len(labels), dtype=bool) for k in SPLITS}
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_tr = max(1, int(round(fractions[0] * len(idx))))
        n_va = int(round(fractions[1] * len(idx)))
        masks["train"][idx[:n_tr]] = True
        masks["val"][idx[n_tr:n_tr + n_va]] = True
        masks["test"][idx[n_tr + n_va:]] = True
    return masks


def synth_sbm(n: int, K: int, p_in: float, p_out: float, feat_dim: int = 16,
              signal: float = 1.0, seed: int = 0, name: Optional[str] = None,
              max_attempts: int = 10) -> Dataset:
    """Stochastic block model with Gaussian class-mean features.

    Node ``i`` belongs to class ``i // (n / K)``.  Each class mean is a random
    direction scaled to norm ``signal``; features add unit Gaussian noise.
    Graphs with isolated nodes are redrawn up to ``max_attempts`` times.
    """
    if not (0 <= p_in <= 1 and 0 <= p_out <= 1):
        raise ValueError("p_in and p_out must lie in [0, 1]")
    if K < 1 or n % K:
        raise ValueError(f"n={n} must be divisible by K={K}")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(K), n // K)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    for attempt in range(max_attempts):
        keep = rng.random(prob.shape) < prob
        if np.all(np.bincount(np.concatenate([iu[keep], ju[keep]]), minlength=n) > 0):
            break
    else:
        raise DatasetError(f"SBM draw left isolated nodes after {max_attempts} attempts "
                           f"(p_in={p_in}, p_out={p_out}, n={n})")
    g = build_graph(zip(iu[keep], ju[keep], np.ones(int(keep.sum()))), n)
    means = rng.normal(size=(K, feat_dim))
    means *= signal / np.linalg.norm(means, axis=1, keepdims=True)
    X = means[labels] + rng.normal(size=(n, feat_dim))
    masks = stratified_split(labels, rng)
    meta = {"name": name or f"sbm_n{n}_k{K}_seed{seed}", "n_classes": K,
            "p_in": p_in, "p_out": p_out, "seed": seed}
    return Dataset(g, X, labels, masks, meta)


# Named synthetic analogs used by the CLI and the trend tests.
SYNTH_PRESETS = {
    "synth-homo": dict(n=200, K=2, p_in=0.1, p_out=0.002, feat_dim=16, signal=1.0),
    "synth-hetero": dict(n=200, K=2, p_in=0.002, p_out=0.1, feat_dim=16, signal=1.0),
}


def synth_preset(name: str, seed: int = 0) -> Dataset:
    try:
        kw = SYNTH_PRESETS[name]
    except KeyError:
        raise DatasetError(f"unknown synthetic dataset {name!r}; choose from {sorted(SYNTH_PRESETS)}") from None
    return synth_sbm(seed=seed, name=name, **kw)


def resolve_dataset(source: str, seed: int = 0) -> Dataset:
    """A preset name or a dataset directory."""
    if source in SYNTH_PRESETS:
        return synth_preset(source, seed)
    return load_dataset(source)


def _append_rows(path, header, rows: Iterable[Iterable]) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        raise FileNotFoundError(f"directory {path.parent} does not exist")
    has_header = path.is_file() and path.stat().st_size > 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not has_header:
            w.writerow(header)
        w.writerows(rows)


def write_trace(trace: EnergyTrace, path) -> None:
    _append_rows(path, TRACE_COLUMNS,
                 ([r.k] + [repr(float(getattr(r, c))) for c in TRACE_COLUMNS[1:]] for r in trace))


def read_trace(path) -> EnergyTrace:
    with open(path) as fh:
        return EnergyTrace.from_csv(fh.read())


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_results(rows: Iterable[Mapping], path) -> None:
    _append_rows(path, RESULT_COLUMNS, ([_fmt(r[c]) for c in RESULT_COLUMNS] for r in rows))


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
