"""Graphs, datasets, file ingestion, kNN construction, and benchmark generation.

File formats (UTF-8, line-feed terminated, zero-based indices):
  features.tsv  one line per instance, D tab-separated decimal reals
  labels.tsv    one line per instance: integer class, decimal target, or "NA"
  edges.tsv     one "u<TAB>v" pair per line; the loader symmetrizes
  domains.tsv   one nonnegative integer domain id per instance
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .rng import named_rng

TASKS = ("classification", "binary", "regression")


class Graph:
    """Immutable undirected simple graph over n instances.

    Stored both as canonical undirected pairs (u < v) and as a directed
    expansion sorted by (src, dst), with a CSR index over sources. The
    directed arrays are what message passing iterates over.
    """

    __slots__ = ("n", "pairs", "edge_src", "edge_dst", "indptr", "degrees")

    def __init__(self, n: int, pairs: np.ndarray):
        self.n = int(n)
        self.pairs = pairs
        if pairs.size:
            directed = np.concatenate([pairs, pairs[:, ::-1]], axis=0)
            order = np.lexsort((directed[:, 1], directed[:, 0]))
            directed = directed[order]
            self.edge_src = np.ascontiguousarray(directed[:, 0])
            self.edge_dst = np.ascontiguousarray(directed[:, 1])
        else:
            self.edge_src = np.zeros(0, dtype=np.int64)
            self.edge_dst = np.zeros(0, dtype=np.int64)
        self.degrees = np.bincount(self.edge_src, minlength=self.n).astype(np.int64)
        self.indptr = np.concatenate([[0], np.cumsum(self.degrees)]).astype(np.int64)

    @classmethod
    def from_pairs(cls, n: int, pairs) -> "Graph":
        """Build from any iterable of (u, v); symmetrizes, dedupes, drops self-loops."""
        n = int(n)
        arr = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        if arr.size:
            if arr.min() < 0 or arr.max() >= n:
                raise DataError(f"edge endpoint out of range [0, {n})")
            arr = arr[arr[:, 0] != arr[:, 1]]
            lo = np.minimum(arr[:, 0], arr[:, 1])
            hi = np.maximum(arr[:, 0], arr[:, 1])
            arr = np.unique(np.stack([lo, hi], axis=1), axis=0)
        else:
            arr = np.zeros((0, 2), dtype=np.int64)
        return cls(n, arr)

    @classmethod
    def empty(cls, n: int) -> "Graph":
        return cls(int(n), np.zeros((0, 2), dtype=np.int64))

    @property
    def num_undirected_edges(self) -> int:
        return int(self.pairs.shape[0])

    @property
    def density(self) -> float:
        if self.n < 2:
            return 0.0
        return 2.0 * self.num_undirected_edges / (self.n * (self.n - 1))

    def neighbors(self, u: int) -> np.ndarray:
        return self.edge_dst[self.indptr[u] : self.indptr[u + 1]]

    def inverse_degrees(self) -> np.ndarray:
        """(n, 1) column of 1/degree, zero for isolated nodes."""
        deg = self.degrees.astype(np.float64)
        out = np.zeros_like(deg)
        np.divide(1.0, deg, out=out, where=deg > 0)
        return out.reshape(-1, 1)

    def __eq__(self, other):
        return (
            isinstance(other, Graph)
            and self.n == other.n
            and self.pairs.shape == other.pairs.shape
            and bool(np.all(self.pairs == other.pairs))
        )

    def __hash__(self):
        return hash((self.n, self.pairs.tobytes()))


@dataclass
class Dataset:
    """Feature matrix with (partially observed) labels and domain ids.

    Missing labels are stored as NaN; ``labeled_indices`` gives the
    observed portion.
    """

    features: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    task: str
    num_classes: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.domains = np.asarray(self.domains, dtype=np.int64)
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        n = self.features.shape[0]
        if self.labels.shape[0] != n or self.domains.shape[0] != n:
            raise DataError(
                f"row counts disagree: features {n}, labels {self.labels.shape[0]}, "
                f"domains {self.domains.shape[0]}"
            )
        if self.domains.size and self.domains.min() < 0:
            raise DataError("domain ids must be nonnegative")
        if self.task == "binary":
            self.num_classes = 2
        if self.task in ("classification", "binary"):
            observed = self.labels[~np.isnan(self.labels)]
            if observed.size:
                if np.any(observed != np.round(observed)) or observed.min() < 0:
                    raise DataError("classification labels must be nonnegative integers")
                top = int(observed.max())
                if self.num_classes == 0:
                    self.num_classes = top + 1
                elif top >= self.num_classes:
                    raise DataError(f"label {top} out of range for {self.num_classes} classes")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled_mask(self) -> np.ndarray:
        return ~np.isnan(self.labels)

    @property
    def labeled_indices(self) -> np.ndarray:
        return np.nonzero(self.labeled_mask)[0]

    def int_labels(self, indices=None) -> np.ndarray:
        lab = self.labels if indices is None else self.labels[indices]
        if np.isnan(lab).any():
            raise DataError("requested integer labels for unlabeled instances")
        return lab.astype(np.int64)


@dataclass(frozen=True)
class KnnSpec:
    """How to build a k-nearest-neighbor graph from features."""

    k: int
    metric: str = "euclidean"
    theta_degrees: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.metric not in ("euclidean", "cosine", "angle-biased-cosine"):
            raise ConfigError(f"unknown metric {self.metric!r}")
        if not 0.0 <= self.theta_degrees < 180.0:
            raise ConfigError(f"theta must lie in [0, 180) degrees, got {self.theta_degrees}")
        if self.theta_degrees != 0.0 and self.metric != "angle-biased-cosine":
            raise ConfigError("a nonzero angle bias requires the angle-biased-cosine metric")


@dataclass
class PseudoDataset:
    """A small random surrogate sample used to estimate the gate prior."""

    features: np.ndarray
    graph: Graph
    seed: int
    edge_prob: float
    source_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def size(self) -> int:
        return self.features.shape[0]


# -- file ingestion -------------------------------------------------------------


def _read_lines(path: str) -> list[str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read().splitlines()
    except OSError as e:
        raise DataError(f"{path}: cannot read file ({e})") from e


def _parse_float(token: str, path: str, lineno: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise DataError(f"{path}:{lineno}: unparsable number {token!r}") from None


def load_features(path: str) -> np.ndarray:
    lines = _read_lines(path)
    rows = []
    width = None
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        toks = line.split("\t")
        if width is None:
            width = len(toks)
        elif len(toks) != width:
            raise DataError(f"{path}:{i}: expected {width} columns, found {len(toks)}")
        rows.append([_parse_float(t, path, i) for t in toks])
    if not rows:
        raise DataError(f"{path}: no feature rows")
    return np.asarray(rows, dtype=np.float64)


def load_labels(path: str, task: str) -> np.ndarray:
    lines = _read_lines(path)
    out = []
    for i, line in enumerate(lines, start=1):
        tok = line.strip()
        if not tok:
            continue
        if tok == "NA":
            out.append(np.nan)
        elif task in ("classification", "binary"):
            try:
                out.append(float(int(tok)))
            except ValueError:
                raise DataError(f"{path}:{i}: expected integer class or NA, got {tok!r}") from None
        else:
            out.append(_parse_float(tok, path, i))
    return np.asarray(out, dtype=np.float64)


def load_domains(path: str) -> np.ndarray:
    lines = _read_lines(path)
    out = []
    for i, line in enumerate(lines, start=1):
        tok = line.strip()
        if not tok:
            continue
        try:
            val = int(tok)
        except ValueError:
            raise DataError(f"{path}:{i}: expected integer domain id, got {tok!r}") from None
        if val < 0:
            raise DataError(f"{path}:{i}: domain ids must be nonnegative")
        out.append(val)
    return np.asarray(out, dtype=np.int64)


def load_edges(path: str, n: int) -> Graph:
    lines = _read_lines(path)
    pairs = []
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        toks = line.split("\t")
        if len(toks) != 2:
            raise DataError(f"{path}:{i}: expected 'u<TAB>v', got {line!r}")
        try:
            u, v = int(toks[0]), int(toks[1])
        except ValueError:
            raise DataError(f"{path}:{i}: unparsable endpoint in {line!r}") from None
        if not (0 <= u < n and 0 <= v < n):
            raise DataError(f"{path}:{i}: endpoint out of range [0, {n})")
        pairs.append((u, v))
    return Graph.from_pairs(n, pairs)


def load_dataset(features_path: str, labels_path: str, edges_path: str | None = None,
                 domains_path: str | None = None, task: str = "classification",
                 num_classes: int = 0) -> tuple[Dataset, Graph]:
    """Load a dataset from tsv files; absent edges give an edgeless graph."""
    features = load_features(features_path)
    n = features.shape[0]
    labels = load_labels(labels_path, task)
    if labels.shape[0] != n:
        raise DataError(f"{labels_path}: {labels.shape[0]} labels but {n} feature rows")
    if domains_path is not None:
        domains = load_domains(domains_path)
        if domains.shape[0] != n:
            raise DataError(f"{domains_path}: {domains.shape[0]} domain ids but {n} feature rows")
    else:
        domains = np.zeros(n, dtype=np.int64)
    graph = load_edges(edges_path, n) if edges_path is not None else Graph.empty(n)
    return Dataset(features, labels, domains, task, num_classes), graph


def _format_real(x: float) -> str:
    return repr(float(x))


def write_features(path: str, features: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in np.asarray(features, dtype=np.float64):
            fh.write("\t".join(_format_real(v) for v in row) + "\n")


def write_labels(path: str, labels: np.ndarray, task: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in labels:
            if np.isnan(v):
                fh.write("NA\n")
            elif task in ("classification", "binary"):
                fh.write(f"{int(v)}\n")
            else:
                fh.write(_format_real(v) + "\n")


def write_domains(path: str, domains: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in domains:
            fh.write(f"{int(v)}\n")


def write_edges(path: str, graph: Graph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, v in graph.pairs:
            fh.write(f"{int(u)}\t{int(v)}\n")


# -- kNN construction -----------------------------------------------------------


def _pairwise_distances(features: np.ndarray, spec: KnnSpec) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if spec.metric == "euclidean":
        sq = (x * x).sum(axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
        return np.sqrt(np.maximum(d2, 0.0))
    norms = np.sqrt((x * x).sum(axis=1))
    if np.any(norms == 0.0):
        bad = int(np.nonzero(norms == 0.0)[0][0])
        raise ConfigError(f"cosine metrics need nonzero feature rows; row {bad} is zero")
    xn = x / norms[:, None]
    cos = np.clip(xn @ xn.T, -1.0, 1.0)
    if spec.metric == "cosine":
        return 1.0 - cos
    theta = math.radians(spec.theta_degrees)
    return 1.0 - np.cos(np.arccos(cos) + theta)


def build_knn_graph(features: np.ndarray, spec: KnnSpec) -> Graph:
    """Link each instance to its k nearest others, then symmetrize by union.

    Ties are broken toward the lower index (the distance sort is stable).
    """
    n = np.asarray(features).shape[0]
    if n <= spec.k:
        raise ConfigError(f"need more instances ({n}) than neighbors k={spec.k}")
    dist = _pairwise_distances(features, spec)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, : spec.k]
    src = np.repeat(np.arange(n, dtype=np.int64), spec.k)
    pairs = np.stack([src, order.reshape(-1).astype(np.int64)], axis=1)
    return Graph.from_pairs(n, pairs)


# -- synthetic shift benchmark -----------------------------------------------------


@dataclass(frozen=True)
class ShiftBenchmarkConfig:
    """Well-separated Gaussian clusters with per-domain graphs and
    graph-dependent labels.

    Label of u is argmax over classes of onehot(cluster(u)) + gamma * mean
    over graph neighbors of onehot(cluster(v)), so label flips concentrate
    where a domain's graph mixes clusters.
    """

    seed: int
    n: int
    dim: int
    classes: int
    domain_specs: tuple[KnnSpec, ...]
    gamma: float = 1.5
    center_scale: float = 3.0
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if len(self.domain_specs) < 2:
            raise ConfigError("need at least 2 domains")
        if self.n < 10 * self.classes:
            raise ConfigError(f"need n >= 10 * classes, got n={self.n}, classes={self.classes}")


@dataclass
class DomainData:
    """One domain of a shift benchmark: shared features, own graph and labels."""

    dataset: Dataset
    graph: Graph
    spec: KnnSpec
    clusters: np.ndarray


def generate_shift_benchmark(config: ShiftBenchmarkConfig) -> list[DomainData]:
    rng = named_rng(config.seed, "shift-benchmark")
    c, n, d = config.classes, config.n, config.dim

    centers = rng.standard_normal((c, d))
    centers /= np.sqrt((centers * centers).sum(axis=1, keepdims=True))
    centers *= config.center_scale

    clusters = np.repeat(np.arange(c, dtype=np.int64), -(-n // c))[:n]
    rng.shuffle(clusters)
    features = centers[clusters] + config.noise_scale * rng.standard_normal((n, d))

    onehot = np.zeros((n, c))
    onehot[np.arange(n), clusters] = 1.0

    domains = []
    for i, spec in enumerate(config.domain_specs):
        graph = build_knn_graph(features, spec)
        nbr_sum = np.zeros_like(onehot)
        np.add.at(nbr_sum, graph.edge_src, onehot[graph.edge_dst])
        nbr_mean = nbr_sum * graph.inverse_degrees()
        labels = np.argmax(onehot + config.gamma * nbr_mean, axis=1).astype(np.float64)
        ds = Dataset(features, labels, np.full(n, i, dtype=np.int64),
                     "classification", num_classes=c)
        domains.append(DomainData(ds, graph, spec, clusters.copy()))
    return domains


def write_benchmark(out_dir: str, domains: list[DomainData], train_domains: list[int],
                    test_domains: list[int], extra_manifest: dict | None = None) -> str:
    """Write per-domain tsv files plus a manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, dom in enumerate(domains):
        sub = os.path.join(out_dir, f"domain{i}")
        os.makedirs(sub, exist_ok=True)
        write_features(os.path.join(sub, "features.tsv"), dom.dataset.features)
        write_labels(os.path.join(sub, "labels.tsv"), dom.dataset.labels, dom.dataset.task)
        write_edges(os.path.join(sub, "edges.tsv"), dom.graph)
        write_domains(os.path.join(sub, "domains.tsv"), dom.dataset.domains)
        entries.append({
            "domain": i,
            "dir": f"domain{i}",
            "k": dom.spec.k,
            "metric": dom.spec.metric,
            "theta_degrees": dom.spec.theta_degrees,
        })
    manifest = {
        "task": domains[0].dataset.task,
        "classes": domains[0].dataset.num_classes,
        "domains": entries,
        "train_domains": list(train_domains),
        "test_domains": list(test_domains),
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_benchmark(manifest_path: str) -> tuple[list[tuple[Dataset, Graph]], dict]:
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = os.path.dirname(manifest_path)
    out = []
    for entry in manifest["domains"]:
        sub = os.path.join(base, entry["dir"])
        ds, graph = load_dataset(
            os.path.join(sub, "features.tsv"),
            os.path.join(sub, "labels.tsv"),
            os.path.join(sub, "edges.tsv"),
            os.path.join(sub, "domains.tsv"),
            task=manifest["task"],
            num_classes=int(manifest.get("classes", 0)),
        )
        out.append((ds, graph))
    return out, manifest


# -- pseudo dataset for the prior ---------------------------------------------------


def make_pseudo_dataset(features, graph: Graph | None = None,
                        size: int | None = None, edge_prob: float | None = None,
                        seed: int = 0) -> PseudoDataset:
    """Sample a small instance subset with independently random edges.

    Accepts a Dataset or a raw feature matrix. ``size`` defaults to
    max(1, int(0.01 * N)); ``edge_prob`` defaults to the observed graph
    density floored at 1e-4.
    """
    if isinstance(features, Dataset):
        features = features.features
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n == 0:
        raise ConfigError("cannot build a pseudo dataset from an empty dataset")
    t = max(1, int(0.01 * n)) if size is None else int(size)
    if t > n:
        raise ConfigError(f"pseudo size {t} exceeds dataset size {n}")
    if t < 1:
        raise ConfigError(f"pseudo size must be >= 1, got {t}")
    if edge_prob is None:
        density = graph.density if graph is not None else 0.0
        edge_prob = max(density, 1e-4)
    if not 0.0 <= edge_prob <= 1.0:
        raise ConfigError(f"edge probability must lie in [0, 1], got {edge_prob}")

    rng = named_rng(seed, "pseudo-dataset")
    chosen = np.sort(rng.choice(n, size=t, replace=False))
    iu, ju = np.triu_indices(t, k=1)
    keep = rng.random(iu.shape[0]) < edge_prob
    pairs = np.stack([iu[keep], ju[keep]], axis=1).astype(np.int64)
    return PseudoDataset(features[chosen], Graph(t, pairs), seed, float(edge_prob), chosen)


# -- domain splits ------------------------------------------------------------------


@dataclass
class Splits:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray


def split_by_domain(dataset: Dataset, train_domains, test_domains,
                    valid_fraction: float = 0.25, seed: int = 0) -> Splits:
    """Hold out a validation fraction from the training domains; all labeled
    instances of the test domains become test."""
    train_domains = sorted(set(int(d) for d in train_domains))
    test_domains = sorted(set(int(d) for d in test_domains))
    if set(train_domains) & set(test_domains):
        raise ConfigError("train and test domains must be disjoint")
    present = set(np.unique(dataset.domains).tolist())
    missing = [d for d in train_domains + test_domains if d not in present]
    if missing:
        raise ConfigError(f"domains {missing} not present in the data")
    if not 0.0 < valid_fraction < 1.0:
        raise ConfigError(f"valid_fraction must lie in (0, 1), got {valid_fraction}")

    labeled = dataset.labeled_mask
    pool = np.nonzero(labeled & np.isin(dataset.domains, train_domains))[0]
    if pool.size == 0:
        raise ConfigError("no labeled instances in the training domains")
    rng = named_rng(seed, "domain-split")
    perm = rng.permutation(pool.size)
    n_valid = int(pool.size * valid_fraction)
    if n_valid == 0 or n_valid == pool.size:
        raise ConfigError(f"valid_fraction {valid_fraction} leaves an empty split")
    valid = np.sort(pool[perm[:n_valid]])
    train = np.sort(pool[perm[n_valid:]])
    test = np.nonzero(labeled & np.isin(dataset.domains, test_domains))[0] if test_domains \
        else np.zeros(0, dtype=np.int64)
    return Splits(train=train, valid=valid, test=np.sort(test))
