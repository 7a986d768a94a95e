"""Executable oracle suites: gradient fidelity, the deconfounded
lower-bound inequality with its equality condition, linear-attention
equivalence and complexity, and conservation of the diffusion step.

Every suite is deterministic given its seed and returns machine-readable
OracleReport rows; failures are reported, never thrown.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import Tensor
from .data import Graph, make_pseudo_dataset
from .errors import ConfigError
from .layers import DiffusivityField, LayerParams, euler_diffusion_step
from .model import Model, ModelConfig
from .objective import (enumerate_assignment_logliks, exact_deconfounded_loglik,
                        mixture_prior, reweighted_elbo, total_objective)
from .rng import NoiseStreams, named_rng

FD_STEP = 1e-5
KINK_MARGIN = 1e-3
GRAD_TOLERANCE = 1e-4
BOUND_SLACK = 1e-8
EQUALITY_SLACK = 1e-9
ATTENTION_TOLERANCE = 1e-6
CONSERVATION_TOLERANCE = 1e-9


@dataclass
class OracleReport:
    suite: str
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def write_reports(path: str, reports: list[OracleReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def _random_graph(rng: np.random.Generator, n: int, edge_prob: float) -> Graph:
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.shape[0]) < edge_prob
    return Graph(n, np.stack([iu[keep], ju[keep]], axis=1).astype(np.int64))


# -- gradient fidelity ------------------------------------------------------------


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float((np.abs(analytic - numeric) / scale).max())


def _gradcheck_instance(kind: str, seed: int):
    """Random tiny data, model, and a frozen-noise loss closure.

    Resamples until every activation input stays away from its kink, so
    finite differences are taken on a smooth neighborhood.
    """
    for attempt in range(50):
        inst_seed = seed * 1000 + attempt
        rng = named_rng(inst_seed, "gradcheck-data")
        n = int(rng.integers(4, 9))
        in_dim = int(rng.integers(2, 5))
        hidden = int(rng.integers(3, 6))
        classes = int(rng.integers(2, 4))
        branches = int(rng.integers(1, 4))
        depth = int(rng.integers(1, 3))
        graph = _random_graph(rng, n, 0.5)
        features = rng.standard_normal((n, in_dim))
        labels = rng.integers(0, classes, size=n).astype(np.float64)
        rows = np.arange(n, dtype=np.int64)
        dropout = 0.1 if attempt % 2 == 0 else 0.0

        config = ModelConfig(kind=kind, in_dim=in_dim, hidden=hidden, out_dim=classes,
                             num_layers=depth, branches=branches, tau=1.0,
                             dropout=dropout,
                             attn_mode="literal" if attempt % 2 == 0 else "softmax")
        model = Model(config, seed=inst_seed)
        pseudo = make_pseudo_dataset(features, size=max(2, n // 2), edge_prob=0.5,
                                     seed=inst_seed)

        def loss_fn():
            streams = NoiseStreams(inst_seed)
            res = model.forward(features, graph, mode="train", streams=streams,
                                stream_tag="gc")
            pres = model.forward(pseudo.features, pseudo.graph, mode="train",
                                 streams=streams, stream_tag="pseudo")
            prior = mixture_prior([g.probs for g in pres.gates])
            logits = ad.gather_rows(res.logits, rows)
            loss, _ = total_objective(logits, labels[rows], res.gates, prior,
                                      kl_weight=1.0, task="classification", kl_rows=rows)
            return loss

        sink: list[float] = []
        with layers.activation_trace(sink):
            loss_fn()
        if not sink or min(sink) > KINK_MARGIN:
            return model, loss_fn, {"n": n, "hidden": hidden, "branches": branches,
                                    "layers": depth, "seed": inst_seed}
    raise ConfigError("could not sample a kink-free gradcheck instance")


def _group_of(name: str) -> str:
    tail = name.split(".")[-1]
    head = name.split(".")[0]
    return f"{head}.{tail}" if head in ("input", "output") else tail


def gradcheck_all(seed: int = 0, instances_per_kind: int = 7) -> list[OracleReport]:
    """Central finite differences against the tape for every parameter of
    every layer kind, through the full regularized objective."""
    reports = []
    for kind in ("gcn", "gat", "trans"):
        worst: dict[str, float] = {}
        checked = 0
        for i in range(instances_per_kind):
            model, loss_fn, meta = _gradcheck_instance(kind, seed * 100 + i)
            loss = loss_fn()
            loss.backward()
            for name, p in model.params.items():
                analytic = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                numeric = np.empty_like(analytic)
                flat = p.data.reshape(-1)
                num_flat = numeric.reshape(-1)
                for j in range(flat.size):
                    keep = flat[j]
                    flat[j] = keep + FD_STEP
                    up = loss_fn().item()
                    flat[j] = keep - FD_STEP
                    down = loss_fn().item()
                    flat[j] = keep
                    num_flat[j] = (up - down) / (2.0 * FD_STEP)
                group = _group_of(name)
                err = _relative_error(analytic, numeric)
                worst[group] = max(worst.get(group, 0.0), err)
                p.grad = None
            checked += 1
        for group in sorted(worst):
            reports.append(OracleReport(
                suite="gradcheck",
                name=f"{kind}.{group}",
                value=worst[group],
                tolerance=GRAD_TOLERANCE,
                passed=worst[group] < GRAD_TOLERANCE,
                detail={"kind": kind, "instances": checked},
            ))
    return reports


# -- deconfounded bound ---------------------------------------------------------------


def _random_simplex(rng: np.random.Generator, k: int) -> np.ndarray:
    x = rng.random(k) + 1e-3
    return x / x.sum()


def _theorem_instance(rng: np.random.Generator, force_single_layer: bool):
    kind = ("gcn", "gat", "trans")[int(rng.integers(0, 3))]
    n = int(rng.integers(3, 6))
    in_dim = int(rng.integers(2, 4))
    hidden = int(rng.integers(2, 5))
    classes = int(rng.integers(2, 4))
    branches = int(rng.integers(1, 4))
    depth = 1 if force_single_layer else int(rng.integers(1, 3))
    seed = int(rng.integers(0, 2**31))
    graph = _random_graph(rng, n, 0.5)
    features = rng.standard_normal((n, in_dim))
    labels = rng.integers(0, classes, size=n).astype(np.float64)
    labeled = np.arange(n, dtype=np.int64)
    config = ModelConfig(kind=kind, in_dim=in_dim, hidden=hidden, out_dim=classes,
                         num_layers=depth, branches=branches)
    model = Model(config, seed=seed)
    prior = [_random_simplex(rng, branches) for _ in range(depth)]
    q = [_random_simplex(rng, branches) for _ in range(depth)]
    return model, features, labels, labeled, graph, prior, q


def theorem1_suite(trials: int = 50, seed: int = 0) -> list[OracleReport]:
    """The re-weighted bound never exceeds the enumerated log-likelihood, and
    the Bayes-form posterior closes the gap at a single layer."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    rng = named_rng(seed, "theorem1")
    reports = []
    for t in range(trials):
        single = t % 2 == 0
        model, x, y, labeled, graph, prior, q = _theorem_instance(rng, single)
        exact = exact_deconfounded_loglik(model, x, y, labeled, graph, prior)
        bound = reweighted_elbo(model, x, y, labeled, graph, q, prior)
        gap = exact - bound
        reports.append(OracleReport(
            suite="theorem1", name=f"bound.trial{t}", value=gap, tolerance=BOUND_SLACK,
            passed=gap >= -BOUND_SLACK,
            detail={"layers": model.config.num_layers, "branches": model.config.branches},
        ))
        if single:
            k = model.config.branches
            _, logliks = enumerate_assignment_logliks(model, x, y, labeled, graph, k, 1)
            weights = np.log(prior[0]) + logliks
            weights -= weights.max()
            q_star = np.exp(weights)
            q_star /= q_star.sum()
            tight = reweighted_elbo(model, x, y, labeled, graph, [q_star], prior)
            reports.append(OracleReport(
                suite="theorem1", name=f"equality.trial{t}", value=abs(exact - tight),
                tolerance=EQUALITY_SLACK, passed=abs(exact - tight) <= EQUALITY_SLACK,
                detail={"branches": k},
            ))
    # Degenerate single-assignment case: the gap is exactly zero.
    model, x, y, labeled, graph, _, _ = _theorem_instance(named_rng(seed, "theorem1-k1"), True)
    single_cfg = ModelConfig(kind="gcn", in_dim=x.shape[1], hidden=3,
                             out_dim=model.config.out_dim, num_layers=1, branches=1)
    single_model = Model(single_cfg, seed=seed)
    p1 = [np.array([1.0])]
    gap = abs(exact_deconfounded_loglik(single_model, x, y, labeled, graph, p1)
              - reweighted_elbo(single_model, x, y, labeled, graph, p1, p1))
    reports.append(OracleReport(
        suite="theorem1", name="single-branch-degenerate", value=gap, tolerance=1e-12,
        passed=gap <= 1e-12, detail={},
    ))
    return reports


# -- linear attention ----------------------------------------------------------------


def attention_equivalence_suite(trials: int = 20, seed: int = 0) -> list[OracleReport]:
    """Linear-summary attention matches the explicit quadratic form, and the
    summary-pass operation count grows exactly linearly in N."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    rng = named_rng(seed, "attention")
    reports = []
    for t in range(trials):
        n = 1 if t == 0 else int(rng.integers(2, 65))
        if t == trials - 1:
            n = 64
        d = int(rng.integers(2, 17))
        z = rng.standard_normal((n, d))
        wk = rng.standard_normal((d, d))
        wq = rng.standard_normal((d, d))
        linear = layers.linear_attention_aggregate(Tensor(z), Tensor(wk), Tensor(wq),
                                                   eps=1e-8).data
        quad = layers.quadratic_attention_aggregate(z, wk, wq)
        err = float(np.abs(linear - quad).max() / max(np.abs(quad).max(), 1e-12))
        reports.append(OracleReport(
            suite="attention", name=f"equivalence.trial{t}", value=err,
            tolerance=ATTENTION_TOLERANCE, passed=err <= ATTENTION_TOLERANCE,
            detail={"n": n, "d": d},
        ))

    d = 8
    wk = named_rng(seed, "attention-count").standard_normal((d, d))
    wq = named_rng(seed, "attention-count2").standard_normal((d, d))
    counts = {}
    for n in (16, 32):
        z = named_rng(seed, f"attention-z{n}").standard_normal((n, d))
        layers.reset_summary_op_count()
        layers.linear_attention_aggregate(Tensor(z), Tensor(wk), Tensor(wq))
        counts[n] = layers.summary_op_count()
    linear_growth = counts[32] == 2 * counts[16]
    reports.append(OracleReport(
        suite="attention", name="summary-count-linearity",
        value=float(counts[32] - 2 * counts[16]), tolerance=0.0, passed=linear_growth,
        detail={"count_16": counts[16], "count_32": counts[32]},
    ))
    return reports


# -- conservation --------------------------------------------------------------------


def _symmetric_field(graph: Graph, rng: np.random.Generator) -> DiffusivityField:
    pair_rates = rng.random(graph.num_undirected_edges)
    lookup = {}
    for idx, (u, v) in enumerate(graph.pairs):
        lookup[(int(u), int(v))] = pair_rates[idx]
        lookup[(int(v), int(u))] = pair_rates[idx]
    rates = np.array([lookup[(int(s), int(t))]
                      for s, t in zip(graph.edge_src, graph.edge_dst)])
    return DiffusivityField(graph, rates)


def _zero_layer_params(kind: str, branches: int, hidden: int) -> LayerParams:
    zeros = lambda shape: Tensor(np.zeros(shape))
    return LayerParams(
        kind=kind,
        gate_weight=None,
        self_weights=[zeros((hidden, hidden)) for _ in range(branches)],
        nbr_weights=[zeros((hidden, hidden)) for _ in range(branches)],
        attn_weights=[zeros((hidden, hidden)) for _ in range(branches)] if kind == "gat" else None,
        attn_vectors=[zeros((2 * hidden,)) for _ in range(branches)] if kind == "gat" else None,
        key_weights=[zeros((hidden, hidden)) for _ in range(branches)] if kind == "trans" else None,
        query_weights=[zeros((hidden, hidden)) for _ in range(branches)] if kind == "trans" else None,
    )


def conservation_suite(trials: int = 20, seed: int = 0) -> list[OracleReport]:
    """Symmetric pairwise rates preserve per-dimension column sums; consensus
    states and zero-weight layers are exact fixed points."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    rng = named_rng(seed, "conservation")
    reports = []
    for t in range(trials):
        n = int(rng.integers(2, 51))
        graph = _random_graph(rng, n, min(1.0, 4.0 / max(n - 1, 1)))
        d = int(rng.integers(1, 6))
        z = rng.standard_normal((n, d))
        field = _symmetric_field(graph, rng)
        stepped = euler_diffusion_step(Tensor(z), graph, field, alpha=0.5).data
        drift = float(np.abs(stepped.sum(axis=0) - z.sum(axis=0)).max())
        reports.append(OracleReport(
            suite="conservation", name=f"column-sums.trial{t}", value=drift,
            tolerance=CONSERVATION_TOLERANCE, passed=drift < CONSERVATION_TOLERANCE,
            detail={"n": n, "edges": graph.num_undirected_edges},
        ))

        consensus = np.tile(rng.standard_normal(d), (n, 1))
        out = euler_diffusion_step(Tensor(consensus), graph, field, alpha=0.5).data
        exact = bool(np.array_equal(out, consensus))
        reports.append(OracleReport(
            suite="conservation", name=f"consensus.trial{t}", value=0.0 if exact else 1.0,
            tolerance=0.0, passed=exact, detail={"n": n},
        ))

    hidden = 4
    graph = _random_graph(named_rng(seed, "conservation-fixed"), 8, 0.4)
    z = named_rng(seed, "conservation-z").standard_normal((8, hidden))
    sample = Tensor(np.full((8, 2), 0.5))
    for kind in ("gcn", "gat", "trans"):
        params = _zero_layer_params(kind, 2, hidden)
        if kind == "gcn":
            out = layers.glind_gcn_layer(Tensor(z), graph, params, sample)
        elif kind == "gat":
            out = layers.glind_gat_layer(Tensor(z), graph, params, sample)
        else:
            out = layers.glind_trans_layer(Tensor(z), graph, params, sample)
        exact = bool(np.array_equal(out.data, z))
        reports.append(OracleReport(
            suite="conservation", name=f"zero-weight-fixed-point.{kind}",
            value=0.0 if exact else float(np.abs(out.data - z).max()),
            tolerance=0.0, passed=exact, detail={},
        ))

    # Asymmetric rates break conservation; recorded as information, the
    # expected outcome is a nonzero drift.
    two = Graph(2, np.array([[0, 1]], dtype=np.int64))
    rates = np.zeros(2)
    rates[0] = 1.0 if two.edge_src[0] == 0 else 0.0
    rates[1] = 1.0 - rates[0]
    z2 = np.array([[0.0], [1.0]])
    out2 = euler_diffusion_step(Tensor(z2), two, DiffusivityField(two, rates), 0.5).data
    drift2 = float(np.abs(out2.sum(axis=0) - z2.sum(axis=0)).max())
    reports.append(OracleReport(
        suite="conservation", name="asymmetric-counterexample", value=drift2,
        tolerance=0.0, passed=drift2 > 0.0, detail={"informational": True},
    ))
    return reports


SUITES = {
    "gradcheck": gradcheck_all,
    "theorem1": theorem1_suite,
    "attention": attention_equivalence_suite,
    "conservation": conservation_suite,
}


def run_suites(names: list[str], seed: int = 0) -> list[OracleReport]:
    reports = []
    for name in names:
        if name not in SUITES:
            raise ConfigError(f"unknown suite {name!r}; expected one of {sorted(SUITES)}")
        fn = SUITES[name]
        reports.extend(fn(seed=seed) if name == "gradcheck" else fn(seed=seed))
    return reports
