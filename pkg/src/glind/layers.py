"""Diffusion dynamics: branch gating, Gumbel-Softmax sampling, the explicit
Euler step over pairwise rates, and the three message-passing layer kinds.

Each layer mixes K candidate update mechanisms ("branches") per instance.
A gate projects the current embedding onto K logits; a relaxed categorical
sample h selects among the branches while staying differentiable.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .data import Graph
from .errors import ConfigError, ShapeError

GATE_FLOOR = 1e-12

# Nodes touched while building the shared attention summaries; used by the
# linear-complexity check (3 passes over N rows per call).
SUMMARY_PASS_OPS = 0


def reset_summary_op_count() -> None:
    global SUMMARY_PASS_OPS
    SUMMARY_PASS_OPS = 0


def summary_op_count() -> int:
    return SUMMARY_PASS_OPS


# Gradient checks avoid sampling near activation kinks; while a trace list
# is installed, every ReLU/LeakyReLU input records its smallest magnitude.
_ACTIVATION_TRACE: list | None = None


@contextmanager
def activation_trace(sink: list):
    global _ACTIVATION_TRACE
    prev = _ACTIVATION_TRACE
    _ACTIVATION_TRACE = sink
    try:
        yield sink
    finally:
        _ACTIVATION_TRACE = prev


def note_preactivation(values: np.ndarray) -> None:
    if _ACTIVATION_TRACE is not None and values.size:
        _ACTIVATION_TRACE.append(float(np.abs(values).min()))


@dataclass
class GateState:
    """Per-layer gate output: branch probabilities and the relaxed sample."""

    probs: Tensor
    sample: Tensor
    temperature: float
    layer: int


@dataclass
class LayerParams:
    """Trainable weights of one layer.

    kind 'gcn' uses self_weights/nbr_weights per branch; 'gat' adds an
    attention transform and a 2d score vector; 'trans' adds key/query
    transforms for all-pair attention.
    """

    kind: str
    gate_weight: Tensor | None
    self_weights: list[Tensor]
    nbr_weights: list[Tensor]
    attn_weights: list[Tensor] | None = None
    attn_vectors: list[Tensor] | None = None
    key_weights: list[Tensor] | None = None
    query_weights: list[Tensor] | None = None

    def __post_init__(self):
        if self.kind not in ("gcn", "gat", "trans"):
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        k = len(self.self_weights)
        if len(self.nbr_weights) != k:
            raise ConfigError("branch counts disagree across weight groups")
        if self.kind == "gat" and (self.attn_weights is None or self.attn_vectors is None
                                   or len(self.attn_weights) != k or len(self.attn_vectors) != k):
            raise ConfigError("gat layers need one attention transform and score vector per branch")
        if self.kind == "trans" and (self.key_weights is None or self.query_weights is None
                                     or len(self.key_weights) != k or len(self.query_weights) != k):
            raise ConfigError("trans layers need one key and query transform per branch")

    @property
    def branches(self) -> int:
        return len(self.self_weights)


@dataclass
class DiffusivityField:
    """Explicit nonnegative pairwise rates aligned with a graph's directed edges."""

    graph: Graph
    rates: np.ndarray

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=np.float64)
        if self.rates.shape != self.graph.edge_src.shape:
            raise ShapeError(
                f"field has {self.rates.shape[0]} rates but the graph has "
                f"{self.graph.edge_src.shape[0]} directed edges"
            )
        if self.rates.size and self.rates.min() < 0:
            raise ConfigError("diffusivity rates must be nonnegative")


# -- gating -------------------------------------------------------------------


def gate_probabilities(z: Tensor, gate_weight: Tensor) -> Tensor:
    """Branch probabilities per instance: row-softmax of the gate projection."""
    return ad.softmax_rows(ad.matmul(z, ad.transpose(gate_weight)))


def sample_branch(probs: Tensor, tau: float, rng: np.random.Generator,
                  mode: str = "paper-literal", shared_noise: bool = False) -> Tensor:
    """Relaxed categorical sample over branches via the Gumbel trick.

    'paper-literal' perturbs the probabilities directly; 'log-space'
    perturbs log-probabilities (the usual Gumbel-Softmax logits). Noise is
    drawn per instance row unless shared_noise collapses it to one row.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    if mode not in ("paper-literal", "log-space"):
        raise ConfigError(f"unknown gumbel mode {mode!r}")
    n, k = probs.shape
    noise = rng.gumbel(size=(1, k) if shared_noise else (n, k))
    base = probs if mode == "paper-literal" else ad.log(ad.clip_min(probs, GATE_FLOOR))
    return ad.softmax_rows(ad.mul(ad.add(base, Tensor(noise)), 1.0 / tau))


# -- generic Euler step -----------------------------------------------------------


def euler_diffusion_step(z: Tensor, graph: Graph, field: DiffusivityField, alpha: float) -> Tensor:
    """One explicit step: z_u += alpha * sum over neighbors of rate * (z_v - z_u)."""
    if alpha <= 0:
        raise ConfigError(f"step size must be positive, got {alpha}")
    if field.rates.shape != graph.edge_src.shape:
        raise ShapeError("diffusivity field does not match the graph's edges")
    if graph.edge_src.size == 0:
        return ad.add(z, 0.0)
    diff = ad.add(ad.gather_rows(z, graph.edge_dst), ad.mul(ad.gather_rows(z, graph.edge_src), -1.0))
    flux = ad.mul(diff, Tensor(field.rates.reshape(-1, 1)))
    return ad.add(z, ad.mul(ad.scatter_rows(flux, graph.edge_src, graph.n), alpha))


# -- shared helpers -----------------------------------------------------------------


def _neighbor_mean(z: Tensor, graph: Graph) -> Tensor:
    """Mean of neighbor embeddings; zero rows for isolated nodes."""
    summed = ad.scatter_rows(ad.gather_rows(z, graph.edge_dst), graph.edge_src, graph.n)
    return ad.mul(summed, Tensor(graph.inverse_degrees()))


def _combine_branches(z: Tensor, branch_updates: list[Tensor], sample: Tensor,
                      alpha_res: float, residual_mode: str) -> Tensor:
    delta = None
    for k, update in enumerate(branch_updates):
        weighted = ad.mul(ad.narrow(sample, 1, k, k + 1), update)
        delta = weighted if delta is None else ad.add(delta, weighted)
    if residual_mode == "replace":
        return delta
    return ad.add(z, ad.mul(delta, alpha_res))


def _check_residual_mode(residual_mode: str) -> None:
    if residual_mode not in ("add", "replace"):
        raise ConfigError(f"unknown residual mode {residual_mode!r}")


# -- layer kinds -----------------------------------------------------------------


def glind_gcn_layer(z: Tensor, graph: Graph, params: LayerParams, sample: Tensor,
                    alpha_res: float = 0.5, residual_mode: str = "add",
                    self_term: bool = True) -> Tensor:
    """Branch k transforms the degree-scaled neighbor sum and the instance itself."""
    _check_residual_mode(residual_mode)
    nbr = _neighbor_mean(z, graph)
    updates = []
    for k in range(params.branches):
        upd = ad.matmul(nbr, ad.transpose(params.nbr_weights[k]))
        if self_term:
            upd = ad.add(upd, ad.matmul(z, ad.transpose(params.self_weights[k])))
        updates.append(upd)
    return _combine_branches(z, updates, sample, alpha_res, residual_mode)


def glind_gat_layer(z: Tensor, graph: Graph, params: LayerParams, sample: Tensor,
                    alpha_res: float = 0.5, slope: float = 0.2, attn_mode: str = "literal",
                    residual_mode: str = "add", self_term: bool = True) -> Tensor:
    """Per-branch attention over observed edges.

    'literal' divides raw LeakyReLU scores by their per-node sum, guarding a
    zero denominator with a signed epsilon; 'softmax' exponentiates scores
    first, which keeps the weights positive and summing to one.
    """
    _check_residual_mode(residual_mode)
    if attn_mode not in ("literal", "softmax"):
        raise ConfigError(f"unknown attention mode {attn_mode!r}")
    src, dst = graph.edge_src, graph.edge_dst
    d = z.shape[1]
    updates = []
    for k in range(params.branches):
        upd = None
        if src.size:
            h = ad.matmul(z, ad.transpose(params.attn_weights[k]))
            score_vec = ad.reshape(params.attn_vectors[k], (2 * d, 1))
            e_src = ad.matmul(h, ad.narrow(score_vec, 0, 0, d))
            e_dst = ad.matmul(h, ad.narrow(score_vec, 0, d, 2 * d))
            raw = ad.add(ad.gather_rows(e_src, src), ad.gather_rows(e_dst, dst))
            note_preactivation(raw.data)
            scores = ad.leaky_relu(raw, slope)
            if attn_mode == "softmax":
                shift = kernels.segment_max(src, scores.data.reshape(-1), graph.n)
                scores = ad.exp(ad.add(scores, Tensor(-shift[src].reshape(-1, 1))))
                denom = ad.gather_rows(ad.scatter_rows(scores, src, graph.n), src)
            else:
                raw_denom = ad.gather_rows(ad.scatter_rows(scores, src, graph.n), src)
                guard = np.where(raw_denom.data >= 0, 1e-8, -1e-8)
                denom = ad.add(raw_denom, Tensor(guard))
            weights = ad.div(scores, denom)
            msgs = ad.mul(ad.gather_rows(ad.matmul(z, ad.transpose(params.nbr_weights[k])), dst),
                          weights)
            upd = ad.scatter_rows(msgs, src, graph.n)
        if self_term:
            self_part = ad.matmul(z, ad.transpose(params.self_weights[k]))
            upd = self_part if upd is None else ad.add(upd, self_part)
        if upd is None:
            upd = ad.mul(z, 0.0)
        updates.append(upd)
    return _combine_branches(z, updates, sample, alpha_res, residual_mode)


def linear_attention_aggregate(z: Tensor, key_weight: Tensor, query_weight: Tensor,
                               eps: float = 1e-8) -> Tensor:
    """All-pair attention with kernel 1 + cos(key, query), in O(N d^2).

    The three summaries (sum of rows, key-weighted outer sum, key sum) are
    computed once and shared by every instance, so the work per call grows
    linearly in N instead of quadratically.
    """
    global SUMMARY_PASS_OPS
    n = z.shape[0]
    keys = ad.l2_normalize_rows(ad.matmul(z, ad.transpose(key_weight)))
    queries = ad.l2_normalize_rows(ad.matmul(z, ad.transpose(query_weight)))
    row_sum = ad.tsum(z, axis=0, keepdims=True)
    outer_sum = ad.matmul(ad.transpose(z), keys)
    key_sum = ad.tsum(keys, axis=0, keepdims=True)
    SUMMARY_PASS_OPS += 3 * n
    numer = ad.add(row_sum, ad.matmul(queries, ad.transpose(outer_sum)))
    denom = ad.add(ad.matmul(queries, ad.transpose(key_sum)), float(n) + eps)
    return ad.div(numer, denom)


def quadratic_attention_aggregate(z: np.ndarray, key_weight: np.ndarray,
                                  query_weight: np.ndarray) -> np.ndarray:
    """Explicit O(N^2) form of the same attention; the oracle for the linear path."""
    z = np.asarray(z, dtype=np.float64)
    def normalize(m):
        norms = np.maximum(np.sqrt((m * m).sum(axis=1, keepdims=True)), 1e-12)
        return m / norms
    keys = normalize(z @ key_weight.T)
    queries = normalize(z @ query_weight.T)
    sims = 1.0 + queries @ keys.T
    return (sims @ z) / sims.sum(axis=1, keepdims=True)


def glind_trans_layer(z: Tensor, graph: Graph | None, params: LayerParams, sample: Tensor,
                      alpha_res: float = 0.5, eps: float = 1e-8, residual_mode: str = "add",
                      self_term: bool = True) -> Tensor:
    """Latent all-pair attention per branch, optionally averaged with the
    observed-neighbor mean where edges exist."""
    _check_residual_mode(residual_mode)
    mixing = graph is not None and graph.edge_src.size > 0
    if mixing:
        nbr = _neighbor_mean(z, graph)
        half_mask = Tensor(0.5 * (graph.degrees > 0).astype(np.float64).reshape(-1, 1))
    updates = []
    for k in range(params.branches):
        agg = linear_attention_aggregate(z, params.key_weights[k], params.query_weights[k], eps)
        if mixing:
            agg = ad.add(ad.mul(agg, ad.add(ad.mul(half_mask, -1.0), 1.0)),
                         ad.mul(nbr, half_mask))
        upd = ad.matmul(agg, ad.transpose(params.nbr_weights[k]))
        if self_term:
            upd = ad.add(upd, ad.matmul(z, ad.transpose(params.self_weights[k])))
        updates.append(upd)
    return _combine_branches(z, updates, sample, alpha_res, residual_mode)
