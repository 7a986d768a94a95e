"""Training objective: supervised loss plus per-layer KL of the gate
posterior against a data-driven prior, and exact enumeration oracles for
the deconfounded bound it approximates.

The prior is a mixture of the gate posteriors computed on a small pseudo
dataset, recomputed from the current parameters, so gradients flow into
it unless explicitly stopped.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Graph
from .errors import ConfigError, RefusalError
from .layers import GATE_FLOOR, GateState
from .model import Model

ENUMERATION_LIMIT = 4096


@dataclass
class PriorEstimate:
    """Per-layer categorical prior over the K branch hypotheses."""

    per_layer: list[Tensor]

    def values(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.per_layer]


@dataclass
class ObjectiveReport:
    supervised: float
    kl_per_layer: list[float]
    kl_weight: float
    total: float


def mixture_prior(pseudo_gate_probs: list[Tensor]) -> PriorEstimate:
    """Average the pseudo-instance posteriors per layer (entries floored at 1e-12)."""
    if not pseudo_gate_probs:
        return PriorEstimate([])
    if pseudo_gate_probs[0].shape[0] < 1:
        raise ConfigError("mixture prior needs at least one pseudo instance")
    return PriorEstimate([ad.clip_min(ad.tmean(p, axis=0), GATE_FLOOR)
                          for p in pseudo_gate_probs])


def posterior_average_prior(gate_probs_per_layer: list[list[Tensor]],
                            counts: list[int] | None = None) -> PriorEstimate:
    """Prior as the average posterior over the real instances.

    Accepts one probability tensor per unit per layer; units are weighted
    by their instance counts so the result equals the pooled mean.
    """
    if not gate_probs_per_layer:
        return PriorEstimate([])
    per_layer = []
    for unit_tensors in gate_probs_per_layer:
        sizes = counts or [t.shape[0] for t in unit_tensors]
        total = float(sum(sizes))
        acc = None
        for t, sz in zip(unit_tensors, sizes):
            part = ad.mul(ad.tmean(t, axis=0), sz / total)
            acc = part if acc is None else ad.add(acc, part)
        per_layer.append(ad.clip_min(acc, GATE_FLOOR))
    return PriorEstimate(per_layer)


def categorical_kl(q, p, floor: float = GATE_FLOOR) -> float:
    """KL(q || p) for two points on the K-simplex, with 0 * log 0 = 0."""
    q = np.asarray(q, dtype=np.float64)
    p = np.maximum(np.asarray(p, dtype=np.float64), floor)
    terms = np.where(q > 0, q * (np.log(np.maximum(q, floor)) - np.log(p)), 0.0)
    return float(terms.sum())


def categorical_kl_rows(rows: np.ndarray, p: np.ndarray, floor: float = GATE_FLOOR) -> np.ndarray:
    """Row-wise KL(row || p) for a stack of simplex points."""
    q = np.asarray(rows, dtype=np.float64)
    p = np.maximum(np.asarray(p, dtype=np.float64), floor)
    terms = np.where(q > 0, q * (np.log(np.maximum(q, floor)) - np.log(p)), 0.0)
    return terms.sum(axis=1)


def _kl_rows_mean(probs: Tensor, prior: Tensor, rows: np.ndarray | None) -> Tensor:
    """Mean over selected rows of KL(row || prior), on the tape."""
    q = probs if rows is None else ad.gather_rows(probs, rows)
    log_q = ad.log(ad.clip_min(q, GATE_FLOOR))
    log_p = ad.log(ad.clip_min(prior, GATE_FLOOR))
    per_row = ad.tsum(ad.mul(q, ad.add(log_q, ad.mul(log_p, -1.0))), axis=1)
    return ad.tmean(per_row)


def supervised_loss(predictions: Tensor, labels: np.ndarray, task: str) -> Tensor:
    """Mean cross-entropy over softmaxed logits, or mean squared error."""
    labels = np.asarray(labels)
    if task in ("classification", "binary"):
        if predictions.ndim != 2:
            raise ConfigError("classification expects 2-D logits")
        picked = ad.select_cols(ad.log_softmax_rows(predictions), labels.astype(np.int64))
        return ad.mul(ad.tmean(picked), -1.0)
    if task == "regression":
        pred = predictions
        if pred.ndim == 2:
            if pred.shape[1] != 1:
                raise ConfigError("regression expects a single output column")
            pred = ad.reshape(pred, (pred.shape[0],))
        return ad.tmean(pow_two(ad.add(pred, Tensor(-labels.astype(np.float64)))))
    raise ConfigError(f"unknown task {task!r}")


def pow_two(x: Tensor) -> Tensor:
    return ad.mul(x, x)


def total_objective(predictions: Tensor, labels: np.ndarray, gate_states: list[GateState],
                    prior: PriorEstimate, kl_weight: float, task: str,
                    kl_rows: np.ndarray | None = None) -> tuple[Tensor, ObjectiveReport]:
    """Supervised loss plus kl_weight times the summed per-layer mean KL.

    ``kl_rows`` restricts the KL average to the training instances. With
    kl_weight == 0 the KL values are still computed for reporting but are
    kept off the tape, so the loss is structurally the plain supervised one.
    """
    if len(gate_states) != len(prior.per_layer):
        raise ConfigError(f"{len(gate_states)} gate states but "
                          f"{len(prior.per_layer)} prior layers")
    loss = supervised_loss(predictions, labels, task)
    sup_value = loss.item()
    kl_values = []
    for state, p in zip(gate_states, prior.per_layer):
        if kl_weight != 0.0:
            kl = _kl_rows_mean(state.probs, p, kl_rows)
            loss = ad.add(loss, ad.mul(kl, kl_weight))
            kl_values.append(kl.item())
        else:
            rows_data = state.probs.data if kl_rows is None else state.probs.data[kl_rows]
            kl_values.append(float(categorical_kl_rows(rows_data, p.data).mean()))
    report = ObjectiveReport(
        supervised=sup_value,
        kl_per_layer=kl_values,
        kl_weight=float(kl_weight),
        total=loss.item(),
    )
    return loss, report


# -- exact enumeration oracles -------------------------------------------------------


def _check_enumeration(branches: int, layer_count: int) -> list[tuple[int, ...]]:
    total = branches**layer_count
    if total > ENUMERATION_LIMIT:
        raise RefusalError(f"{branches}^{layer_count} = {total} assignments exceed "
                           f"the enumeration limit {ENUMERATION_LIMIT}")
    return list(itertools.product(range(branches), repeat=layer_count))


def _branch_logliks(model: Model, features: np.ndarray, labels: np.ndarray,
                    labeled: np.ndarray, graph: Graph | None,
                    assignments: list[tuple[int, ...]]) -> np.ndarray:
    """log p(labels | features, assignment) for each hard branch assignment."""
    if model.config.out_dim < 2:
        raise ConfigError("enumeration oracles support classification outputs")
    y = labels[labeled].astype(np.int64)
    out = np.empty(len(assignments))
    for i, combo in enumerate(assignments):
        res = model.forward(features, graph, mode="eval", forced_branches=list(combo))
        lsm = ad.log_softmax_rows(ad.gather_rows(res.logits, labeled))
        out[i] = float(lsm.data[np.arange(y.size), y].sum())
    return out


def enumerate_assignment_logliks(model: Model, features: np.ndarray, labels: np.ndarray,
                                 labeled: np.ndarray, graph: Graph | None, branches: int,
                                 layer_count: int) -> tuple[list[tuple[int, ...]], np.ndarray]:
    """All hard branch assignments with their label log-likelihoods."""
    combos = _check_enumeration(branches, layer_count)
    return combos, _branch_logliks(model, features, labels, labeled, graph, combos)


def exact_deconfounded_loglik(model: Model, features: np.ndarray, labels: np.ndarray,
                              labeled: np.ndarray, graph: Graph | None,
                              prior_per_layer: list[np.ndarray]) -> float:
    """log sum over all hard branch assignments of prod_l p0_l[k_l] * p(y | x, assignment).

    Enumeration is refused above K^L = 4096 assignments.
    """
    combos = _check_enumeration(len(prior_per_layer[0]) if prior_per_layer else 1,
                                len(prior_per_layer))
    logliks = _branch_logliks(model, features, labels, labeled, graph, combos)
    log_terms = np.array([
        sum(math.log(max(prior_per_layer[l][k], GATE_FLOOR)) for l, k in enumerate(combo)) + ll
        for combo, ll in zip(combos, logliks)
    ])
    top = log_terms.max()
    return float(top + np.log(np.exp(log_terms - top).sum()))


def reweighted_elbo(model: Model, features: np.ndarray, labels: np.ndarray,
                    labeled: np.ndarray, graph: Graph | None,
                    q_per_layer: list[np.ndarray],
                    prior_per_layer: list[np.ndarray]) -> float:
    """Exact expectation under q of log p(y | x, assignment) plus the
    per-layer log prior/posterior ratio; a lower bound of the enumerated
    deconfounded log-likelihood for any q."""
    if len(q_per_layer) != len(prior_per_layer):
        raise ConfigError("q and prior must cover the same layers")
    combos = _check_enumeration(len(q_per_layer[0]) if q_per_layer else 1, len(q_per_layer))
    logliks = _branch_logliks(model, features, labels, labeled, graph, combos)
    total = 0.0
    for combo, ll in zip(combos, logliks):
        weight = 1.0
        ratio = 0.0
        for l, k in enumerate(combo):
            weight *= q_per_layer[l][k]
            if weight == 0.0:
                break
            ratio += math.log(max(prior_per_layer[l][k], GATE_FLOOR)) - \
                math.log(q_per_layer[l][k])
        if weight == 0.0:
            continue
        total += weight * (ll + ratio)
    return float(total)
