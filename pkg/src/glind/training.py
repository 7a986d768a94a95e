"""Full-batch training with epoch-level model selection, metrics,
checkpointing, sweeps, and ablation variants.

Training data is a list of units (one per domain graph); each epoch sums
the per-unit objectives and takes one optimizer step. Reported test
metrics always come from the epoch with the best validation metric.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import (Dataset, Graph, PseudoDataset, Splits, make_pseudo_dataset,
                   split_by_domain)
from .errors import ConfigError, NonFiniteError, TrainingDiverged, UsageError
from .model import Model, ModelConfig
from .objective import (PriorEstimate, mixture_prior, posterior_average_prior,
                        total_objective)
from .optim import Adam
from .rng import NoiseStreams

ABLATION_VARIANTS = ("w/o-Reg", "w/o-Mix", "w/o-Multi", "w/o-Res", "w/o-Feat")


@dataclass(frozen=True)
class TrainingConfig:
    kind: str = "gcn"
    num_layers: int = 2
    hidden: int = 16
    branches: int = 4
    tau: float = 1.0
    alpha_res: float = 0.5
    kl_weight: float = 1.0
    lr: float = 0.01
    weight_decay: float = 0.0
    dropout: float = 0.0
    epochs: int = 500
    seed: int = 0
    prior_mode: str = "mixture"
    gumbel_mode: str = "paper-literal"
    attn_mode: str = "literal"
    pseudo_size: int = 0
    pseudo_edge_prob: float = -1.0
    leaky_slope: float = 0.2
    shared_gumbel: bool = False
    stop_prior_gradient: bool = False
    residual_mode: str = "add"
    self_term: bool = True
    plain_baseline: bool = False

    def __post_init__(self):
        if self.num_layers < 0:
            raise ConfigError("num_layers must be >= 0")
        if self.branches < 1:
            raise ConfigError("branches must be >= 1")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.prior_mode not in ("mixture", "posterior-average"):
            raise ConfigError(f"unknown prior mode {self.prior_mode!r}")
        if self.plain_baseline and self.branches != 1:
            raise ConfigError("the plain baseline is single-branch")


@dataclass
class Unit:
    """One domain: a dataset, its graph, and index splits into it."""

    dataset: Dataset
    graph: Graph
    splits: Splits
    tag: str = "u0"


@dataclass
class TrainingData:
    units: list[Unit]
    task: str
    num_classes: int

    @property
    def in_dim(self) -> int:
        return self.units[0].dataset.dim

    @classmethod
    def from_single(cls, dataset: Dataset, graph: Graph, splits: Splits) -> "TrainingData":
        return cls([Unit(dataset, graph, splits, "u0")], dataset.task, dataset.num_classes)

    @classmethod
    def from_domains(cls, domains: list[tuple[Dataset, Graph]], train_domains, test_domains,
                     valid_fraction: float = 0.25, seed: int = 0) -> "TrainingData":
        """Each entry of ``domains`` is one graph over its own instances;
        training domains get a train/valid split, test domains are all test."""
        train_domains = set(int(d) for d in train_domains)
        test_domains = set(int(d) for d in test_domains)
        if train_domains & test_domains:
            raise ConfigError("train and test domains must be disjoint")
        units = []
        for i, (ds, graph) in enumerate(domains):
            labeled = ds.labeled_indices
            if i in train_domains:
                sp = split_by_domain(ds, [i], [], valid_fraction, seed=seed + i)
            elif i in test_domains:
                sp = Splits(np.zeros(0, np.int64), np.zeros(0, np.int64), labeled)
            else:
                continue
            units.append(Unit(ds, graph, sp, f"u{i}"))
        if not units:
            raise ConfigError("no domains selected")
        first = domains[0][0]
        return cls(units, first.task, first.num_classes)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid_metric: float
    test_metric: float
    kl_per_layer: list[float]


@dataclass
class RunHistory:
    metric_name: str
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_valid: float = np.nan
    best_test: float = np.nan
    wall_clock_seconds: float = 0.0

    def to_report(self, config: "TrainingConfig") -> dict:
        return {
            "best_epoch": self.best_epoch,
            "metric": self.metric_name,
            "metrics": {
                "valid": self.best_valid,
                "test": self.best_test,
                "final_train_loss": self.records[-1].train_loss if self.records else np.nan,
            },
            "epochs_run": len(self.records),
            "config": {f.name: getattr(config, f.name) for f in fields(config)},
            "seed": config.seed,
            "wall_clock_seconds": self.wall_clock_seconds,
        }


# -- metrics --------------------------------------------------------------------


def accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(scores, axis=1) == labels))


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based AUC over the positive-class score, averaging ranks on ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UsageError("ROC-AUC needs both classes present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(labels.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < labels.size:
        j = i
        while j + 1 < labels.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_rank_sum = ranks[pos].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def rmse(predictions: np.ndarray, targets: np.ndarray) -> float:
    diff = np.asarray(predictions, dtype=np.float64).reshape(-1) - np.asarray(targets)
    return float(np.sqrt(np.mean(diff * diff)))


def metric_for_task(task: str) -> str:
    return {"classification": "accuracy", "binary": "auc", "regression": "rmse"}[task]


def metric_is_higher_better(name: str) -> bool:
    return name != "rmse"


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def compute_metric(name: str, logits: np.ndarray, labels: np.ndarray) -> float:
    if name == "accuracy":
        return accuracy(logits, labels.astype(np.int64))
    if name == "auc":
        return roc_auc(_softmax_np(logits)[:, 1], labels.astype(np.int64))
    if name == "rmse":
        return rmse(logits, labels)
    raise ConfigError(f"unknown metric {name!r}")


def evaluate(model: Model, dataset: Dataset, graph: Graph, indices: np.ndarray,
             metric: str) -> float:
    """Deterministic expectation-mode evaluation on the given instances."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise UsageError("evaluate needs a nonempty index set")
    res = model.forward(dataset.features, graph, mode="eval")
    return compute_metric(metric, res.logits.data[indices], dataset.labels[indices])


# -- training loop -----------------------------------------------------------------


def build_model(data: TrainingData, config: TrainingConfig) -> Model:
    out_dim = 1 if data.task == "regression" else max(data.num_classes, 2)
    mc = ModelConfig(
        kind=config.kind,
        in_dim=data.in_dim,
        hidden=config.hidden,
        out_dim=out_dim,
        num_layers=config.num_layers,
        branches=config.branches,
        tau=config.tau,
        alpha_res=config.alpha_res,
        dropout=config.dropout,
        leaky_slope=config.leaky_slope,
        attn_mode=config.attn_mode,
        gumbel_mode=config.gumbel_mode,
        shared_gumbel=config.shared_gumbel,
        residual_mode=config.residual_mode,
        self_term=config.self_term,
        gate_enabled=not config.plain_baseline,
    )
    return Model(mc, seed=config.seed)


def _build_pseudo(data: TrainingData, config: TrainingConfig) -> PseudoDataset:
    feats = np.concatenate([u.dataset.features for u in data.units if u.splits.train.size],
                           axis=0)
    train_graphs = [u.graph for u in data.units if u.splits.train.size]
    density = float(np.mean([g.density for g in train_graphs])) if train_graphs else 0.0
    size = config.pseudo_size if config.pseudo_size > 0 else None
    edge_prob = config.pseudo_edge_prob if config.pseudo_edge_prob >= 0 else max(density, 1e-4)
    return make_pseudo_dataset(feats, size=size, edge_prob=edge_prob, seed=config.seed)


def _compute_prior(model: Model, config: TrainingConfig, pseudo: PseudoDataset,
                   streams: NoiseStreams, unit_results) -> PriorEstimate:
    if config.num_layers == 0:
        return PriorEstimate([])
    if config.prior_mode == "mixture":
        res = model.forward(pseudo.features, pseudo.graph, mode="train",
                            streams=streams, stream_tag="pseudo")
        prior = mixture_prior([g.probs for g in res.gates])
    else:
        per_layer = [[res.gates[l].probs for res in unit_results]
                     for l in range(config.num_layers)]
        prior = posterior_average_prior(per_layer)
    if config.stop_prior_gradient:
        prior = PriorEstimate([p.detach() for p in prior.per_layer])
    return prior


@dataclass
class TrainResult:
    model: Model
    history: RunHistory
    best_params: dict[str, np.ndarray]


def train(data: TrainingData, config: TrainingConfig) -> TrainResult:
    """Full-batch Adam for exactly config.epochs epochs; deterministic per seed.

    Aborts with :class:`TrainingDiverged` if the loss stops being finite.
    """
    train_units = [u for u in data.units if u.splits.train.size]
    valid_units = [u for u in data.units if u.splits.valid.size]
    test_units = [u for u in data.units if u.splits.test.size]
    if not train_units or not valid_units:
        raise ConfigError("training needs nonempty train and valid splits")

    model = build_model(data, config)
    optimizer = Adam(model.params, lr=config.lr, weight_decay=config.weight_decay)
    streams = NoiseStreams(config.seed)
    metric = metric_for_task(data.task)
    higher = metric_is_higher_better(metric)
    reg_on = config.kl_weight != 0.0 and config.num_layers > 0 and not config.plain_baseline
    report_kl = config.num_layers > 0 and not config.plain_baseline
    pseudo = _build_pseudo(data, config) if (reg_on or
                                             (report_kl and config.prior_mode == "mixture")) \
        else None

    history = RunHistory(metric_name=metric)
    best_params: dict[str, np.ndarray] = model.parameter_arrays()
    started = time.perf_counter()

    for epoch in range(config.epochs):
        try:
            unit_results = [
                model.forward(u.dataset.features, u.graph, mode="train",
                              streams=streams, stream_tag=u.tag)
                for u in train_units
            ]
            prior = _compute_prior(model, config, pseudo, streams, unit_results) \
                if report_kl else PriorEstimate([])
            total = None
            kl_sums = [0.0] * config.num_layers
            sup_sum = 0.0
            for u, res in zip(train_units, unit_results):
                rows = u.splits.train
                logits = ad.gather_rows(res.logits, rows)
                labels = u.dataset.labels[rows]
                gates = res.gates if report_kl else []
                loss, rep = total_objective(logits, labels, gates, prior,
                                            config.kl_weight if reg_on else 0.0,
                                            data.task, kl_rows=rows)
                sup_sum += rep.supervised
                for l, v in enumerate(rep.kl_per_layer):
                    kl_sums[l] += v
                total = loss if total is None else ad.add(total, loss)
            loss_value = total.item()
            if not np.isfinite(loss_value):
                raise NonFiniteError("loss is not finite")
            total.backward()
            optimizer.step()
            optimizer.zero_grad()
        except NonFiniteError as e:
            raise TrainingDiverged(f"training diverged at epoch {epoch}: {e}") from e

        valid_metric = _pooled_metric(model, valid_units, "valid", metric)
        test_metric = _mean_unit_metric(model, test_units, "test", metric) \
            if test_units else np.nan
        history.records.append(EpochRecord(epoch, loss_value, valid_metric, test_metric,
                                           kl_sums))
        if history.best_epoch < 0 or (valid_metric > history.best_valid if higher
                                      else valid_metric < history.best_valid):
            history.best_epoch = epoch
            history.best_valid = valid_metric
            history.best_test = test_metric
            best_params = model.parameter_arrays()

    history.wall_clock_seconds = time.perf_counter() - started
    return TrainResult(model, history, best_params)


def _pooled_metric(model: Model, units: list[Unit], which: str, metric: str) -> float:
    all_logits, all_labels = [], []
    for u in units:
        rows = getattr(u.splits, which)
        res = model.forward(u.dataset.features, u.graph, mode="eval")
        all_logits.append(res.logits.data[rows])
        all_labels.append(u.dataset.labels[rows])
    return compute_metric(metric, np.concatenate(all_logits), np.concatenate(all_labels))


def _mean_unit_metric(model: Model, units: list[Unit], which: str, metric: str) -> float:
    vals = []
    for u in units:
        rows = getattr(u.splits, which)
        res = model.forward(u.dataset.features, u.graph, mode="eval")
        vals.append(compute_metric(metric, res.logits.data[rows], u.dataset.labels[rows]))
    return float(np.mean(vals))


# -- ablations and sweeps -------------------------------------------------------------


def apply_variant(config: TrainingConfig, variant: str) -> TrainingConfig:
    if variant == "w/o-Reg":
        return replace(config, kl_weight=0.0)
    if variant == "w/o-Mix":
        return replace(config, prior_mode="posterior-average")
    if variant == "w/o-Multi":
        return replace(config, branches=1)
    if variant == "w/o-Res":
        return replace(config, residual_mode="replace")
    if variant == "w/o-Feat":
        return replace(config, self_term=False)
    raise ConfigError(f"unknown ablation variant {variant!r}; "
                      f"expected one of {ABLATION_VARIANTS}")


def run_ablation(data: TrainingData, config: TrainingConfig, variant: str) -> TrainResult:
    return train(data, apply_variant(config, variant))


def sweep(data: TrainingData, config: TrainingConfig, param: str, values: list) -> list[dict]:
    """One full training run per value under a shared seed; returns table rows."""
    names = {f.name for f in fields(TrainingConfig)}
    if param not in names:
        raise ConfigError(f"unknown config parameter {param!r}")
    rows = []
    for value in values:
        cfg = replace(config, **{param: value})
        result = train(data, cfg)
        rows.append({
            "param": param,
            "value": value,
            "valid_metric": result.history.best_valid,
            "test_metric": result.history.best_test,
            "seed": cfg.seed,
        })
    return rows


# -- history / report / checkpoint io ---------------------------------------------------


def write_history(path: str, history: RunHistory) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in history.records:
            fh.write(json.dumps({
                "epoch": r.epoch,
                "train_loss": r.train_loss,
                "valid_metric": r.valid_metric,
                "test_metric": None if np.isnan(r.test_metric) else r.test_metric,
                "kl_per_layer": r.kl_per_layer,
            }, sort_keys=True) + "\n")


def write_report(path: str, history: RunHistory, config: TrainingConfig) -> dict:
    report = history.to_report(config)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report


CHECKPOINT_MAGIC = b"GLND1"


def save_checkpoint(path: str, params: dict[str, np.ndarray]) -> None:
    """Flat binary of named float64 tensors behind a version-magic header."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<Q", extent))
            fh.write(arr.tobytes())


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise UsageError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (count,) = struct.unpack("<I", fh.read(4))
        out = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            size = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(8 * size), dtype=np.float64).reshape(shape)
            out[name] = arr.copy()
        return out
