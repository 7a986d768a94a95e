"""The full prediction pipeline: input projection, L gated diffusion layers,
output projection.

Parameters are float64 tensors initialized uniformly in
[-1/sqrt(fan_in), +1/sqrt(fan_in)] from a per-parameter named stream, so
the draw for one parameter never depends on which other parameters exist.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import Tensor
from .data import Graph
from .errors import ConfigError
from .rng import NoiseStreams, named_rng


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "gcn"
    in_dim: int = 1
    hidden: int = 16
    out_dim: int = 1
    num_layers: int = 2
    branches: int = 4
    tau: float = 1.0
    alpha_res: float = 0.5
    dropout: float = 0.0
    leaky_slope: float = 0.2
    attn_mode: str = "literal"
    gumbel_mode: str = "paper-literal"
    shared_gumbel: bool = False
    residual_mode: str = "add"
    self_term: bool = True
    gate_enabled: bool = True
    attn_eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("gcn", "gat", "trans"):
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if min(self.in_dim, self.hidden, self.out_dim) < 1:
            raise ConfigError("model dimensions must be positive")
        if self.num_layers < 0:
            raise ConfigError("layer count must be >= 0")
        if self.branches < 1:
            raise ConfigError("need at least one branch")
        if self.tau <= 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not self.gate_enabled and self.branches != 1:
            raise ConfigError("disabling the gate requires a single branch")


@dataclass
class ForwardResult:
    logits: Tensor
    gates: list[layers.GateState]
    trajectory: list[Tensor]


def _uniform_init(seed: int, name: str, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return named_rng(seed, f"init.{name}").uniform(-bound, bound, size=shape)


class Model:
    """Owns the parameter tensors and runs forward passes over a graph."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = int(seed)
        self.params: dict[str, Tensor] = {}
        c = config

        def make(name, shape, fan_in):
            self.params[name] = Tensor(_uniform_init(self.seed, name, shape, fan_in),
                                       requires_grad=True)

        make("input.weight", (c.hidden, c.in_dim), c.in_dim)
        make("input.bias", (c.hidden,), c.in_dim)
        make("output.weight", (c.out_dim, c.hidden), c.hidden)
        make("output.bias", (c.out_dim,), c.hidden)
        for l in range(c.num_layers):
            if c.gate_enabled:
                make(f"layer{l}.gate", (c.branches, c.hidden), c.hidden)
            for k in range(c.branches):
                pre = f"layer{l}.b{k}"
                make(f"{pre}.self", (c.hidden, c.hidden), c.hidden)
                make(f"{pre}.nbr", (c.hidden, c.hidden), c.hidden)
                if c.kind == "gat":
                    make(f"{pre}.attn_w", (c.hidden, c.hidden), c.hidden)
                    make(f"{pre}.attn_c", (2 * c.hidden,), 2 * c.hidden)
                elif c.kind == "trans":
                    make(f"{pre}.key", (c.hidden, c.hidden), c.hidden)
                    make(f"{pre}.query", (c.hidden, c.hidden), c.hidden)

    def layer_params(self, l: int) -> layers.LayerParams:
        c = self.config
        ks = range(c.branches)
        return layers.LayerParams(
            kind=c.kind,
            gate_weight=self.params.get(f"layer{l}.gate"),
            self_weights=[self.params[f"layer{l}.b{k}.self"] for k in ks],
            nbr_weights=[self.params[f"layer{l}.b{k}.nbr"] for k in ks],
            attn_weights=[self.params[f"layer{l}.b{k}.attn_w"] for k in ks] if c.kind == "gat" else None,
            attn_vectors=[self.params[f"layer{l}.b{k}.attn_c"] for k in ks] if c.kind == "gat" else None,
            key_weights=[self.params[f"layer{l}.b{k}.key"] for k in ks] if c.kind == "trans" else None,
            query_weights=[self.params[f"layer{l}.b{k}.query"] for k in ks] if c.kind == "trans" else None,
        )

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            missing = set(self.params) ^ set(arrays)
            raise ConfigError(f"parameter names do not match the model: {sorted(missing)}")
        for name, arr in arrays.items():
            if arr.shape != self.params[name].data.shape:
                raise ConfigError(f"shape mismatch for {name}: {arr.shape} vs "
                                  f"{self.params[name].data.shape}")
            self.params[name].data = np.array(arr, dtype=np.float64)

    def forward(self, features: np.ndarray, graph: Graph | None, mode: str = "eval",
                streams: NoiseStreams | None = None, stream_tag: str = "u0",
                forced_branches: list[int] | None = None) -> ForwardResult:
        """Run the pipeline and return logits, per-layer gate states, and the
        embedding trajectory.

        'train' mode samples the branch gate with fresh Gumbel noise and
        applies inverted dropout; 'eval' mode uses the gate expectation
        (sample = probabilities) and no dropout. ``forced_branches`` pins
        every instance to one hard branch per layer, bypassing both.
        """
        c = self.config
        if mode not in ("train", "eval"):
            raise ConfigError(f"unknown forward mode {mode!r}")
        if mode == "train" and streams is None:
            raise ConfigError("train mode needs noise streams")
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != c.in_dim:
            raise ConfigError(f"features must be (N, {c.in_dim}), got {features.shape}")
        if forced_branches is not None and len(forced_branches) != c.num_layers:
            raise ConfigError("need one forced branch per layer")

        n = features.shape[0]
        x = Tensor(features)
        z = ad.add(ad.matmul(x, ad.transpose(self.params["input.weight"])),
                   self.params["input.bias"])
        trajectory = [z]
        gates: list[layers.GateState] = []

        for l in range(c.num_layers):
            lp = self.layer_params(l)
            if c.gate_enabled:
                probs = layers.gate_probabilities(z, lp.gate_weight)
            else:
                probs = Tensor(np.ones((n, 1)))
            if forced_branches is not None:
                hard = np.zeros((n, c.branches))
                hard[:, int(forced_branches[l])] = 1.0
                sample = Tensor(hard)
            elif mode == "train" and c.gate_enabled:
                rng = streams.get(f"{stream_tag}.gumbel.layer{l}")
                sample = layers.sample_branch(probs, c.tau, rng, c.gumbel_mode, c.shared_gumbel)
            else:
                sample = probs
            gates.append(layers.GateState(probs, sample, c.tau, l))

            if c.kind == "gcn":
                z = layers.glind_gcn_layer(z, graph, lp, sample, c.alpha_res,
                                           c.residual_mode, c.self_term)
            elif c.kind == "gat":
                z = layers.glind_gat_layer(z, graph, lp, sample, c.alpha_res, c.leaky_slope,
                                           c.attn_mode, c.residual_mode, c.self_term)
            else:
                z = layers.glind_trans_layer(z, graph, lp, sample, c.alpha_res, c.attn_eps,
                                             c.residual_mode, c.self_term)
            layers.note_preactivation(z.data)
            z = ad.relu(z)
            if mode == "train" and c.dropout > 0.0:
                rng = streams.get(f"{stream_tag}.dropout.layer{l}")
                keep = (rng.random(z.shape) >= c.dropout) / (1.0 - c.dropout)
                z = ad.mul(z, Tensor(keep))
            trajectory.append(z)

        logits = ad.add(ad.matmul(z, ad.transpose(self.params["output.weight"])),
                        self.params["output.bias"])
        return ForwardResult(logits, gates, trajectory)
