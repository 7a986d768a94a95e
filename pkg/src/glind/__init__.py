"""Shift-robust representation learning on interdependent data.

Graph diffusion layers pick among K per-layer update hypotheses through a
learned stochastic gate, trained with a supervised loss plus a KL
regularizer against a data-driven prior estimated on a pseudo dataset.
"""

from .autodiff import (Tensor, gather_rows, l2_normalize_rows, leaky_relu, log_softmax_rows,
                       matmul, relu, scatter_rows, softmax_rows)
from .data import (Dataset, DomainData, Graph, KnnSpec, PseudoDataset, ShiftBenchmarkConfig,
                   Splits, build_knn_graph, generate_shift_benchmark, load_benchmark,
                   load_dataset, make_pseudo_dataset, split_by_domain, write_benchmark)
from .errors import (ConfigError, DataError, GlindError, NonFiniteError, RefusalError,
                     ShapeError, TrainingDiverged, UsageError)
from .layers import (DiffusivityField, GateState, LayerParams, euler_diffusion_step,
                     gate_probabilities, glind_gat_layer, glind_gcn_layer, glind_trans_layer,
                     linear_attention_aggregate, quadratic_attention_aggregate, sample_branch)
from .model import Model, ModelConfig
from .objective import (ObjectiveReport, PriorEstimate, categorical_kl,
                        exact_deconfounded_loglik, mixture_prior, posterior_average_prior,
                        reweighted_elbo, supervised_loss, total_objective)
from .optim import Adam, AdamState, adam_step
from .training import (RunHistory, TrainingConfig, TrainingData, Unit, evaluate,
                       load_checkpoint, run_ablation, save_checkpoint, sweep, train)
from .verification import (OracleReport, attention_equivalence_suite, conservation_suite,
                           gradcheck_all, run_suites, theorem1_suite)

__version__ = "0.1.0"
