"""Federated learning simulator with Stackelberg-game contribution weighting."""

from .data import (
    Dataset,
    Partition,
    add_gaussian_noise,
    dirichlet_partition,
    load_dataset,
    save_dataset,
    split,
    synthetic_dataset,
)
from .errors import (
    ConfigurationError,
    FormatError,
    InputError,
    NumericError,
    ShapeError,
    StackfedError,
    StrategyError,
    UndefinedMetricError,
    WeightError,
)
from .federation import (
    FederationConfig,
    FederationState,
    NodeState,
    RoundRecord,
    evaluate_all,
    init_federation,
    local_train,
    run_federation,
    run_round,
    weighted_aggregate,
)
from .harness import (
    ExperimentConfig,
    ResultTable,
    compare_strategies,
    emit_results,
    run_experiment,
)
from .metrics import EvalReport, auc_binary, auc_macro_ovr, precision_per_class
from .nn import (
    AdamState,
    Batch,
    ModelParams,
    adam_init,
    adam_step,
    backward,
    forward,
    mlp_init,
    sgd_step,
    softmax_cross_entropy,
)
from .strategies import (
    ASWMStrategy,
    DSWMStrategy,
    FedAvgStrategy,
    PWFedAvgStrategy,
    PolicyNet,
    ReplayBuffer,
    ReplayEntry,
    StateSummary,
    WeightingStrategy,
    aswm_follower_predict,
    aswm_leader_predict,
    aswm_train_step,
    dswm_select_weight,
    fedavg_weights,
    make_strategy,
    pwfedavg_weights,
)

__version__ = "0.1.0"
