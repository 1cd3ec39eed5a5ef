"""Federated round engine with a sequential leader-then-followers schedule.

One round: the leader trains locally and commits its contribution weight
first; each follower then observes the leader's weight and loss, trains, and
commits its own weight; finally all updated local models are merged into the
next global model by weight-normalized averaging. ``run_round`` never
mutates its input state, so a failed round leaves the federation untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .errors import ConfigurationError, ShapeError, StrategyError, WeightError
from .metrics import EvalReport, auc_binary, auc_macro_ovr, precision_per_class
from .nn import Batch, ModelParams

LEADER = "leader"
FOLLOWER = "follower"


def derive_seed(*parts: int) -> int:
    """Deterministic child seed from integer components."""
    seq = np.random.SeedSequence([int(p) for p in parts])
    return int(seq.generate_state(1)[0])


@dataclass
class FederationConfig:
    """Round-engine hyperparameters shared by all nodes."""

    epochs: int = 2
    batch_size: int = 32
    lr: float = 0.05
    c_min: float = 0.05
    c_max: float = 1.0
    rounds: int = 30
    seed: int = 0
    auc_scheme: str = "macro"


@dataclass
class NodeState:
    """One participant: role, local splits, model, and current weight."""

    node_id: int
    role: str
    train: Batch
    val: Batch
    test: Batch
    local_model: ModelParams
    contribution_weight: float = 1.0
    noise_seed: int = 0


@dataclass
class NodeRoundRecord:
    node_id: int
    role: str
    weight: float
    val_loss: float
    val_auc: float
    test_auc: float


@dataclass
class RoundRecord:
    """Per-round metrics: one entry per node, in node order."""

    round_index: int
    nodes: list[NodeRoundRecord]


@dataclass
class FederationState:
    global_model: ModelParams
    nodes: list[NodeState]
    config: FederationConfig
    round_index: int = 0
    history: list[RoundRecord] = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


@dataclass
class SelectionContext:
    """Everything a strategy may see when one node picks its weight."""

    node: NodeState
    updated_model: ModelParams
    own_val_loss: float
    own_val_auc: float
    round_index: int
    total_rounds: int
    global_model: ModelParams
    models: list[ModelParams]  # freshest known model per node, node order
    roles: tuple[str, ...]
    prev_weights: np.ndarray  # weights entering this round, node order
    known_weights: dict[int, float]  # broadcast this round (leader's only)
    leader_loss: float  # leader's broadcast val loss; 0.0 for the leader itself
    prev_record: RoundRecord | None
    c_min: float
    c_max: float


@dataclass
class RoundOutcome:
    """End-of-round snapshot handed to the strategy's replay/training hook."""

    round_index: int
    total_rounds: int
    nodes: list[NodeState]  # with updated local models and weights
    models: list[ModelParams]
    weights: np.ndarray
    new_global: ModelParams
    record: RoundRecord
    global_val_losses: np.ndarray  # new global's val loss per node


def weighted_aggregate(models: list[ModelParams], weights) -> ModelParams:
    """Convex combination of parameter vectors with coefficients C_k / sum C.

    Scale-free: multiplying all weights by a positive constant leaves the
    result unchanged (up to float rounding).
    """
    if len(models) == 0:
        raise WeightError("need at least one model to aggregate")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(models),):
        raise WeightError(f"{len(models)} models but {w.size} weights")
    if np.any(w <= 0) or w.sum() <= 0:
        raise WeightError("all contribution weights must be > 0")
    shapes = models[0].layer_shapes
    for m in models[1:]:
        if m.layer_shapes != shapes:
            raise ShapeError("all models must share the same layer shapes")
    coef = w / w.sum()
    stacked = np.stack([m.values for m in models])
    return ModelParams(list(shapes), coef @ stacked)


def model_loss(params: ModelParams, batch: Batch) -> tuple[float, np.ndarray]:
    """Cross-entropy loss and probabilities of a model on a batch."""
    loss, probs = nn.softmax_cross_entropy(nn.forward(params, batch.features), batch.labels)
    return loss, probs


def local_train(
    node: NodeState,
    global_model: ModelParams,
    epochs: int,
    batch_size: int,
    lr: float,
    shuffle_seed: int = 0,
) -> tuple[ModelParams, float]:
    """Mini-batch SGD from a copy of the global model on the node's train set.

    Shuffles are drawn from one seeded stream, so a run with more epochs
    reproduces the shorter run's trajectory exactly before continuing.
    Returns the trained parameters and their validation loss; ``node.train``
    is left untouched.
    """
    if epochs < 1:
        raise ConfigurationError("epochs must be >= 1")
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    params = global_model.copy()
    rng = np.random.default_rng(shuffle_seed)
    n = len(node.train)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            sel = order[start : start + batch_size]
            mb = Batch(node.train.features[sel], node.train.labels[sel])
            _, grad = nn.backward(params, mb)
            params = nn.sgd_step(params, grad, lr)
    val_loss, _ = model_loss(params, node.val)
    return params, val_loss


def _node_auc(probs: np.ndarray, labels: np.ndarray, scheme: str) -> float:
    if scheme == "macro":
        return auc_macro_ovr(probs, labels)
    if scheme == "micro":
        onehot = np.zeros_like(probs, dtype=np.int64)
        onehot[np.arange(labels.size), labels] = 1
        return auc_binary(probs.ravel(), onehot.ravel())
    raise ConfigurationError(f"unknown auc scheme {scheme!r}")


def evaluate_model(
    params: ModelParams, batch: Batch, n_classes: int, scheme: str = "macro"
) -> EvalReport:
    """AUC, loss, and per-class precision of a model on one batch."""
    loss, probs = model_loss(params, batch)
    auc = _node_auc(probs, batch.labels, scheme)
    precision = precision_per_class(probs.argmax(axis=1), batch.labels, n_classes)
    return EvalReport(auc=auc, loss=loss, per_class_precision=precision, n_samples=len(batch))


def evaluate_all(state: FederationState) -> list[EvalReport]:
    """Evaluate the global model on every node's local test set."""
    k = state.global_model.n_outputs
    return [
        evaluate_model(state.global_model, node.test, k, state.config.auc_scheme)
        for node in state.nodes
    ]


def init_federation(
    global_model: ModelParams, nodes: list[NodeState], config: FederationConfig
) -> FederationState:
    """Validate the node roster and seed every local model from the global one."""
    if config.c_min <= 0 or config.c_min > config.c_max:
        raise ConfigurationError("need 0 < c_min <= c_max")
    roles = [n.role for n in nodes]
    if roles.count(LEADER) != 1 or any(r not in (LEADER, FOLLOWER) for r in roles):
        raise ConfigurationError("need exactly one leader and follower roles elsewhere")
    if sorted(n.node_id for n in nodes) != list(range(len(nodes))):
        raise ConfigurationError("node ids must be 0..n_nodes-1")
    nodes = sorted(nodes, key=lambda n: n.node_id)
    for node in nodes:
        if node.train.features.shape[1] != global_model.n_inputs:
            raise ShapeError(f"node {node.node_id} features do not fit the model")
        for split_name, batch in (("val", node.val), ("test", node.test)):
            if np.unique(batch.labels).size < 2:
                raise ConfigurationError(
                    f"node {node.node_id} {split_name} set has fewer than 2 classes"
                )
    nodes = [
        replace(
            n,
            local_model=global_model.copy(),
            contribution_weight=float(np.clip(n.contribution_weight, config.c_min, config.c_max)),
        )
        for n in nodes
    ]
    return FederationState(global_model.copy(), nodes, config)


def run_round(state: FederationState, strategy) -> FederationState:
    """Advance one round; returns a new state, the input is never mutated.

    Any exception escaping the strategy aborts the round as a StrategyError.
    """
    cfg = state.config
    leader = next(n for n in state.nodes if n.role == LEADER)
    followers = sorted((n for n in state.nodes if n.role == FOLLOWER), key=lambda n: n.node_id)
    roles = tuple(n.role for n in state.nodes)
    prev_weights = np.array([n.contribution_weight for n in state.nodes])
    prev_record = state.history[-1] if state.history else None

    models = [n.local_model for n in state.nodes]
    chosen: dict[int, float] = {}
    val_losses: dict[int, float] = {}
    val_aucs: dict[int, float] = {}
    known_weights: dict[int, float] = {}
    leader_broadcast_loss = 0.0

    for node in [leader, *followers]:
        shuffle_seed = derive_seed(cfg.seed, state.round_index, node.node_id)
        new_params, val_loss = local_train(
            node, state.global_model, cfg.epochs, cfg.batch_size, cfg.lr, shuffle_seed
        )
        models[node.node_id] = new_params
        _, val_probs = model_loss(new_params, node.val)
        val_auc = _node_auc(val_probs, node.val.labels, cfg.auc_scheme)
        ctx = SelectionContext(
            node=node,
            updated_model=new_params,
            own_val_loss=val_loss,
            own_val_auc=val_auc,
            round_index=state.round_index,
            total_rounds=cfg.rounds,
            global_model=state.global_model,
            models=list(models),
            roles=roles,
            prev_weights=prev_weights.copy(),
            known_weights=dict(known_weights),
            leader_loss=0.0 if node.role == LEADER else leader_broadcast_loss,
            prev_record=prev_record,
            c_min=cfg.c_min,
            c_max=cfg.c_max,
        )
        try:
            weight = float(strategy.select_weight(ctx))
        except StrategyError:
            raise
        except Exception as exc:
            raise StrategyError(f"{strategy.name} failed on node {node.node_id}: {exc}") from exc
        if not np.isfinite(weight) or not (cfg.c_min <= weight <= cfg.c_max):
            raise StrategyError(
                f"{strategy.name} returned weight {weight!r} outside [{cfg.c_min}, {cfg.c_max}]"
            )
        chosen[node.node_id] = weight
        val_losses[node.node_id] = val_loss
        val_aucs[node.node_id] = val_auc
        if node.role == LEADER:
            leader_broadcast_loss = val_loss
            known_weights[node.node_id] = weight

    weights = np.array([chosen[n.node_id] for n in state.nodes])
    new_global = weighted_aggregate(models, weights)

    k = new_global.n_outputs
    node_records = []
    global_val_losses = np.zeros(state.n_nodes)
    for node in state.nodes:
        report = evaluate_model(new_global, node.test, k, cfg.auc_scheme)
        global_val_losses[node.node_id], _ = model_loss(new_global, node.val)
        node_records.append(
            NodeRoundRecord(
                node_id=node.node_id,
                role=node.role,
                weight=chosen[node.node_id],
                val_loss=val_losses[node.node_id],
                val_auc=val_aucs[node.node_id],
                test_auc=report.auc,
            )
        )
    record = RoundRecord(state.round_index, node_records)

    new_nodes = [
        replace(n, local_model=models[n.node_id], contribution_weight=chosen[n.node_id])
        for n in state.nodes
    ]
    outcome = RoundOutcome(
        round_index=state.round_index,
        total_rounds=cfg.rounds,
        nodes=new_nodes,
        models=models,
        weights=weights,
        new_global=new_global,
        record=record,
        global_val_losses=global_val_losses,
    )
    try:
        strategy.observe_round(outcome)
    except StrategyError:
        raise
    except Exception as exc:
        raise StrategyError(f"{strategy.name} round hook failed: {exc}") from exc

    return FederationState(
        global_model=new_global,
        nodes=new_nodes,
        config=cfg,
        round_index=state.round_index + 1,
        history=[*state.history, record],
    )


def run_federation(state: FederationState, strategy, rounds: int | None = None) -> FederationState:
    """Prepare the strategy and advance the given number of rounds."""
    strategy.prepare(state)
    for _ in range(state.config.rounds if rounds is None else rounds):
        state = run_round(state, strategy)
    return state
