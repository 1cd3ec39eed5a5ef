"""Contribution-weighting strategies behind one interface.

Four variants: size-proportional averaging (fedavg), validation-precision
weighting (pwfedavg), a deterministic grid argmin over candidate weights
with replay-based anticipation of the other nodes (dswm), and adaptive
actor-critic policies (aswm) with one network for the leader and one shared
network for all followers, trained against the grid argmin as baseline.

Every strategy returns weights inside [c_min, c_max], so the aggregate's
weight sum stays positive.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .errors import ConfigurationError, StrategyError, WeightError
from .federation import (
    FOLLOWER,
    LEADER,
    FederationState,
    RoundOutcome,
    SelectionContext,
    derive_seed,
    model_loss,
    weighted_aggregate,
)
from .metrics import precision_per_class
from .nn import AdamState, Batch, ModelParams

DEFAULT_C_MIN = 0.05
DEFAULT_C_MAX = 1.0
CANDIDATE_WEIGHTS = tuple(round(0.1 * k, 1) for k in range(1, 11))

# Anticipated weight for a node that has never been observed acting.
DEFAULT_ANTICIPATED = {LEADER: 1.0, FOLLOWER: 0.5}

_TIE_EPS = 1e-12


def fedavg_weights(node_sizes) -> np.ndarray:
    """Size-proportional weights C_k = n_k / max_j n_j.

    Normalizing by the largest size keeps every weight in (0, 1]; the
    aggregate is identical to weighting by raw sizes because the combination
    is scale-free.
    """
    sizes = np.asarray(node_sizes, dtype=np.float64)
    if sizes.size == 0 or np.any(sizes <= 0):
        raise WeightError("node sizes must all be >= 1")
    return sizes / sizes.max()


def pwfedavg_weights(per_node_precisions, c_min: float = DEFAULT_C_MIN) -> np.ndarray:
    """Mean per-class precision per node, clamped into [c_min, 1]."""
    return np.array(
        [float(np.clip(np.mean(v), c_min, 1.0)) for v in per_node_precisions]
    )


def dswm_select_weight(
    own_index: int,
    models: list[ModelParams],
    anticipated_weights,
    val: Batch,
    candidates=CANDIDATE_WEIGHTS,
) -> float:
    """Grid argmin: try each candidate as own weight, keep the lowest val loss.

    ``models`` holds the freshest known model per node with the acting node's
    updated model at ``own_index``; ``anticipated_weights`` fills the other
    nodes' entries (its own entry is overwritten per candidate). Ties within
    1e-12 relative resolve to the smallest candidate.
    """
    if not candidates:
        raise ConfigurationError("candidate set must not be empty")
    weights = np.array(anticipated_weights, dtype=np.float64)
    best_c = None
    best_loss = np.inf
    try:
        for c in sorted(candidates):
            weights[own_index] = c
            merged = weighted_aggregate(models, weights)
            loss, _ = model_loss(merged, val)
            if best_c is None or loss < best_loss - _TIE_EPS * max(1.0, abs(best_loss)):
                best_c, best_loss = float(c), loss
    except Exception as exc:
        raise StrategyError(f"candidate evaluation failed: {exc}") from exc
    return best_c


@dataclass(frozen=True)
class ReplayEntry:
    """One recorded interaction: who acted, the full applied weight vector,
    the observed loss, and (for policy training) the acting node's state
    summary and the loss its shadow grid choice would have achieved."""

    round_index: int
    node_id: int
    role: str
    weights: np.ndarray
    loss: float
    summary: np.ndarray | None = None
    baseline_loss: float | None = None


class ReplayBuffer:
    """Bounded FIFO store of past interactions."""

    def __init__(self, capacity: int = 256):
        if capacity < 1:
            raise ConfigurationError("replay capacity must be >= 1")
        self.capacity = int(capacity)
        self._entries: deque[ReplayEntry] = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, entry: ReplayEntry) -> None:
        """Append; the oldest entry is evicted once capacity is exceeded."""
        self._entries.append(entry)

    def entries(self) -> list[ReplayEntry]:
        return list(self._entries)

    def latest(self) -> ReplayEntry | None:
        return self._entries[-1] if self._entries else None

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[ReplayEntry]:
        """Uniform sample without replacement; all entries if fewer than asked."""
        if not self._entries:
            return []
        k = min(int(batch_size), len(self._entries))
        idx = rng.choice(len(self._entries), size=k, replace=False)
        return [self._entries[i] for i in idx]


def anticipated_weight_vector(buffer: ReplayBuffer, ctx: SelectionContext) -> np.ndarray:
    """Best guess of the full weight vector from the acting node's viewpoint.

    Per node: a weight broadcast this round wins, else the most recently
    recorded applied weight from replay, else the role default (leader 1.0,
    follower 0.5). The acting node's own entry is a placeholder.
    """
    weights = np.array([DEFAULT_ANTICIPATED[r] for r in ctx.roles])
    latest = buffer.latest()
    if latest is not None:
        weights = latest.weights.copy()
    for node_id, w in ctx.known_weights.items():
        weights[node_id] = w
    return weights


@dataclass
class StateSummary:
    """Fixed-size policy input describing one node's view of the round.

    Vector order: [round fraction, own previous weight, other nodes'
    previous weights (ascending node id, own entry excluded), own val loss,
    leader's broadcast loss (0 for the leader itself), L2 distance between
    the updated local model and the global model, previous-round val AUC].
    Dimension: 6 + (n_nodes - 1).
    """

    round_frac: float
    own_prev_weight: float
    others_prev_weights: np.ndarray
    own_val_loss: float
    leader_loss: float
    model_distance: float
    prev_val_auc: float

    def to_vector(self) -> np.ndarray:
        vec = np.concatenate(
            [
                [self.round_frac, self.own_prev_weight],
                self.others_prev_weights,
                [self.own_val_loss, self.leader_loss, self.model_distance, self.prev_val_auc],
            ]
        )
        if not np.all(np.isfinite(vec)):
            raise ConfigurationError("state summary contains non-finite entries")
        return vec


def summary_dim(n_nodes: int) -> int:
    return 6 + (n_nodes - 1)


def build_state_summary(ctx: SelectionContext) -> StateSummary:
    """Assemble the policy input from the selection context."""
    own = ctx.node.node_id
    others = np.array(
        [w for j, w in enumerate(ctx.prev_weights) if j != own], dtype=np.float64
    )
    if ctx.prev_record is not None:
        prev_val_auc = ctx.prev_record.nodes[own].val_auc
    else:
        prev_val_auc = 0.5
    distance = float(np.linalg.norm(ctx.updated_model.values - ctx.global_model.values))
    return StateSummary(
        round_frac=ctx.round_index / max(1, ctx.total_rounds),
        own_prev_weight=float(ctx.prev_weights[own]),
        others_prev_weights=others,
        own_val_loss=float(ctx.own_val_loss),
        leader_loss=float(ctx.leader_loss),
        model_distance=distance,
        prev_val_auc=float(prev_val_auc),
    )


@dataclass
class PolicyNet:
    """Actor-critic pair over state summaries.

    The actor's raw outputs are squashed into [c_min, c_max] by a sigmoid
    affine map; the critic emits an unbounded scalar value estimate.
    """

    actor: ModelParams
    critic: ModelParams
    owner: str  # "leader" | "followers"
    actor_opt: AdamState
    critic_opt: AdamState
    c_min: float = DEFAULT_C_MIN
    c_max: float = DEFAULT_C_MAX


def policy_init(
    input_dim: int,
    n_outputs: int,
    owner: str,
    seed: int,
    hidden: int = 16,
    c_min: float = DEFAULT_C_MIN,
    c_max: float = DEFAULT_C_MAX,
) -> PolicyNet:
    actor = nn.mlp_init([(input_dim, hidden), (hidden, n_outputs)], derive_seed(seed, 11))
    critic = nn.mlp_init([(input_dim, hidden), (hidden, 1)], derive_seed(seed, 12))
    return PolicyNet(
        actor=actor,
        critic=critic,
        owner=owner,
        actor_opt=nn.adam_init(actor.values.size),
        critic_opt=nn.adam_init(critic.values.size),
        c_min=c_min,
        c_max=c_max,
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _squash(raw: np.ndarray, c_min: float, c_max: float) -> np.ndarray:
    return c_min + (c_max - c_min) * _sigmoid(raw)


def _actor_outputs(policy: PolicyNet, summaries: np.ndarray) -> np.ndarray:
    raw = nn.forward(policy.actor, summaries)
    out = _squash(raw, policy.c_min, policy.c_max)
    if not np.all(np.isfinite(out)):
        raise StrategyError("actor produced non-finite outputs")
    return out


def aswm_leader_predict(policy: PolicyNet, summary: np.ndarray) -> tuple[float, np.ndarray]:
    """Leader forward pass: own weight plus anticipated follower weights.

    Output 0 is the weight the leader applies; the remaining outputs are its
    guesses of the followers' weights (ascending node id), used only to
    anticipate when computing its shadow baseline, never applied.
    """
    out = _actor_outputs(policy, np.asarray(summary, dtype=np.float64)[None, :])[0]
    return float(out[0]), out[1:].copy()


def aswm_follower_predict(policy: PolicyNet, summary: np.ndarray) -> float:
    """Shared follower network forward pass: the follower's own weight."""
    out = _actor_outputs(policy, np.asarray(summary, dtype=np.float64)[None, :])[0]
    return float(out[0])


def aswm_train_step(
    policy: PolicyNet,
    entries: list[ReplayEntry],
    lr_actor: float = 5e-4,
    lr_critic: float = 1e-3,
) -> PolicyNet:
    """One advantage-weighted update from a replay batch; empty batch is a no-op.

    Critic: squared-error regression of the value estimate toward the reward
    -loss. Actor: with advantage A = baseline_loss - loss (positive when the
    applied action beat the shadow grid choice), descend A * (output - applied
    action)^2 averaged over the batch, so gradients from multiple entries of
    the shared follower network are averaged before the step. Entries with an
    undefined or non-finite advantage contribute nothing; if every advantage
    is zero the actor is left untouched.
    """
    if not entries:
        return policy
    summaries = np.stack([np.asarray(e.summary, dtype=np.float64) for e in entries])
    n = len(entries)
    rewards = -np.array([e.loss for e in entries])

    value = nn.forward(policy.critic, summaries)[:, 0]
    value_grad = (2.0 * (value - rewards) / n)[:, None]
    critic_grad = nn.backward_from_outputs(policy.critic, summaries, value_grad)
    critic, critic_opt = nn.adam_step(policy.critic, critic_grad, policy.critic_opt, lr_critic)

    advantage = np.array(
        [
            e.baseline_loss - e.loss if e.baseline_loss is not None else 0.0
            for e in entries
        ]
    )
    advantage[~np.isfinite(advantage)] = 0.0
    actor, actor_opt = policy.actor, policy.actor_opt
    if np.any(advantage != 0.0):
        applied = np.array([e.weights[e.node_id] for e in entries])
        out = _actor_outputs(policy, summaries)
        out_grad = np.zeros_like(out)
        out_grad[:, 0] = 2.0 * advantage * (out[:, 0] - applied) / n
        # chain through the sigmoid affine squash
        raw_grad = out_grad * (out - policy.c_min) * (policy.c_max - out) / (policy.c_max - policy.c_min)
        actor_grad = nn.backward_from_outputs(policy.actor, summaries, raw_grad)
        actor, actor_opt = nn.adam_step(policy.actor, actor_grad, policy.actor_opt, lr_actor)

    return replace(
        policy, actor=actor, critic=critic, actor_opt=actor_opt, critic_opt=critic_opt
    )


class WeightingStrategy:
    """Interface the round engine drives.

    ``prepare`` runs once before the first round, ``select_weight`` once per
    node per round (leader first, then followers in ascending node id), and
    ``observe_round`` after aggregation with the full round outcome.
    """

    name = "base"

    def prepare(self, state: FederationState) -> None:
        pass

    def select_weight(self, ctx: SelectionContext) -> float:
        raise NotImplementedError

    def observe_round(self, outcome: RoundOutcome) -> None:
        pass


class FedAvgStrategy(WeightingStrategy):
    """Classic size-weighted averaging; weights are fixed for the whole run."""

    name = "fedavg"

    def __init__(self, c_min: float = DEFAULT_C_MIN):
        self.c_min = c_min
        self._weights: np.ndarray | None = None

    def prepare(self, state: FederationState) -> None:
        sizes = [len(n.train) for n in state.nodes]
        self._weights = np.maximum(fedavg_weights(sizes), self.c_min)

    def select_weight(self, ctx: SelectionContext) -> float:
        return float(self._weights[ctx.node.node_id])


class PWFedAvgStrategy(WeightingStrategy):
    """Weight each node by its updated model's mean val-set precision."""

    name = "pwfedavg"

    def select_weight(self, ctx: SelectionContext) -> float:
        logits = nn.forward(ctx.updated_model, ctx.node.val.features)
        precision = precision_per_class(
            logits.argmax(axis=1), ctx.node.val.labels, ctx.updated_model.n_outputs
        )
        return float(pwfedavg_weights([precision], ctx.c_min)[0])


class DSWMStrategy(WeightingStrategy):
    """Deterministic grid argmin with replay-based anticipation."""

    name = "dswm"

    def __init__(self, capacity: int = 256, candidates=CANDIDATE_WEIGHTS):
        self.buffer = ReplayBuffer(capacity)
        self.candidates = tuple(candidates)

    def select_weight(self, ctx: SelectionContext) -> float:
        anticipated = anticipated_weight_vector(self.buffer, ctx)
        return dswm_select_weight(
            ctx.node.node_id, ctx.models, anticipated, ctx.node.val, self.candidates
        )

    def observe_round(self, outcome: RoundOutcome) -> None:
        for node in outcome.nodes:
            self.buffer.push(
                ReplayEntry(
                    round_index=outcome.round_index,
                    node_id=node.node_id,
                    role=node.role,
                    weights=outcome.weights.copy(),
                    loss=float(outcome.global_val_losses[node.node_id]),
                )
            )


class ASWMStrategy(WeightingStrategy):
    """Adaptive actor-critic weighting trained against the grid argmin.

    The first ``warmup_rounds`` rounds apply the shadow grid choice directly
    (seeding the replay buffer with zero-advantage experience); afterwards
    the policies act, with epsilon-greedy perturbation of the applied weight,
    and both networks take one replay-batch training step per round.
    """

    name = "aswm"

    def __init__(
        self,
        n_nodes: int = 3,
        seed: int = 0,
        capacity: int = 256,
        warmup_rounds: int = 3,
        epsilon: float = 0.2,
        epsilon_decay: float = 0.95,
        exploration_span: float = 0.1,
        lr_actor: float = 5e-4,
        lr_critic: float = 1e-3,
        train_batch: int = 32,
        hidden: int = 16,
        candidates=CANDIDATE_WEIGHTS,
        c_min: float = DEFAULT_C_MIN,
        c_max: float = DEFAULT_C_MAX,
    ):
        self.n_nodes = int(n_nodes)
        self.warmup_rounds = int(warmup_rounds)
        self.epsilon = float(epsilon)
        self.epsilon_decay = float(epsilon_decay)
        self.exploration_span = float(exploration_span)
        self.lr_actor = float(lr_actor)
        self.lr_critic = float(lr_critic)
        self.train_batch = int(train_batch)
        self.candidates = tuple(candidates)
        self.c_min, self.c_max = float(c_min), float(c_max)
        d = summary_dim(self.n_nodes)
        self.leader_policy = policy_init(
            d, self.n_nodes, "leader", derive_seed(seed, 1), hidden, c_min, c_max
        )
        self.follower_policy = policy_init(
            d, 1, "followers", derive_seed(seed, 2), hidden, c_min, c_max
        )
        self.buffer = ReplayBuffer(capacity)
        self._rng = np.random.default_rng(derive_seed(seed, 3))
        self._pending: dict[int, dict] = {}

    def prepare(self, state: FederationState) -> None:
        if state.n_nodes != self.n_nodes:
            raise ConfigurationError(
                f"strategy built for {self.n_nodes} nodes, federation has {state.n_nodes}"
            )
        self._pending.clear()

    def _shadow_choice(self, ctx: SelectionContext, anticipated: np.ndarray) -> float:
        return dswm_select_weight(
            ctx.node.node_id, ctx.models, anticipated, ctx.node.val, self.candidates
        )

    def select_weight(self, ctx: SelectionContext) -> float:
        if ctx.node.role == LEADER:
            self._pending.clear()  # new round begins with the leader
        summary = build_state_summary(ctx).to_vector()
        in_warmup = ctx.round_index < self.warmup_rounds
        anticipated = anticipated_weight_vector(self.buffer, ctx)
        if ctx.node.role == LEADER:
            predicted, anticipated_followers = aswm_leader_predict(self.leader_policy, summary)
            if not in_warmup:
                # after warm-up the leader anticipates followers with its own net
                follower_ids = [j for j, r in enumerate(ctx.roles) if r == FOLLOWER]
                anticipated[follower_ids] = anticipated_followers
        else:
            predicted = aswm_follower_predict(self.follower_policy, summary)
        shadow = self._shadow_choice(ctx, anticipated)

        if in_warmup:
            applied = shadow
        else:
            applied = predicted
            eps = self.epsilon * self.epsilon_decay**ctx.round_index
            if self._rng.random() < eps:
                span = self.exploration_span
                applied = float(
                    np.clip(applied + self._rng.uniform(-span, span), self.c_min, self.c_max)
                )
        self._pending[ctx.node.node_id] = {"summary": summary, "shadow": shadow}
        return float(applied)

    def observe_round(self, outcome: RoundOutcome) -> None:
        for node in outcome.nodes:
            pending = self._pending.pop(node.node_id)
            counterfactual = outcome.weights.copy()
            counterfactual[node.node_id] = pending["shadow"]
            merged = weighted_aggregate(outcome.models, counterfactual)
            baseline_loss, _ = model_loss(merged, node.val)
            self.buffer.push(
                ReplayEntry(
                    round_index=outcome.round_index,
                    node_id=node.node_id,
                    role=node.role,
                    weights=outcome.weights.copy(),
                    loss=float(outcome.global_val_losses[node.node_id]),
                    summary=pending["summary"],
                    baseline_loss=float(baseline_loss),
                )
            )
        if outcome.round_index >= self.warmup_rounds - 1 and len(self.buffer) > 0:
            batch = self.buffer.sample(self.train_batch, self._rng)
            leader_entries = [e for e in batch if e.role == LEADER]
            follower_entries = [e for e in batch if e.role == FOLLOWER]
            self.leader_policy = aswm_train_step(
                self.leader_policy, leader_entries, self.lr_actor, self.lr_critic
            )
            self.follower_policy = aswm_train_step(
                self.follower_policy, follower_entries, self.lr_actor, self.lr_critic
            )


STRATEGY_TAGS = ("fedavg", "pwfedavg", "dswm", "aswm")


def make_strategy(
    tag: str,
    n_nodes: int = 3,
    seed: int = 0,
    c_min: float = DEFAULT_C_MIN,
    c_max: float = DEFAULT_C_MAX,
    **aswm_kwargs,
) -> WeightingStrategy:
    """Build a strategy by tag; unknown tags raise ConfigurationError."""
    if tag == "fedavg":
        return FedAvgStrategy(c_min=c_min)
    if tag == "pwfedavg":
        return PWFedAvgStrategy()
    if tag == "dswm":
        return DSWMStrategy()
    if tag == "aswm":
        return ASWMStrategy(
            n_nodes=n_nodes, seed=seed, c_min=c_min, c_max=c_max, **aswm_kwargs
        )
    raise ConfigurationError(f"unknown strategy {tag!r}; pick one of {STRATEGY_TAGS}")
