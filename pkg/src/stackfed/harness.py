"""Experiment runner: seeded scenarios, repetitions, aggregation, CSV/JSON.

A repetition r of an experiment is fully determined by ``base_seed + r``:
dataset synthesis, partitioning, per-node noise, splits, model init, and
round-level shuffles all derive their seeds from it. Strategies compared
under the same config therefore see byte-identical node data, which is
verified through partition hashes.

Environment: ``STACKFED_WORKERS`` sets the worker-thread count for running
repetitions in parallel (default 1, serial). Results are keyed and sorted by
repetition index before aggregation, so the worker count never changes the
output.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import Dataset, add_gaussian_noise, dirichlet_partition, load_dataset, split, synthetic_dataset
from .errors import ConfigurationError, StackfedError
from .federation import (
    FOLLOWER,
    LEADER,
    FederationConfig,
    NodeState,
    derive_seed,
    evaluate_all,
    init_federation,
    run_federation,
)
from .nn import Batch, mlp_init
from .strategies import STRATEGY_TAGS, make_strategy

WORKERS_ENV = "STACKFED_WORKERS"

RESULTS_HEADER = [
    "strategy", "node_id", "role", "rep", "round",
    "contribution_weight", "val_loss", "test_auc",
]
SUMMARY_HEADER = [
    "strategy", "node_id", "role", "mean_auc", "std_auc", "mean_loss",
    "delta_vs_fedavg_pct",
]


@dataclass
class ExperimentConfig:
    """Flat experiment configuration; every field has a CLI flag."""

    dataset: str = "synthetic"  # "synthetic" | "file"
    data_path: str | None = None
    n_samples: int = 3000
    n_features: int = 32
    n_classes: int = 4
    class_sep: float = 4.0
    n_nodes: int = 3
    target_sizes: tuple[float, ...] = (0.62, 0.24, 0.14)
    dirichlet_alpha: float = 5.0
    # scalar applies to every node; a sequence gives one sigma per node
    noise_sigma: float | tuple[float, ...] = (0.02, 0.08, 0.14)
    split_fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    strategy: str = "fedavg"
    rounds: int = 30
    reps: int = 10
    base_seed: int = 0
    hidden_sizes: tuple[int, ...] = (32,)
    epochs: int = 2
    batch_size: int = 32
    lr: float = 0.05
    c_min: float = 0.05
    c_max: float = 1.0
    auc_scheme: str = "macro"
    warmup_rounds: int = 3
    replay_capacity: int = 256
    epsilon: float = 0.2
    epsilon_decay: float = 0.95
    lr_actor: float = 5e-4
    lr_critic: float = 1e-3
    policy_hidden: int = 16
    train_batch: int = 32
    out_dir: str = "results"

    def __post_init__(self) -> None:
        self.target_sizes = tuple(float(t) for t in self.target_sizes)
        self.split_fractions = tuple(float(f) for f in self.split_fractions)
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.reps < 1 or self.rounds < 1:
            raise ConfigurationError("reps and rounds must be >= 1")
        if self.dataset not in ("synthetic", "file"):
            raise ConfigurationError("dataset must be 'synthetic' or 'file'")
        if self.dataset == "file" and not self.data_path:
            raise ConfigurationError("dataset='file' requires data_path")
        if self.strategy not in STRATEGY_TAGS:
            raise ConfigurationError(f"strategy must be one of {STRATEGY_TAGS}")
        if len(self.target_sizes) != self.n_nodes:
            raise ConfigurationError("target_sizes length must equal n_nodes")
        if abs(sum(self.target_sizes) - 1.0) > 1e-6:
            raise ConfigurationError("target_sizes must sum to 1")
        if not isinstance(self.noise_sigma, (int, float)):
            self.noise_sigma = tuple(float(s) for s in self.noise_sigma)
            if len(self.noise_sigma) != self.n_nodes:
                raise ConfigurationError("per-node noise_sigma length must equal n_nodes")

    def node_sigma(self, node_id: int) -> float:
        if isinstance(self.noise_sigma, (int, float)):
            return float(self.noise_sigma)
        return self.noise_sigma[node_id]

    @property
    def leader_index(self) -> int:
        """The node with the largest target share leads."""
        return int(np.argmax(self.target_sizes))

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                values = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigurationError("config file must hold a flat JSON object")
        return cls.from_dict(values)


@dataclass
class TrajectoryRow:
    strategy: str
    node_id: int
    role: str
    rep: int
    round_index: int
    contribution_weight: float
    val_loss: float
    test_auc: float


@dataclass
class SummaryRow:
    strategy: str
    node_id: int
    role: str
    mean_auc: float
    std_auc: float
    mean_loss: float
    delta_vs_fedavg_pct: float | None = None


@dataclass
class RepFailure:
    strategy: str
    rep: int
    error: str


@dataclass
class ResultTable:
    summary: list[SummaryRow] = field(default_factory=list)
    trajectories: list[TrajectoryRow] = field(default_factory=list)
    failures: list[RepFailure] = field(default_factory=list)
    partition_hashes: dict[str, list[str]] = field(default_factory=dict)


def percentage_delta(value: float, reference: float) -> float:
    """Relative change in percent, e.g. 0.745 -> 0.772 is +3.62%."""
    return (value - reference) / reference * 100.0


def partition_hash(node_indices) -> str:
    """Stable digest of a partition, used to prove split discipline."""
    h = hashlib.sha256()
    for ix in node_indices:
        h.update(np.ascontiguousarray(np.sort(ix), dtype="<i8").tobytes())
        h.update(b"|")
    return h.hexdigest()


def build_federation(config: ExperimentConfig, rep_seed: int):
    """Assemble one repetition's federation; returns (state, partition hash)."""
    if config.dataset == "synthetic":
        ds = synthetic_dataset(
            config.n_samples, config.n_features, config.n_classes,
            config.class_sep, seed=derive_seed(rep_seed, 101),
        )
    else:
        ds = load_dataset(config.data_path)
    part = dirichlet_partition(
        ds.labels, config.n_nodes, config.dirichlet_alpha,
        np.array(config.target_sizes), rng_seed=derive_seed(rep_seed, 102),
    )
    phash = partition_hash(part.node_indices)

    d, k = ds.features.shape[1], ds.n_classes
    shapes = []
    prev = d
    for h in config.hidden_sizes:
        shapes.append((prev, h))
        prev = h
    shapes.append((prev, k))
    global_model = mlp_init(shapes, derive_seed(rep_seed, 104))

    nodes = []
    for node_id in range(config.n_nodes):
        sub = ds.subset(part.node_indices[node_id])
        noise_seed = rep_seed + node_id
        feats = add_gaussian_noise(sub.features, config.node_sigma(node_id), noise_seed)
        node_ds = Dataset(feats, sub.labels, k)
        train, val, test = split(
            node_ds, config.split_fractions, seed=derive_seed(rep_seed, 103, node_id)
        )
        nodes.append(
            NodeState(
                node_id=node_id,
                role=LEADER if node_id == config.leader_index else FOLLOWER,
                train=Batch(train.features, train.labels),
                val=Batch(val.features, val.labels),
                test=Batch(test.features, test.labels),
                local_model=global_model.copy(),
                contribution_weight=1.0,
                noise_seed=noise_seed,
            )
        )
    fed_config = FederationConfig(
        epochs=config.epochs,
        batch_size=config.batch_size,
        lr=config.lr,
        c_min=config.c_min,
        c_max=config.c_max,
        rounds=config.rounds,
        seed=derive_seed(rep_seed, 105),
        auc_scheme=config.auc_scheme,
    )
    return init_federation(global_model, nodes, fed_config), phash


def _strategy_for(config: ExperimentConfig, tag: str, rep_seed: int):
    return make_strategy(
        tag,
        n_nodes=config.n_nodes,
        seed=derive_seed(rep_seed, 201),
        c_min=config.c_min,
        c_max=config.c_max,
        **(
            dict(
                capacity=config.replay_capacity,
                warmup_rounds=config.warmup_rounds,
                epsilon=config.epsilon,
                epsilon_decay=config.epsilon_decay,
                lr_actor=config.lr_actor,
                lr_critic=config.lr_critic,
                train_batch=config.train_batch,
                hidden=config.policy_hidden,
            )
            if tag == "aswm"
            else {}
        ),
    )


def _run_rep(config: ExperimentConfig, tag: str, rep: int) -> dict:
    rep_seed = config.base_seed + rep
    state, phash = build_federation(config, rep_seed)
    strategy = _strategy_for(config, tag, rep_seed)
    state = run_federation(state, strategy)
    reports = evaluate_all(state)
    rows = [
        TrajectoryRow(
            strategy=tag,
            node_id=nr.node_id,
            role=nr.role,
            rep=rep,
            round_index=record.round_index,
            contribution_weight=nr.weight,
            val_loss=nr.val_loss,
            test_auc=nr.test_auc,
        )
        for record in state.history
        for nr in record.nodes
    ]
    return {
        "rep": rep,
        "hash": phash,
        "rows": rows,
        "roles": [n.role for n in state.nodes],
        "final_auc": [r.auc for r in reports],
        "final_loss": [r.loss for r in reports],
    }


def _worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        workers = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, workers)


def run_experiment(config: ExperimentConfig, strategy: str | None = None) -> ResultTable:
    """Run one strategy over all repetitions and aggregate final metrics.

    A repetition that raises is recorded as a failure; the table then holds
    partial results and the CLI exits nonzero.
    """
    tag = strategy or config.strategy
    if tag not in STRATEGY_TAGS:
        raise ConfigurationError(f"strategy must be one of {STRATEGY_TAGS}")
    workers = _worker_count()
    results: dict[int, dict] = {}
    failures: list[RepFailure] = []

    def attempt(rep: int):
        try:
            return rep, _run_rep(config, tag, rep), None
        except (StackfedError, OSError) as exc:
            return rep, None, f"{type(exc).__name__}: {exc}"

    if workers == 1:
        outcomes = [attempt(rep) for rep in range(config.reps)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(attempt, range(config.reps)))
    for rep, result, error in sorted(outcomes, key=lambda t: t[0]):
        if error is not None:
            failures.append(RepFailure(strategy=tag, rep=rep, error=error))
        else:
            results[rep] = result

    table = ResultTable(failures=failures)
    table.partition_hashes[tag] = [
        results[rep]["hash"] if rep in results else "" for rep in range(config.reps)
    ]
    for rep in sorted(results):
        table.trajectories.extend(results[rep]["rows"])
    if results:
        any_result = results[min(results)]
        roles = any_result["roles"]
        aucs = np.array([results[rep]["final_auc"] for rep in sorted(results)])
        losses = np.array([results[rep]["final_loss"] for rep in sorted(results)])
        for node_id in range(config.n_nodes):
            node_aucs = aucs[:, node_id]
            std = float(node_aucs.std(ddof=1)) if node_aucs.size > 1 else 0.0
            table.summary.append(
                SummaryRow(
                    strategy=tag,
                    node_id=node_id,
                    role=roles[node_id],
                    mean_auc=float(node_aucs.mean()),
                    std_auc=std,
                    mean_loss=float(losses[:, node_id].mean()),
                )
            )
    return table


def compare_strategies(config: ExperimentConfig, strategies: list[str]) -> ResultTable:
    """Run several strategies on identical repetitions; deltas are vs fedavg.

    The size-weighted baseline is always run (and included in the output) so
    the percentage deltas are well defined. Identical data splits across
    strategies are asserted through the partition hashes.
    """
    tags = list(dict.fromkeys(strategies))
    if "fedavg" in tags:
        tags.remove("fedavg")
    tags = ["fedavg", *tags]

    merged = ResultTable()
    baseline_auc: dict[int, float] = {}
    reference_hashes: list[str] | None = None
    for tag in tags:
        table = run_experiment(config, tag)
        hashes = table.partition_hashes[tag]
        if reference_hashes is None:
            reference_hashes = hashes
        elif [h for h in hashes if h] != [h for h in reference_hashes if h]:
            raise StackfedError(
                f"partition hashes for {tag!r} diverge from the baseline; "
                "strategies were not compared on identical data"
            )
        merged.partition_hashes[tag] = hashes
        merged.trajectories.extend(table.trajectories)
        merged.failures.extend(table.failures)
        for row in table.summary:
            if tag == "fedavg":
                baseline_auc[row.node_id] = row.mean_auc
            base = baseline_auc.get(row.node_id)
            delta = None
            if base is not None and base != 0:
                delta = percentage_delta(row.mean_auc, base)
            merged.summary.append(
                SummaryRow(
                    strategy=row.strategy,
                    node_id=row.node_id,
                    role=row.role,
                    mean_auc=row.mean_auc,
                    std_auc=row.std_auc,
                    mean_loss=row.mean_loss,
                    delta_vs_fedavg_pct=delta,
                )
            )
    return merged


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_results(table: ResultTable, fmt: str, path) -> None:
    """Persist a table.

    ``fmt='csv'`` treats ``path`` as a directory and writes ``results.csv``
    (per-round trajectories) plus ``summary.csv``; ``fmt='json'`` writes a
    single file that ``load_results_json`` parses back into an equal table.
    """
    if fmt == "csv":
        out = Path(path)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "results.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(RESULTS_HEADER)
            for r in table.trajectories:
                writer.writerow(
                    [r.strategy, r.node_id, r.role, r.rep, r.round_index,
                     _fmt(r.contribution_weight), _fmt(r.val_loss), _fmt(r.test_auc)]
                )
        with open(out / "summary.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(SUMMARY_HEADER)
            for s in table.summary:
                writer.writerow(
                    [s.strategy, s.node_id, s.role, _fmt(s.mean_auc),
                     _fmt(s.std_auc), _fmt(s.mean_loss), _fmt(s.delta_vs_fedavg_pct)]
                )
    elif fmt == "json":
        payload = {
            "summary": [asdict(s) for s in table.summary],
            "trajectories": [asdict(t) for t in table.trajectories],
            "failures": [asdict(f) for f in table.failures],
            "partition_hashes": table.partition_hashes,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        raise ConfigurationError("format must be 'csv' or 'json'")


def load_results_json(path) -> ResultTable:
    """Inverse of ``emit_results(..., 'json', ...)``."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return ResultTable(
        summary=[SummaryRow(**s) for s in payload["summary"]],
        trajectories=[TrajectoryRow(**t) for t in payload["trajectories"]],
        failures=[RepFailure(**f) for f in payload["failures"]],
        partition_hashes=payload["partition_hashes"],
    )
