"""Tests for the experiment runner, aggregation, and result emission."""

import json

import numpy as np
import pytest

from stackfed.errors import ConfigurationError
from stackfed.harness import (
    ExperimentConfig,
    RESULTS_HEADER,
    SUMMARY_HEADER,
    ResultTable,
    SummaryRow,
    TrajectoryRow,
    build_federation,
    compare_strategies,
    emit_results,
    load_results_json,
    partition_hash,
    percentage_delta,
    run_experiment,
)


@pytest.fixture
def tiny_config():
    return ExperimentConfig(
        n_samples=420,
        n_features=6,
        n_classes=3,
        class_sep=3.0,
        rounds=3,
        reps=2,
        epochs=1,
        batch_size=16,
        lr=0.1,
        base_seed=11,
    )


class TestExperimentConfig:
    def test_defaults_are_valid(self):
        cfg = ExperimentConfig()
        assert cfg.n_nodes == 3
        assert cfg.leader_index == 0

    def test_leader_is_largest_share(self):
        cfg = ExperimentConfig(target_sizes=(0.2, 0.7, 0.1))
        assert cfg.leader_index == 1

    def test_from_file_and_unknown_keys(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"rounds": 5, "reps": 2}))
        cfg = ExperimentConfig.from_file(path)
        assert cfg.rounds == 5 and cfg.reps == 2
        path.write_text(json.dumps({"roundz": 5}))
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_file(path)

    def test_bad_json_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_file(path)

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(reps=0)
        with pytest.raises(ConfigurationError):
            ExperimentConfig(target_sizes=(0.5, 0.2, 0.2))
        with pytest.raises(ConfigurationError):
            ExperimentConfig(strategy="nonsense")
        with pytest.raises(ConfigurationError):
            ExperimentConfig(dataset="file")


class TestBuildFederation:
    def test_roles_and_determinism(self, tiny_config):
        a, hash_a = build_federation(tiny_config, rep_seed=0)
        b, hash_b = build_federation(tiny_config, rep_seed=0)
        assert hash_a == hash_b
        assert [n.role for n in a.nodes] == ["leader", "follower", "follower"]
        np.testing.assert_array_equal(a.global_model.values, b.global_model.values)
        np.testing.assert_array_equal(a.nodes[1].train.features, b.nodes[1].train.features)

    def test_different_seeds_differ(self, tiny_config):
        _, hash_a = build_federation(tiny_config, rep_seed=0)
        _, hash_b = build_federation(tiny_config, rep_seed=1)
        assert hash_a != hash_b

    def test_file_dataset_round_trip(self, tiny_config, tmp_path):
        from stackfed.data import save_dataset, synthetic_dataset

        ds = synthetic_dataset(420, 6, 3, 3.0, seed=1)
        path = tmp_path / "data.sfd"
        save_dataset(ds, path)
        cfg = ExperimentConfig(
            dataset="file", data_path=str(path), rounds=2, reps=1,
            epochs=1, batch_size=16, n_classes=3, n_features=6,
        )
        state, _ = build_federation(cfg, rep_seed=0)
        assert state.global_model.n_inputs == 6
        assert state.global_model.n_outputs == 3


class TestRunExperiment:
    def test_deterministic_tables(self, tiny_config):
        a = run_experiment(tiny_config, "fedavg")
        b = run_experiment(tiny_config, "fedavg")
        assert a == b

    def test_row_counts(self, tiny_config):
        table = run_experiment(tiny_config, "dswm")
        assert len(table.summary) == tiny_config.n_nodes
        expected_rows = tiny_config.reps * tiny_config.rounds * tiny_config.n_nodes
        assert len(table.trajectories) == expected_rows
        assert not table.failures

    def test_std_zero_for_single_rep(self, tiny_config):
        cfg = ExperimentConfig(**{**tiny_config.__dict__, "reps": 1})
        table = run_experiment(cfg, "fedavg")
        assert all(row.std_auc == 0.0 for row in table.summary)

    def test_failed_repetitions_recorded(self):
        cfg = ExperimentConfig(
            dataset="file", data_path="/nonexistent/path.sfd", reps=2, rounds=2
        )
        table = run_experiment(cfg, "fedavg")
        assert len(table.failures) == 2
        assert table.summary == []

    def test_worker_threads_do_not_change_results(self, tiny_config, monkeypatch):
        serial = run_experiment(tiny_config, "fedavg")
        monkeypatch.setenv("STACKFED_WORKERS", "3")
        parallel = run_experiment(tiny_config, "fedavg")
        assert serial == parallel


class TestCompareStrategies:
    def test_self_comparison_zero_delta(self, tiny_config):
        table = compare_strategies(tiny_config, ["fedavg"])
        assert len(table.summary) == tiny_config.n_nodes
        assert all(row.delta_vs_fedavg_pct == 0.0 for row in table.summary)

    def test_delta_formula(self):
        assert percentage_delta(0.772, 0.745) == pytest.approx(3.62, abs=0.01)

    def test_reference_added_and_one_delta_per_strategy_node(self, tiny_config):
        table = compare_strategies(tiny_config, ["pwfedavg"])
        strategies = {row.strategy for row in table.summary}
        assert strategies == {"fedavg", "pwfedavg"}
        assert len(table.summary) == 2 * tiny_config.n_nodes
        assert all(row.delta_vs_fedavg_pct is not None for row in table.summary)

    def test_identical_partitions_across_strategies(self, tiny_config):
        table = compare_strategies(tiny_config, ["dswm"])
        assert table.partition_hashes["fedavg"] == table.partition_hashes["dswm"]


class TestEmitResults:
    def test_json_round_trip(self, tiny_config, tmp_path):
        table = run_experiment(tiny_config, "fedavg")
        path = tmp_path / "out.json"
        emit_results(table, "json", path)
        assert load_results_json(path) == table

    def test_csv_headers_match_schema(self, tiny_config, tmp_path):
        table = run_experiment(tiny_config, "fedavg")
        emit_results(table, "csv", tmp_path)
        results_head = (tmp_path / "results.csv").read_text().splitlines()[0]
        summary_head = (tmp_path / "summary.csv").read_text().splitlines()[0]
        assert results_head == ",".join(RESULTS_HEADER)
        assert results_head == "strategy,node_id,role,rep,round,contribution_weight,val_loss,test_auc"
        assert summary_head == ",".join(SUMMARY_HEADER)
        assert summary_head == "strategy,node_id,role,mean_auc,std_auc,mean_loss,delta_vs_fedavg_pct"

    def test_empty_table_header_only(self, tmp_path):
        emit_results(ResultTable(), "csv", tmp_path)
        assert (tmp_path / "results.csv").read_text() == ",".join(RESULTS_HEADER) + "\n"
        assert (tmp_path / "summary.csv").read_text() == ",".join(SUMMARY_HEADER) + "\n"

    def test_byte_identical_reruns(self, tiny_config, tmp_path):
        for sub in ("a", "b"):
            emit_results(run_experiment(tiny_config, "dswm"), "csv", tmp_path / sub)
        assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
        assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()

    def test_unwritable_path_raises(self, tiny_config):
        table = ResultTable()
        with pytest.raises(OSError):
            emit_results(table, "json", "/nonexistent-dir/out.json")

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            emit_results(ResultTable(), "xml", tmp_path)


class TestPartitionHash:
    def test_order_insensitive_within_node(self):
        a = partition_hash([np.array([3, 1, 2]), np.array([5, 4])])
        b = partition_hash([np.array([1, 2, 3]), np.array([4, 5])])
        assert a == b

    def test_distinguishes_partitions(self):
        a = partition_hash([np.array([1, 2]), np.array([3, 4])])
        b = partition_hash([np.array([1, 3]), np.array([2, 4])])
        assert a != b
