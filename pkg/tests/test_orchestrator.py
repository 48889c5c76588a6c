"""End-to-end session loop: composition, degeneracies, and metrics plumbing."""
import copy
import dataclasses
import json

import numpy as np
import pytest

from conftest import desk_config
from fedscil import Classifier, ReplayBuffer, run_experiment
from fedscil.data import LabeledDataset
from fedscil.errors import BufferGapError, ContractError
from fedscil.orchestrator import (evaluate, inspect_partitions, prepare_data,
                                  prepare_partitions, run_incremental_session)

LIGHT = ("data.classes=6", "data.dim=4", "data.base_classes=4",
         "data.sessions=1", "data.way=2", "data.shot=4",
         "data.per_class_train=12", "data.per_class_test=8", "data.spread=0.1",
         "base.epochs=8", "client.epochs=3",
         "generator.epochs=4", "generator.rounds_per_epoch=4",
         "generator.batch_size=16", "generator.bank_per_epoch=24",
         "generator.noise_dim=6", "generator.buffer_capacity=60")


def light_config(*sets, method="sdd", seed=0):
    return desk_config(*LIGHT, *sets, method=method, seed=seed)


# -- degenerate schedules ------------------------------------------------------------

def test_zero_sessions_run_is_just_the_base():
    cfg = light_config("data.sessions=0", method="finetune")
    result = run_experiment(cfg)
    assert len(result.sessions) == 1
    assert result.final_accuracy == result.sessions[0].overall
    assert result.average_accuracy == result.sessions[0].overall
    assert len(result.run_id) == 12
    assert result.buffer_rows is None


def test_light_replay_run_reaches_high_accuracy():
    cfg = light_config("export_synthetics=true")
    result = run_experiment(cfg)
    assert [m.session for m in result.sessions] == [0, 1]
    assert result.sessions[0].overall >= 0.9
    assert result.sessions[1].old >= 0.9     # replay held the base classes
    assert result.sessions[1].overall >= 0.7
    assert result.buffer_rows
    sample, condition, pseudo, session = result.buffer_rows[0]
    assert sample.shape == (4,)
    assert {session for *_, session in result.buffer_rows} == {0, 1}


# -- single-client degeneracy ----------------------------------------------------------

def test_single_client_collapses_cswa_to_plain_averaging(desk_base):
    """With one client both aggregation rules copy that client's tensors, so
    sdd and its averaging-only ablation must produce identical sessions."""
    results = {}
    for method in ("sdd", "sdd_nagr_only"):
        cfg = dataclasses.replace(desk_base.cfg, clients=1, method=method)
        parts = prepare_partitions(cfg, desk_base.sched)
        buffer = copy.deepcopy(desk_base.base.buffer)
        results[method] = run_incremental_session(
            cfg, desk_base.sched, 1, desk_base.base.model, buffer, parts[1])
    a, b = results["sdd"], results["sdd_nagr_only"]
    for (name, arr_a, _), (_, arr_b, _) in zip(a.model.state_entries(),
                                               b.model.state_entries()):
        assert np.array_equal(arr_a, arr_b), name
    assert a.metrics.overall == b.metrics.overall

    # audit payloads reflect the aggregation rule actually used
    audit = a.metrics.audit
    assert audit["client_counts"] == [10]
    assert np.asarray(audit["accuracy_matrix"]).shape == (1, 2)
    assert np.asarray(audit["column_weights"]).shape == (1, 2)
    assert b.metrics.audit["accuracy_matrix"] is None
    assert b.metrics.audit["column_weights"] is None
    assert a.metrics.classes_seen == 14


def test_incremental_session_banks_the_new_classes(desk_base):
    cfg = dataclasses.replace(desk_base.cfg, clients=1)
    parts = prepare_partitions(cfg, desk_base.sched)
    buffer = copy.deepcopy(desk_base.base.buffer)
    run_incremental_session(cfg, desk_base.sched, 1, desk_base.base.model,
                            buffer, parts[1])
    assert buffer.classes() == list(range(14))


# -- determinism ------------------------------------------------------------------------

def test_run_experiment_is_deterministic():
    cfg = light_config("data.sessions=2", "data.classes=8", method="finetune")
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    assert a.run_id == b.run_id
    assert [m.overall for m in a.sessions] == [m.overall for m in b.sessions]
    assert [m.per_class for m in a.sessions] == [m.per_class for m in b.sessions]


def test_prepare_data_is_deterministic():
    cfg = light_config()
    one, two = prepare_data(cfg), prepare_data(cfg)
    assert np.array_equal(one.train.x, two.train.x)
    assert np.array_equal(one.test.y, two.test.y)


# -- desk base session --------------------------------------------------------------------

def test_desk_base_session_learns_the_base_classes(desk_base):
    metrics = desk_base.base.metrics
    assert metrics.session == 0
    assert metrics.classes_seen == 12
    assert metrics.overall >= 0.95
    assert metrics.old is None
    assert metrics.new == metrics.overall
    assert len(metrics.per_class) == 12
    assert metrics.audit is None


def test_desk_base_buffer_covers_every_base_class(desk_base):
    assert desk_base.base.buffer.classes() == list(range(12))
    counts = desk_base.base.buffer.per_class_counts()
    assert all(n > 0 for n in counts.values())


# -- catastrophic forgetting without replay --------------------------------------------------

def test_finetune_collapses_on_old_classes():
    result = run_experiment(desk_config(method="finetune"))
    base = result.sessions[0].overall
    for metrics in result.sessions[1:]:
        assert metrics.overall < 0.5 * base
    assert result.sessions[-1].old < 0.5 * base
    audit = result.sessions[1].audit
    assert len(audit["client_counts"]) == 3
    assert audit["accuracy_matrix"] is None


# -- evaluation ---------------------------------------------------------------------------------

def test_evaluate_hand_check(rng):
    model = Classifier(in_dim=3, base_classes=2, seed=0, hidden=8,
                       feature_dim=4)
    head = model.head_blocks[0].linear
    head.weight.value.data[:] = 0.0
    head.bias.value.data[:] = [1.0, 0.0]   # constant class-0 predictor
    ds = LabeledDataset(rng.standard_normal((6, 3)),
                        np.array([0, 0, 0, 1, 1, 0]), 2)
    overall, old, new, per_class = evaluate(model, ds, 1)
    assert abs(overall - 4.0 / 6.0) <= 1e-12
    assert old == 1.0
    assert new == 0.0
    assert per_class == [1.0, 0.0]


def test_evaluate_without_old_classes_mirrors_overall(rng):
    model = Classifier(in_dim=3, base_classes=2, seed=0)
    ds = LabeledDataset(rng.standard_normal((4, 3)), np.array([0, 1, 0, 1]), 2)
    overall, old, new, _ = evaluate(model, ds, 0)
    assert old is None
    assert new == overall


# -- partition inspection --------------------------------------------------------------------------

def test_inspect_partitions_is_json_ready():
    cfg = light_config("clients=2")
    view = inspect_partitions(cfg)
    json.dumps(view)
    assert view["clients"] == 2
    assert view["alpha"] == 1.0
    assert len(view["sessions"]) == 2
    base_entry, inc_entry = view["sessions"]
    assert "partition" not in base_entry
    assert base_entry["classes"] == [0, 1, 2, 3]
    part = inc_entry["partition"]
    assert part["total_samples"] == inc_entry["train_samples"] == 8
    assert sum(c["samples"] for c in part["clients"]) == 8
    per_class_total = sum(sum(c["per_class"].values()) for c in part["clients"])
    assert per_class_total == 8


# -- failure paths -----------------------------------------------------------------------------------

def test_csv_train_without_test_is_rejected():
    cfg = light_config("data.csv_train=somewhere.csv")
    with pytest.raises(ContractError):
        prepare_data(cfg)


def test_replay_session_requires_a_seeded_buffer(desk_base):
    cfg = dataclasses.replace(desk_base.cfg, clients=1)
    parts = prepare_partitions(cfg, desk_base.sched)
    with pytest.raises(BufferGapError):
        run_incremental_session(cfg, desk_base.sched, 1, desk_base.base.model,
                                ReplayBuffer(10), parts[1])
