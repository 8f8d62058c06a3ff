import json

import numpy as np
import pytest

from fedsim.accounting import METHODS, traffic_per_round
from fedsim.data import ClientData, Dataset
from fedsim.engine import (
    RunSummary,
    evaluate,
    micro_accuracy,
    repeat_seeds,
    rounds_csv,
    run_federation,
    run_repeats,
    summary_json,
)
from fedsim.models import MlpModel
from fedsim.numcore import RngStream
from fedsim.strategies import Client, MethodParams
from helpers import small_cfg
from oracles import mean_std


def test_zero_rounds_is_chance_level():
    accs = [run_federation(small_cfg(rounds=0, n_test=2000), seed=s).test_accuracy for s in range(10)]
    assert abs(np.mean(accs) - 0.1) < 0.03


def test_single_client_fedavg_matches_centralized():
    one = dict(clients=1, min_client_samples=1, fine_tune=False, rounds=4)
    a = run_federation(small_cfg(method="fedavg", **one), seed=2)
    b = run_federation(small_cfg(method="centralized", **one), seed=2)
    assert a.test_accuracy == b.test_accuracy
    assert [m.val_acc for m in a.rounds] == [m.val_acc for m in b.rounds]


def test_same_seed_is_bitwise_reproducible():
    cfg = small_cfg(method="ditto", rounds=3)
    a = RunSummary(cfg, [run_federation(cfg, seed=5)])
    b = RunSummary(cfg, [run_federation(cfg, seed=5)])
    assert summary_json(a) == summary_json(b)
    assert rounds_csv(a) == rounds_csv(b)


@pytest.mark.parametrize("method", ["fedavg", "hypcluster", "fedme", "lg_fedavg"])
def test_client_order_and_workers_do_not_matter(method):
    cfg = small_cfg(method=method, rounds=3, params=MethodParams(fedme_unlabeled=100))
    ref = RunSummary(cfg, [run_federation(cfg, seed=1)])
    shuffled = RunSummary(cfg, [run_federation(cfg, seed=1, client_order=[3, 0, 4, 2, 1])])
    threaded = RunSummary(cfg, [run_federation(cfg, seed=1, workers=4)])
    assert summary_json(shuffled) == summary_json(ref)
    assert summary_json(threaded) == summary_json(ref)


@pytest.mark.parametrize("method", METHODS)
def test_recorded_traffic_and_curve_length(method):
    cfg = small_cfg(method=method, rounds=3, fine_tune=False, params=MethodParams(fedme_unlabeled=100))
    run = run_federation(cfg, seed=0)
    arch = MlpModel([cfg.n_features, *cfg.hidden, cfg.n_classes]).arch_spec()
    expected = traffic_per_round(method, arch, k=cfg.params.k)
    assert len(run.rounds) == cfg.rounds
    for m in run.rounds:
        # one upload per client per round, each of the planned size
        assert len(m.val_acc) == cfg.clients
        assert m.traffic == [expected] * cfg.clients


def test_memorizing_model_scores_one():
    n, c = 6, 3
    y = np.arange(n) % c
    ds = Dataset(np.eye(n), y, c)
    w = np.zeros((n, c))
    w[np.arange(n), y] = 10.0
    m = MlpModel([n, c]).with_values(np.concatenate([w.ravel(), np.zeros(c)]))
    assert evaluate(m, m.params.values, ds) == 1.0


def test_zero_model_predicts_class_zero():
    y = np.repeat(np.arange(4), 5)
    ds = Dataset(np.random.default_rng(0).normal(size=(20, 3)), y, 4)
    m = MlpModel([3, 4])
    assert evaluate(m, m.params.values, ds) == 0.25
    assert np.isnan(evaluate(m, m.params.values, ds.subset([])))


def test_micro_accuracy_differs_from_macro():
    m = MlpModel([1, 2])  # all-zero weights always predict class 0
    def client(cid, labels):
        d = Dataset(np.zeros((len(labels), 1)), labels, 2)
        return Client(cid, ClientData(d, d, d), RngStream(cid))
    clients = [client(0, [0]), client(1, [1, 1, 1])]
    finals = {0: m.params.values, 1: m.params.values}
    micro, counts = micro_accuracy(m, finals, clients)
    macro = np.mean([k / n for k, n in counts])
    assert counts == [(1, 1), (0, 3)]
    assert micro == 0.25 and macro == 0.5


def test_repeats_statistics():
    cfg = small_cfg(rounds=2, repeats=3)
    summary = run_repeats(cfg)
    accs = [r.test_accuracy for r in summary.runs]
    mean, std = mean_std(accs)
    assert abs(summary.accuracy.mean - mean) <= 1e-12
    assert abs(summary.accuracy.std - std) <= 1e-12
    assert [r.seed for r in summary.runs] == repeat_seeds(cfg.seed, 3)


def test_single_repeat_and_forced_seeds():
    cfg = small_cfg(rounds=1)
    one = run_repeats(cfg, repeats=1)
    assert one.accuracy.std == 0.0 and not one.accuracy.std_defined
    same = run_repeats(cfg, seeds=[7, 7, 7])
    assert same.accuracy.std == 0.0 and same.accuracy.std_defined


def test_summary_schema():
    cfg = small_cfg(rounds=2)
    doc = json.loads(summary_json(run_repeats(cfg, repeats=2)))
    assert doc["schema_version"] == 1 and doc["tool_version"]
    assert doc["config"]["clients"] == 5 and len(doc["runs"]) == 2
    assert len(doc["mean_val_acc"]) == 2


def test_rounds_csv_layout():
    cfg = small_cfg(rounds=2)
    text = rounds_csv(run_repeats(cfg, repeats=1))
    lines = text.splitlines()
    assert lines[0] == "repeat,round,client_id,val_acc,traffic_params,wall_ms"
    assert len(lines) == 1 + 2 * 5
    assert lines[1].endswith(",")  # wall time is off unless requested


def test_timing_column_when_requested():
    cfg = small_cfg(rounds=1, record_timing=True)
    line = rounds_csv(run_repeats(cfg, repeats=1)).splitlines()[1]
    assert float(line.rsplit(",", 1)[1]) > 0


@pytest.mark.parametrize("kw", [dict(rounds=-1), dict(clients=0), dict(data_ratio=1.5), dict(alpha_label=0.0),
                                dict(method="nope"), dict(train_val_ratio="a:b")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        small_cfg(**kw).validate()


def test_idx_dataset_source(tmp_path):
    from fedsim.data import generate_synthetic, save_idx
    tr = generate_synthetic(rng=RngStream(0), n_samples=400, n_features=4)
    te = generate_synthetic(rng=RngStream(1), n_samples=100, n_features=4)
    save_idx(tr, tmp_path / "a", tmp_path / "b")
    save_idx(te, tmp_path / "c", tmp_path / "d")
    cfg = small_cfg(dataset="idx", train_images=str(tmp_path / "a"), train_labels=str(tmp_path / "b"),
                    test_images=str(tmp_path / "c"), test_labels=str(tmp_path / "d"), rounds=1, clients=2)
    run = run_federation(cfg)
    assert 0 <= run.test_accuracy <= 1
