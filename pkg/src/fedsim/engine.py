"""Running federations: data preparation, rounds, fine-tuning, evaluation."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .accounting import summarize
from .data import (
    ClientData,
    Dataset,
    extract_unlabeled,
    generate_synthetic,
    load_csv,
    load_idx,
    parse_ratio,
    partition_dirichlet,
    subsample_ratio,
    split_indices,
)
from .errors import InvalidArgument
from .models import MlpModel, forward
from .numcore import RngStream
from .strategies import Client, FedMe, LocalOpts, MethodParams, fine_tune, make_strategy

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CLIENT_GRID = (5, 10, 20, 100)
DATA_RATIO_GRID = (0.25, 0.5, 0.75, 1.0)
ALPHA_GRID = (0.1, 0.5, 1.0, 5.0)
LR_GRID = tuple(10.0**e for e in (-3, -2.5, -2, -1.5, -1, -0.5, 0, 0.5))


@dataclass
class FederationConfig:
    method: str = "fedavg"
    clients: int = 20
    rounds: int = 30
    local_epochs: int = 2
    data_ratio: float = 1.0
    alpha_label: float = 0.5
    batch_size: int = 20
    learning_rate: float = 10**-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    max_grad_norm: float = 20.0
    repeats: int = 5
    seed: int = 0
    fine_tune: bool = True
    hidden: tuple = (32,)
    train_val_ratio: str = "8:2"
    min_client_samples: int = 10
    dataset: str = "synthetic"
    n_classes: int = 10
    n_features: int = 20
    n_samples: int = 20_000
    n_test: int = 4_000
    class_sep: float = 1.0
    noise: float = 1.0
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_csv: str = ""
    test_csv: str = ""
    workers: int = 1
    record_timing: bool = False
    params: MethodParams = field(default_factory=MethodParams)

    def validate(self):
        if self.rounds < 0:
            raise InvalidArgument("rounds must be nonnegative")
        if self.clients < 1:
            raise InvalidArgument("clients must be at least 1")
        if self.local_epochs < 1:
            raise InvalidArgument("local_epochs must be at least 1")
        if not 0 < self.data_ratio <= 1:
            raise InvalidArgument("data_ratio must lie in (0, 1]")
        if not self.alpha_label > 0:
            raise InvalidArgument("alpha_label must be positive")
        if self.batch_size < 1 or self.repeats < 1 or self.workers < 1:
            raise InvalidArgument("batch_size, repeats and workers must be positive")
        if self.learning_rate < 0:
            raise InvalidArgument("learning_rate must be nonnegative")
        if self.dataset not in ("synthetic", "idx", "csv"):
            raise InvalidArgument(f"unknown dataset kind {self.dataset!r}")
        parse_ratio(self.train_val_ratio)
        make_strategy(self.method, MlpModel([1, 2]), self.local_opts(), self.params)

    def local_opts(self) -> LocalOpts:
        return LocalOpts(
            lr=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.local_epochs,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            max_grad_norm=self.max_grad_norm,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        p = d["params"]
        if p["fedme_schedule"] is not None:
            p["fedme_schedule"] = list(p["fedme_schedule"])
        return d


@dataclass
class RoundMetrics:
    round: int
    val_acc: list
    traffic: list
    wall_ms: float | None = None

    @property
    def mean_val_acc(self) -> float:
        v = np.asarray(self.val_acc, dtype=float)
        return float(np.nanmean(v)) if np.isfinite(v).any() else float("nan")


@dataclass
class RunResult:
    seed: int
    test_accuracy: float
    test_accuracy_ft: float | None
    client_test: list  # (correct, total) per client, before fine-tuning
    rounds: list


@dataclass
class RunSummary:
    config: FederationConfig
    runs: list

    def _stat(self, key):
        vals = [getattr(r, key) for r in self.runs]
        if not vals or any(v is None for v in vals):
            return None
        return summarize(vals)

    @property
    def accuracy(self):
        return self._stat("test_accuracy")

    @property
    def accuracy_ft(self):
        return self._stat("test_accuracy_ft")

    def mean_curve(self) -> np.ndarray:
        """Mean (over repeats) of the per-round unweighted client-mean validation accuracy."""
        if not self.runs or not self.runs[0].rounds:
            return np.zeros(0)
        return np.mean([[m.mean_val_acc for m in r.rounds] for r in self.runs], axis=0)


# ---------------------------------------------------------------------------
# data preparation


def load_dataset(cfg: FederationConfig, rng: RngStream) -> tuple:
    """Return ``(train, test)`` datasets for the configured source."""
    if cfg.dataset == "synthetic":
        full = generate_synthetic(
            cfg.n_classes, cfg.n_features, cfg.n_samples + cfg.n_test, cfg.class_sep, cfg.noise, rng.child("synthetic")
        )
        n = cfg.n_samples
        return full.subset(np.arange(n)), full.subset(np.arange(n, len(full)))
    if cfg.dataset == "idx":
        train = load_idx(cfg.train_images, cfg.train_labels)
        test = load_idx(cfg.test_images, cfg.test_labels)
    else:
        train = load_csv(cfg.train_csv)
        test = load_csv(cfg.test_csv)
    c = max(train.n_classes, test.n_classes)
    return Dataset(train.x, train.y, c), Dataset(test.x, test.y, c)


def build_clients(cfg: FederationConfig, stream: RngStream) -> tuple:
    """Partition data into clients.  Returns ``(clients, unlabeled_pool, plan)``."""
    train, test = load_dataset(cfg, stream.child("data"))
    train = subsample_ratio(train, cfg.data_ratio, stream.child("subsample"))
    unlabeled = None
    if cfg.method == "fedme":
        unlabeled, train = extract_unlabeled(train, cfg.params.fedme_unlabeled, stream.child("unlabeled"))
    plan = partition_dirichlet(
        train, test, cfg.clients, cfg.alpha_label, stream.child("partition"), min_samples=cfg.min_client_samples
    )
    clients = []
    for cid in range(cfg.clients):
        idx = plan.train[cid]
        tr_pos, va_pos = split_indices(len(idx), cfg.train_val_ratio, stream.child("split", cid))
        data = ClientData(train.subset(idx[tr_pos]), train.subset(idx[va_pos]), test.subset(plan.test[cid]))
        clients.append(Client(cid, data, stream.child("client", cid), idx[tr_pos]))
    return clients, unlabeled, plan


# ---------------------------------------------------------------------------
# evaluation


def predict(model: MlpModel, values, x) -> np.ndarray:
    probs, _ = forward(model, x, values)
    return probs.argmax(axis=1)  # first maximum, i.e. lowest class index on ties


def correct_count(model, values, ds: Dataset) -> int:
    if len(ds) == 0:
        return 0
    return int((predict(model, values, ds.x) == ds.y).sum())


def evaluate(model: MlpModel, values, ds: Dataset) -> float:
    """Argmax accuracy; NaN for an empty dataset."""
    if len(ds) == 0:
        return float("nan")
    return correct_count(model, values, ds) / len(ds)


def micro_accuracy(model, per_client_values: dict, clients) -> tuple:
    counts = [(correct_count(model, per_client_values[c.cid], c.data.test), len(c.data.test)) for c in clients]
    total = sum(n for _, n in counts)
    acc = sum(k for k, _ in counts) / total if total else float("nan")
    return acc, counts


# ---------------------------------------------------------------------------
# running


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_rounds(strategy, model, clients, rounds, order=None, workers=1, record_timing=False) -> list:
    """Drive an already set-up strategy for ``rounds`` rounds; returns per-round metrics."""
    order = [c.cid for c in clients] if order is None else list(order)
    if sorted(order) != sorted(c.cid for c in clients):
        raise InvalidArgument("client_order must be a permutation of client ids")
    by_id = {c.cid: c for c in clients}
    metrics = []
    for t in range(rounds):
        start = time.perf_counter()
        if getattr(strategy, "pooled_round", False):
            strategy.train_round(t)
        payloads = {cid: strategy.download(t, cid) for cid in order}

        def work(cid):
            return cid, strategy.client_update(t, by_id[cid], payloads[cid])

        updates = dict(_map(work, order, workers))
        val, traffic = [], []
        for c in clients:
            u = updates[c.cid]
            val.append(evaluate(model, u.eval_values, c.data.val))
            traffic.append(int(sum(np.size(p) for p in payloads[c.cid]) + sum(np.size(p) for p in u.uploads)))
        strategy.aggregate(t, {cid: updates[cid] for cid in sorted(updates)})
        wall = (time.perf_counter() - start) * 1000 if record_timing else None
        metrics.append(RoundMetrics(t, val, traffic, wall))
    return metrics


def run_federation(cfg: FederationConfig, seed: int | None = None, client_order=None, workers=None) -> RunResult:
    """One seeded run: partition, ``rounds`` rounds, optional fine-tuning, test.

    ``client_order`` permutes the order in which clients are processed;
    results do not depend on it.
    """
    seed = cfg.seed if seed is None else seed
    workers = cfg.workers if workers is None else workers
    stream = RngStream(seed)
    clients, unlabeled, _ = build_clients(cfg, stream)
    n_classes = clients[0].data.train.n_classes
    model = MlpModel([clients[0].data.train.n_features, *cfg.hidden, n_classes])
    init = model.initialized(stream.child("init")).params.values
    strategy = make_strategy(cfg.method, model, cfg.local_opts(), cfg.params)
    if isinstance(strategy, FedMe):
        strategy.setup(clients, init, stream.child("server"), cfg.rounds, unlabeled=unlabeled)
    else:
        strategy.setup(clients, init, stream.child("server"), cfg.rounds)

    order = list(range(len(clients))) if client_order is None else list(client_order)
    metrics = run_rounds(strategy, model, clients, cfg.rounds, order, workers, cfg.record_timing)
    by_id = {c.cid: c for c in clients}

    finals = strategy.final_models()
    acc, counts = micro_accuracy(model, finals, clients)
    acc_ft = None
    if cfg.fine_tune and strategy.fine_tunable and cfg.params.fine_tune_epochs > 0:
        opts = cfg.local_opts()
        tuned = dict(
            _map(
                lambda cid: (cid, fine_tune(model, finals[cid], by_id[cid], opts, cfg.params.fine_tune_epochs, cfg.rounds)),
                order,
                workers,
            )
        )
        acc_ft, _ = micro_accuracy(model, tuned, clients)
    return RunResult(seed, acc, acc_ft, counts, metrics)


def repeat_seeds(master: int, repeats: int) -> list:
    root = RngStream(master)
    return [root.derive_seed("repeat", r) for r in range(repeats)]


def run_repeats(cfg: FederationConfig, repeats: int | None = None, seeds=None) -> RunSummary:
    """``repeats`` independent runs with seeds split from the master seed."""
    cfg.validate()
    repeats = cfg.repeats if repeats is None else repeats
    seeds = repeat_seeds(cfg.seed, repeats) if seeds is None else list(seeds)
    runs = []
    for s in seeds:
        log.info("run %s seed=%d", cfg.method, s)
        runs.append(run_federation(cfg, seed=s))
    return RunSummary(cfg, runs)


# ---------------------------------------------------------------------------
# serialization

ROUNDS_COLUMNS = ("repeat", "round", "client_id", "val_acc", "traffic_params", "wall_ms")


def _num(x):
    if x is None:
        return ""
    return repr(float(x))


def rounds_csv(summary: RunSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROUNDS_COLUMNS)
    for r_idx, run in enumerate(summary.runs):
        for m in run.rounds:
            for cid, (acc, tr) in enumerate(zip(m.val_acc, m.traffic)):
                w.writerow([r_idx, m.round, cid, _num(acc), tr, _num(m.wall_ms)])
    return buf.getvalue()


def _stat_dict(s):
    if s is None:
        return None
    return {"mean": s.mean, "std": s.std, "n": s.n, "std_defined": s.std_defined}


def _finite_or_none(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _finite_or_none(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_finite_or_none(v) for v in x]
    return x


def summary_dict(summary: RunSummary) -> dict:
    """JSON-ready summary; non-finite numbers become ``None``."""
    return _finite_or_none({
        "schema_version": SCHEMA_VERSION,
        "tool": "fedsim",
        "tool_version": __version__,
        "method": summary.config.method,
        "repeats": len(summary.runs),
        "config": summary.config.to_dict(),
        "runs": [
            {
                "seed": r.seed,
                "test_accuracy": r.test_accuracy,
                "test_accuracy_ft": r.test_accuracy_ft,
                "mean_val_acc": [m.mean_val_acc for m in r.rounds],
            }
            for r in summary.runs
        ],
        "mean_val_acc": [float(v) for v in summary.mean_curve()],
        "accuracy": _stat_dict(summary.accuracy),
        "accuracy_ft": _stat_dict(summary.accuracy_ft),
    })


def summary_json(summary: RunSummary) -> str:
    return json.dumps(summary_dict(summary), indent=2, sort_keys=True) + "\n"
