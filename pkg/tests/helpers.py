"""Small federations for strategy-level tests."""
import numpy as np

from fedsim.data import ClientData, Dataset, generate_synthetic
from fedsim.engine import FederationConfig, build_clients, run_rounds
from fedsim.models import MlpModel
from fedsim.numcore import RngStream
from fedsim.strategies import Client, FedMe, MethodParams, make_strategy


def small_cfg(**kw):
    base = dict(clients=5, rounds=10, n_samples=2000, n_test=500, hidden=(16,), alpha_label=0.5)
    base.update(kw)
    return FederationConfig(**base)


def federate(cfg, seed=0, rounds=None):
    """Run ``cfg`` and return ``(strategy, clients, model)`` for inspection."""
    stream = RngStream(seed)
    clients, unlabeled, _ = build_clients(cfg, stream)
    model = MlpModel([clients[0].data.train.n_features, *cfg.hidden, clients[0].data.train.n_classes])
    init = model.initialized(stream.child("init")).params.values
    strat = make_strategy(cfg.method, model, cfg.local_opts(), cfg.params)
    rounds = cfg.rounds if rounds is None else rounds
    if isinstance(strat, FedMe):
        strat.setup(clients, init, stream.child("server"), rounds, unlabeled=unlabeled)
    else:
        strat.setup(clients, init, stream.child("server"), rounds)
    run_rounds(strat, model, clients, rounds)
    return strat, clients, model


def planted_clients(seed, n_per_group=4, n=300, groups=((0, 1, 2, 3, 4), (5, 6, 7, 8, 9))):
    """Clients drawn from disjoint label supports; returns (clients, truth)."""
    root = RngStream(seed)
    pool = generate_synthetic(rng=root.child("data"), n_samples=20_000)
    clients, truth = [], []
    cid = 0
    for g, labels in enumerate(groups):
        rows = np.flatnonzero(np.isin(pool.y, labels))
        for _ in range(n_per_group):
            pick = root.child("pick", cid).generator.choice(rows, size=n, replace=False)
            tr, va, te = pick[: n * 6 // 10], pick[n * 6 // 10 : n * 8 // 10], pick[n * 8 // 10 :]
            data = ClientData(pool.subset(tr), pool.subset(va), pool.subset(te))
            clients.append(Client(cid, data, root.child("client", cid), np.sort(tr)))
            truth.append(g)
            cid += 1
    return clients, np.array(truth), pool


def purity(labels, truth):
    labels, truth = np.asarray(labels), np.asarray(truth)
    hits = 0
    for j in np.unique(labels):
        members = truth[labels == j]
        hits += np.bincount(members).max()
    return hits / truth.size


def setup_strategy(method, clients, seed, hidden=(16,), rounds=20, opts=None, params=None, unlabeled=None):
    from fedsim.strategies import LocalOpts

    root = RngStream(seed)
    d = clients[0].data.train
    model = MlpModel([d.n_features, *hidden, d.n_classes])
    init = model.initialized(root.child("init")).params.values
    strat = make_strategy(method, model, opts or LocalOpts(), params or MethodParams())
    if isinstance(strat, FedMe):
        strat.setup(clients, init, root.child("server"), rounds, unlabeled=unlabeled)
    else:
        strat.setup(clients, init, root.child("server"), rounds)
    return strat, model
