"""Federated methods and non-federated baselines behind one round interface.

A round runs in three phases.  ``download`` builds each client's payload
from server state, ``client_update`` trains on one client (touching only
that client's private state), and ``aggregate`` folds the uploads back into
server state in ascending client order.  Client updates are independent, so
they may run concurrently.

Mini-batch order is a pure function of ``(client stream, round, epoch)``.
Two trainers that run on the same client in the same round therefore see
the same batches, which is what makes the reduction identities
(FedProx with mu=0 is FedAvg, Ditto with lambda=0 is Local-Only, ...) hold
bitwise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from .data import ClientData, Dataset
from .errors import InvalidArgument
from .models import BODY, HEAD, MlpModel, backward_logits, ce_dlogits, ce_loss, ce_loss_grad, forward
from .numcore import RngStream, SgdState, clip_global_norm, sgd_step

log = logging.getLogger(__name__)

FINE_TUNABLE = frozenset({"fedavg", "fedprox", "hypcluster", "fedme", "centralized"})


@dataclass
class LocalOpts:
    lr: float = 10**-2
    batch_size: int = 20
    epochs: int = 2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    max_grad_norm: float = 20.0

    def optimizer(self) -> SgdState:
        return SgdState(self.lr, self.momentum, self.weight_decay)


@dataclass
class MethodParams:
    """Method-specific hyperparameters.  Irrelevant entries are ignored."""

    mu: float = 0.001  # FedProx proximal weight
    k: int = 2  # HypCluster cluster count
    fml_beta: float = 0.5  # FML distillation weight for both models
    fedme_beta: float = 0.5  # FedMe mutual-learning weight
    fedme_distill: float = 0.5  # FedMe unlabeled-pool distillation weight (times beta)
    fedme_schedule: tuple | None = None  # rounds at which the cluster count grows
    fedme_unlabeled: int = 1000
    fedrep_head_epochs: int = 2
    fedrep_body_epochs: int = 2
    ditto_lambda: float = 0.75
    pfedme_lambda: float = 15.0
    pfedme_k: int = 5
    pfedme_inner_lr: float | None = None  # defaults to the outer learning rate
    fine_tune_epochs: int = 2
    shared: str | None = None  # override the shared part of LG-FedAvg/FedPer ("ALL" disables splitting)

    def validate(self, method: str):
        checks = {
            "fedprox": [("mu", self.mu >= 0)],
            "hypcluster": [("k", isinstance(self.k, int) and self.k >= 1)],
            "fml": [("fml_beta", 0 <= self.fml_beta <= 1)],
            "fedme": [
                ("fedme_beta", 0 <= self.fedme_beta <= 1),
                ("fedme_distill", self.fedme_distill >= 0),
                ("fedme_unlabeled", self.fedme_unlabeled >= 0),
            ],
            "fedrep": [
                ("fedrep_head_epochs", self.fedrep_head_epochs >= 0),
                ("fedrep_body_epochs", self.fedrep_body_epochs >= 0),
            ],
            "ditto": [("ditto_lambda", self.ditto_lambda >= 0)],
            "pfedme": [
                ("pfedme_lambda", self.pfedme_lambda >= 0),
                ("pfedme_k", isinstance(self.pfedme_k, int) and self.pfedme_k >= 1),
                ("pfedme_inner_lr", self.pfedme_inner_lr is None or self.pfedme_inner_lr >= 0),
            ],
        }
        for name, ok in checks.get(method, []):
            if not ok:
                raise InvalidArgument(f"hyperparameter {name}={getattr(self, name)!r} out of range for {method}")
        if self.fine_tune_epochs < 0:
            raise InvalidArgument("fine_tune_epochs must be nonnegative")

    @classmethod
    def names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class Client:
    cid: int
    data: ClientData
    rng: RngStream
    train_index: np.ndarray | None = None  # global indices of the train rows

    @property
    def n_train(self) -> int:
        return len(self.data.train)


@dataclass
class ClientUpdate:
    uploads: tuple
    eval_values: np.ndarray
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# training primitives


def epoch_order(rng: RngStream, round_idx: int, epoch: int, n: int) -> np.ndarray:
    return rng.child("epoch", round_idx, epoch).generator.permutation(n)


def batches(rng, round_idx, epoch, n, batch_size):
    order = epoch_order(rng, round_idx, epoch, n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def run_sgd(values, data: Dataset, grad_fn, opts: LocalOpts, rng, round_idx, epochs, epoch_offset=0, mask=None):
    """Mini-batch momentum SGD with gradient clipping.

    ``grad_fn(w, x, y) -> (loss, grad)``.  With ``mask`` only the selected
    coordinates are trained; the clipping norm is taken over them alone.
    Returns the new values and the mean training loss of each epoch.
    """
    w = np.array(values, dtype=np.float64)
    n = len(data)
    losses = []
    if n == 0:
        log.warning("client has no training data; skipping local update")
        return w, losses
    state = opts.optimizer()
    for e in range(epochs):
        total = 0.0
        for idx in batches(rng, round_idx, epoch_offset + e, n, opts.batch_size):
            loss, g = grad_fn(w, data.x[idx], data.y[idx])
            if mask is not None:
                g = np.where(mask, g, 0.0)
            g = clip_global_norm(g, opts.max_grad_norm)
            w = sgd_step(w, g, state, mask)
            total += loss * idx.size
        losses.append(total / n)
    return w, losses


def ce_grad_fn(model: MlpModel):
    def fn(w, x, y):
        return ce_loss_grad(model, w, x, y)

    return fn


def prox_grad_fn(model: MlpModel, anchor, weight: float):
    """CE plus ``weight/2 * ||w - anchor||^2``."""
    if weight == 0:
        return ce_grad_fn(model)
    anchor = np.asarray(anchor, dtype=np.float64)

    def fn(w, x, y):
        loss, g = ce_loss_grad(model, w, x, y)
        diff = w - anchor
        return loss + 0.5 * weight * float(diff @ diff), g + weight * diff

    return fn


def local_update_sgd(model: MlpModel, values, data: Dataset, opts: LocalOpts, rng, round_idx=0, epochs=None, mask=None):
    """Plain cross-entropy local training for ``epochs`` (default ``opts.epochs``)."""
    epochs = opts.epochs if epochs is None else epochs
    return run_sgd(values, data, ce_grad_fn(model), opts, rng, round_idx, epochs, mask=mask)


def fedprox_local(model, values, data, opts, rng, round_idx, mu, anchor):
    return run_sgd(values, data, prox_grad_fn(model, anchor, mu), opts, rng, round_idx, opts.epochs)


def aggregate_weighted(uploads) -> np.ndarray:
    """Sample-weighted mean of ``(params, n_i)`` pairs.

    Uploads are put in a canonical order first, so the result is bitwise
    independent of the order they arrive in.
    """
    items = [(np.asarray(p, dtype=np.float64), int(n)) for p, n in uploads]
    if not items:
        raise InvalidArgument("aggregate_weighted needs at least one upload")
    size = items[0][0].shape
    if any(p.shape != size for p, _ in items):
        raise InvalidArgument("uploads have different dimensions")
    total = sum(n for _, n in items)
    if total <= 0:
        raise InvalidArgument("total sample weight must be positive")
    items.sort(key=lambda item: (item[1], item[0].tobytes()))
    out = np.zeros(size)
    for p, n in items:
        out += (n / total) * p
    return out


def mutual_terms(cache, y, peer_probs, beta):
    """Logit gradient of ``(1-beta) CE + beta KL(peer || own)``."""
    d = ce_dlogits(cache, y)
    if beta == 0:
        return ce_loss(cache, y), d
    kl_d = (cache.probs - peer_probs) / y.size
    pos = peer_probs > 0
    kl = float(
        np.where(pos, peer_probs * (np.log(np.where(pos, peer_probs, 1.0)) - np.log(np.maximum(cache.probs, 1e-12))), 0.0).sum()
        / y.size
    )
    return (1 - beta) * ce_loss(cache, y) + beta * kl, (1 - beta) * d + beta * kl_d


def mutual_learning(model, w_a, w_b, data, opts, rng, round_idx, beta_a, beta_b, epochs=None):
    """Train two models on the same batches, each distilling the other's output.

    Model ``a`` minimizes ``(1-beta_a) CE + beta_a KL(p_b || p_a)`` and model
    ``b`` the symmetric loss; the peer's probabilities are held constant.
    """
    epochs = opts.epochs if epochs is None else epochs
    a = np.array(w_a, dtype=np.float64)
    b = np.array(w_b, dtype=np.float64)
    n = len(data)
    if n == 0:
        return a, b
    sa, sb = opts.optimizer(), opts.optimizer()
    for e in range(epochs):
        for idx in batches(rng, round_idx, e, n, opts.batch_size):
            x, y = data.x[idx], data.y[idx]
            pa, ca = forward(model, x, a)
            pb, cb = forward(model, x, b)
            _, da = mutual_terms(ca, y, pb, beta_a)
            _, db = mutual_terms(cb, y, pa, beta_b)
            ga = clip_global_norm(backward_logits(model, ca, da), opts.max_grad_norm)
            gb = clip_global_norm(backward_logits(model, cb, db), opts.max_grad_norm)
            a = sgd_step(a, ga, sa)
            b = sgd_step(b, gb, sb)
    return a, b


def distill(model, w, teacher, pool, opts, rng, round_idx, weight):
    """One pass over unlabeled ``pool`` minimizing ``weight * KL(teacher || own)``."""
    w = np.array(w, dtype=np.float64)
    if weight == 0 or len(pool) == 0:
        return w
    state = opts.optimizer()
    order = rng.child("unlabeled", round_idx).generator.permutation(len(pool))
    for start in range(0, len(pool), opts.batch_size):
        x = pool[order[start : start + opts.batch_size]]
        p, cache = forward(model, x, w)
        q, _ = forward(model, x, teacher)
        g = backward_logits(model, cache, weight * (p - q) / x.shape[0])
        w = sgd_step(w, clip_global_norm(g, opts.max_grad_norm), state)
    return w


def pfedme_prox(theta, anchor, grad_fn, lam, steps, lr, max_norm=20.0):
    """Approximate ``argmin_t f(t) + lam/2 ||t - anchor||^2`` by ``steps`` gradient steps from ``theta``."""
    t = np.array(theta, dtype=np.float64)
    for _ in range(steps):
        g = grad_fn(t) + lam * (t - anchor)
        t = t - lr * clip_global_norm(g, max_norm)
    return t


def pfedme_local(model, w, data, opts, rng, round_idx, lam, K, inner_lr=None):
    """Returns ``(w, theta)``: the uploaded local copy and the last personalized solution."""
    w = np.array(w, dtype=np.float64)
    theta = w.copy()
    inner_lr = opts.lr if inner_lr is None else inner_lr
    n = len(data)
    for e in range(opts.epochs):
        for idx in batches(rng, round_idx, e, n, opts.batch_size):
            x, y = data.x[idx], data.y[idx]
            theta = pfedme_prox(
                w, w, lambda t: ce_loss_grad(model, t, x, y)[1], lam, K, inner_lr, opts.max_grad_norm
            )
            w = w - opts.lr * lam * (w - theta)
    return w, theta


def fedrep_local(model, values, data, opts, rng, round_idx, head_epochs, body_epochs):
    """Train the head with the body frozen, then the body with the head frozen."""
    head = model.params.mask(HEAD)
    fn = ce_grad_fn(model)
    w, l1 = run_sgd(values, data, fn, opts, rng, round_idx, head_epochs, 0, mask=head)
    w, l2 = run_sgd(w, data, fn, opts, rng, round_idx, body_epochs, head_epochs, mask=~head)
    return w, l1 + l2


def fine_tune(model, values, client: Client, opts: LocalOpts, epochs: int, round_idx: int):
    """Local cross-entropy training applied to a finished model, per client."""
    if epochs == 0:
        return np.array(values, dtype=np.float64)
    w, _ = local_update_sgd(model, values, client.data.train, opts, client.rng, round_idx, epochs)
    return w


def val_loss(model, values, client: Client) -> float:
    ds = client.data.val if len(client.data.val) else client.data.train
    if len(ds) == 0:
        return 0.0
    _, cache = forward(model, ds.x, values)
    return ce_loss(cache, ds.y)


def kmeans(points, k, rng, iters=100):
    """Lloyd's algorithm with k-means++ seeding; returns integer labels."""
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    k = min(k, n)
    gen = rng.generator
    centers = [x[gen.integers(n)]]
    for _ in range(1, k):
        d2 = np.min([((x - c) ** 2).sum(axis=1) for c in centers], axis=0)
        total = d2.sum()
        nxt = gen.choice(n, p=d2 / total) if total > 0 else gen.integers(n)
        centers.append(x[nxt])
    centers = np.array(centers)
    labels = np.full(n, -1)
    for _ in range(iters):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = d2.argmin(axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            if np.any(labels == j):
                centers[j] = x[labels == j].mean(axis=0)
    return labels


# ---------------------------------------------------------------------------
# strategies


class Strategy:
    """Base round protocol.  Subclasses override the three phases."""

    name = ""

    def __init__(self, model: MlpModel, opts: LocalOpts, params: MethodParams):
        self.model = model
        self.opts = opts
        self.hp = params
        self.hp.validate(self.name)

    @property
    def fine_tunable(self) -> bool:
        return self.name in FINE_TUNABLE

    def setup(self, clients, init, server_rng: RngStream, rounds: int):
        self.clients = {c.cid: c for c in clients}
        self.init = np.array(init, dtype=np.float64)
        self.server_rng = server_rng
        self.rounds = rounds

    def download(self, t, cid) -> tuple:
        return ()

    def client_update(self, t, client: Client, payload) -> ClientUpdate:
        raise NotImplementedError

    def aggregate(self, t, updates: dict):
        pass

    def final_models(self) -> dict:
        raise NotImplementedError

    def _weighted(self, updates, pick=lambda u: u.uploads[0]):
        return aggregate_weighted([(pick(updates[c]), self.clients[c].n_train) for c in sorted(updates)])


class FedAvg(Strategy):
    name = "fedavg"

    def setup(self, clients, init, server_rng, rounds):
        super().setup(clients, init, server_rng, rounds)
        self.global_w = self.init.copy()

    def download(self, t, cid):
        return (self.global_w,)

    def train(self, t, client, start):
        w, _ = local_update_sgd(self.model, start, client.data.train, self.opts, client.rng, t)
        return w

    def client_update(self, t, client, payload):
        w = self.train(t, client, payload[0])
        return ClientUpdate((w,), w)

    def aggregate(self, t, updates):
        self.global_w = self._weighted(updates)

    def final_models(self):
        return {cid: self.global_w for cid in self.clients}


class FedProx(FedAvg):
    name = "fedprox"

    def train(self, t, client, start):
        w, _ = fedprox_local(self.model, start, client.data.train, self.opts, client.rng, t, self.hp.mu, start)
        return w


class HypCluster(Strategy):
    """k cluster models; every client adopts the one with lowest validation loss."""

    name = "hypcluster"

    def setup(self, clients, init, server_rng, rounds):
        super().setup(clients, init, server_rng, rounds)
        k = self.hp.k
        self.models = [self.init.copy()]
        for j in range(1, k):
            self.models.append(self.model.initialized(server_rng.child("cluster_init", j)).params.values.copy())
        self.assign = {}

    def download(self, t, cid):
        return tuple(self.models)

    def client_update(self, t, client, payload):
        j = int(np.argmin([val_loss(self.model, m, client) for m in payload]))
        self.assign[client.cid] = j
        w, _ = local_update_sgd(self.model, payload[j], client.data.train, self.opts, client.rng, t)
        return ClientUpdate((w,), w, {"cluster": j})

    def aggregate(self, t, updates):
        for j in range(len(self.models)):
            members = {c: u for c, u in updates.items() if u.extra["cluster"] == j}
            if members:
                self.models[j] = self._weighted(members)

    def final_models(self):
        out = {}
        for cid, client in self.clients.items():
            if cid not in self.assign:
                losses = [val_loss(self.model, m, client) for m in self.models]
                self.assign[cid] = int(np.argmin(losses))
            out[cid] = self.models[self.assign[cid]]
        return out


class FML(Strategy):
    """Personalized model and shared meme model trained by mutual learning."""

    name = "fml"

    def setup(self, clients, init, server_rng, rounds):
        super().setup(clients, init, server_rng, rounds)
        self.global_w = self.init.copy()
        self.personal = {c.cid: self.init.copy() for c in clients}

    def download(self, t, cid):
        return (self.global_w,)

    def client_update(self, t, client, payload):
        beta = self.hp.fml_beta
        p, m = mutual_learning(
            self.model, self.personal[client.cid], payload[0], client.data.train, self.opts, client.rng, t, beta, beta
        )
        self.personal[client.cid] = p
        return ClientUpdate((m,), p)

    def aggregate(self, t, updates):
        self.global_w = self._weighted(updates)

    def final_models(self):
        return dict(self.personal)


class FedMe(Strategy):
    """Clustered mutual learning with peer-model exchange.

    Each round a client downloads its cluster's average model, one peer's
    personalized model, and its own stored personalized model.  It starts
    from the cluster model and trains it jointly with the peer copy by mutual
    learning; it then distills its previous personalized model's outputs on
    the shared unlabeled pool into its new model.  It uploads its new model
    and the trained peer copy.  The server stores each client's model
    averaged with the copies other clients trained, re-averages cluster
    models from the clients' own uploads, re-runs k-means over those own
    uploads, and pairs every client with its nearest same-cluster peer.
    """

    name = "fedme"

    def setup(self, clients, init, server_rng, rounds, unlabeled=None):
        super().setup(clients, init, server_rng, rounds)
        schedule = self.hp.fedme_schedule
        if schedule is None:
            schedule = default_fedme_schedule(rounds)
        schedule = tuple(int(s) for s in schedule)
        if any(b <= a for a, b in zip(schedule, schedule[1:])) or any(s < 1 or s >= max(rounds, 1) for s in schedule):
            if rounds > 0:
                raise InvalidArgument(f"FedMe schedule {schedule} must be strictly increasing and inside (0, {rounds})")
        self.schedule = schedule
        self.unlabeled = np.zeros((0, self.model.n_features)) if unlabeled is None else unlabeled
        ids = sorted(self.clients)
        self.stored = {c: self.init.copy() for c in ids}
        self.k = 1
        self.labels = {c: 0 for c in ids}
        self.cluster_models = {0: self.init.copy()}
        self.peer = self._pick_peers()

    def _pick_peers(self):
        ids = sorted(self.clients)
        if len(ids) == 1:
            return {ids[0]: ids[0]}
        # distances between the clients' latest own uploads (stored models before round 0)
        source = getattr(self, "own", None) or self.stored
        flat = np.array([source[c] for c in ids])
        d2 = ((flat[:, None, :] - flat[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        peers = {}
        for i, c in enumerate(ids):
            same = [j for j, o in enumerate(ids) if o != c and self.labels[o] == self.labels[c]]
            pool = same if same else [j for j in range(len(ids)) if j != i]
            peers[c] = ids[min(pool, key=lambda j: (d2[i, j], j))]
        return peers

    def download(self, t, cid):
        return (self.cluster_models[self.labels[cid]], self.stored[self.peer[cid]], self.stored[cid])

    def client_update(self, t, client, payload):
        cluster_w, peer_w, own_prev = payload
        beta = self.hp.fedme_beta
        own, peer = mutual_learning(
            self.model, cluster_w, peer_w, client.data.train, self.opts, client.rng, t, beta, beta
        )
        own = distill(self.model, own, own_prev, self.unlabeled, self.opts, client.rng, t, beta * self.hp.fedme_distill)
        return ClientUpdate((own, peer), own, {"peer": self.peer[client.cid]})

    def aggregate(self, t, updates):
        ids = sorted(updates)
        copies = {c: [] for c in ids}
        for c in ids:
            copies[updates[c].extra["peer"]].append(updates[c].uploads[1])
        for c in ids:
            own = updates[c].uploads[0]
            if copies[c]:
                self.stored[c] = (own + np.sum(copies[c], axis=0)) / (1 + len(copies[c]))
            else:
                self.stored[c] = own
        self.own = {c: updates[c].uploads[0] for c in ids}
        if t + 1 in self.schedule:
            self.k += 1
        if self.k > 1:
            flat = np.array([self.own[c] for c in ids])
            lab = kmeans(flat, self.k, self.server_rng.child("kmeans", t))
            self.labels = {c: int(l) for c, l in zip(ids, lab)}
        self.cluster_models = {}
        for j in sorted(set(self.labels.values())):
            members = {c: updates[c] for c in ids if self.labels[c] == j}
            self.cluster_models[j] = self._weighted(members)
        self.peer = self._pick_peers()

    def final_models(self):
        own = getattr(self, "own", None)
        if own is None:
            return {c: self.cluster_models[self.labels[c]] for c in self.clients}
        return dict(own)


def default_fedme_schedule(rounds: int) -> tuple:
    """Cluster-growth rounds at 1/4, 1/2 and 3/4 of training."""
    marks = sorted({int(rounds * f) for f in (0.25, 0.5, 0.75)})
    return tuple(m for m in marks if 0 < m < rounds)


class SplitModel(Strategy):
    """LG-FedAvg / FedPer: the server owns one part of the model, clients the rest."""

    shared_tag = BODY

    def setup(self, clients, init, server_rng, rounds):
        super().setup(clients, init, server_rng, rounds)
        tag = self.hp.shared or self.shared_tag
        self.shared = self.model.params.mask(tag)
        self.global_w = self.init.copy()
        self.local = {c.cid: self.init.copy() for c in clients}

    def download(self, t, cid):
        return (self.global_w[self.shared],)

    def assemble(self, cid, shared_values):
        w = self.local[cid].copy()
        w[self.shared] = shared_values
        return w

    def train(self, t, client, w):
        w, _ = local_update_sgd(self.model, w, client.data.train, self.opts, client.rng, t)
        return w

    def client_update(self, t, client, payload):
        w = self.train(t, client, self.assemble(client.cid, payload[0]))
        self.local[client.cid] = w
        return ClientUpdate((w[self.shared],), w)

    def aggregate(self, t, updates):
        self.global_w = self.global_w.copy()
        self.global_w[self.shared] = self._weighted(updates)

    def final_models(self):
        return {cid: self.assemble(cid, self.global_w[self.shared]) for cid in self.clients}


class LGFedAvg(SplitModel):
    name = "lg_fedavg"
    shared_tag = HEAD


class FedPer(SplitModel):
    name = "fedper"
    shared_tag = BODY


class FedRep(SplitModel):
    name = "fedrep"
    shared_tag = BODY

    def train(self, t, client, w):
        w, _ = fedrep_local(
            self.model, w, client.data.train, self.opts, client.rng, t,
            self.hp.fedrep_head_epochs, self.hp.fedrep_body_epochs,
        )
        return w


class Ditto(Strategy):
    name = "ditto"

    def setup(self, clients, init, server_rng, rounds):
        super().setup(clients, init, server_rng, rounds)
        self.global_w = self.init.copy()
        self.personal = {c.cid: self.init.copy() for c in clients}

    def download(self, t, cid):
        return (self.global_w,)

    def client_update(self, t, client, payload):
        w_g = payload[0]
        data, rng = client.data.train, client.rng
        w, _ = local_update_sgd(self.model, w_g, data, self.opts, rng, t)
        fn = prox_grad_fn(self.model, w_g, self.hp.ditto_lambda)
        v, _ = run_sgd(self.personal[client.cid], data, fn, self.opts, rng, t, self.opts.epochs)
        self.personal[client.cid] = v
        return ClientUpdate((w,), v)

    def aggregate(self, t, updates):
        self.global_w = self._weighted(updates)

    def final_models(self):
        return dict(self.personal)


class PFedMe(Strategy):
    name = "pfedme"

    def setup(self, clients, init, server_rng, rounds):
        super().setup(clients, init, server_rng, rounds)
        self.global_w = self.init.copy()
        self.personal = {c.cid: self.init.copy() for c in clients}

    def download(self, t, cid):
        return (self.global_w,)

    def client_update(self, t, client, payload):
        w, theta = pfedme_local(
            self.model, payload[0], client.data.train, self.opts, client.rng, t,
            self.hp.pfedme_lambda, self.hp.pfedme_k, self.hp.pfedme_inner_lr,
        )
        self.personal[client.cid] = theta
        return ClientUpdate((w,), theta)

    def aggregate(self, t, updates):
        self.global_w = self._weighted(updates)

    def final_models(self):
        return dict(self.personal)


class LocalOnly(Strategy):
    name = "local_only"

    def setup(self, clients, init, server_rng, rounds):
        super().setup(clients, init, server_rng, rounds)
        self.personal = {c.cid: self.init.copy() for c in clients}

    def client_update(self, t, client, payload):
        w, _ = local_update_sgd(self.model, self.personal[client.cid], client.data.train, self.opts, client.rng, t)
        self.personal[client.cid] = w
        return ClientUpdate((), w)

    def final_models(self):
        return dict(self.personal)


class Centralized(Strategy):
    """One model trained on the union of all clients' training data.

    Rows are pooled in ascending global index order and batched with the
    stream of client 0, so the model does not depend on how the data was
    divided and a single-client federation reproduces it exactly.
    """

    name = "centralized"
    pooled_round = True

    def setup(self, clients, init, server_rng, rounds):
        super().setup(clients, init, server_rng, rounds)
        ids = sorted(self.clients)
        parts = [self.clients[c].data.train for c in ids]
        index = [self.clients[c].train_index for c in ids]
        pool = Dataset.concat(parts, parts[0].n_classes)
        if all(i is not None for i in index):
            order = np.argsort(np.concatenate(index), kind="stable")
            pool = pool.subset(order)
        self.pool = pool
        self.pool_rng = self.clients[ids[0]].rng
        self.w = self.init.copy()

    def train_round(self, t):
        self.w, _ = local_update_sgd(self.model, self.w, self.pool, self.opts, self.pool_rng, t)

    def client_update(self, t, client, payload):
        return ClientUpdate((), self.w)

    def final_models(self):
        return {cid: self.w for cid in self.clients}


STRATEGIES = {
    cls.name: cls
    for cls in (FedAvg, FedProx, HypCluster, FML, FedMe, LGFedAvg, FedPer, FedRep, Ditto, PFedMe, LocalOnly, Centralized)
}


def make_strategy(method: str, model: MlpModel, opts: LocalOpts, params: MethodParams | None = None) -> Strategy:
    key = method.lower().replace("-", "_")
    if key not in STRATEGIES:
        raise InvalidArgument(f"unknown method {method!r}; choose from {sorted(STRATEGIES)}")
    return STRATEGIES[key](model, opts, params or MethodParams())
