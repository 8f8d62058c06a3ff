"""Small numeric kernel: seeded random streams, Dirichlet draws, SGD, clipping.

Random streams
--------------
Every stream is a Philox-4x64 counter-based generator whose 128-bit key is
``(seed, stream_id)``.  Child streams derive their id by hashing the parent id
together with a path of integer (or string) labels through
``numpy.random.SeedSequence``.  Because a client's stream depends only on the
run seed and the client's own path, results do not depend on the order in
which clients are processed.

Gamma variates (used for Dirichlet draws) come from
``Generator.standard_gamma``, which implements Marsaglia & Tsang's squeeze
method on top of ziggurat normals, with the ``U**(1/a)`` boost for shapes
below one.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericFault

_MASK64 = (1 << 64) - 1

# Relative slack so that clipping an already clipped vector is a no-op.
_CLIP_SLACK = 1e-12


def _label_to_int(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & _MASK64
    if isinstance(label, str):
        return zlib.crc32(label.encode("utf-8"))
    raise InvalidArgument(f"stream labels must be int or str, got {type(label).__name__}")


def derive_stream_id(parent: int, *path) -> int:
    entropy = [parent & _MASK64] + [_label_to_int(p) for p in path]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``."""

    __slots__ = ("seed", "stream_id", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self._gen = None

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            bitgen = np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64))
            self._gen = np.random.Generator(bitgen)
        return self._gen

    def child(self, *path) -> "RngStream":
        """Independent stream keyed by this stream's identity plus ``path``.

        Deriving a child never consumes draws from the parent.
        """
        return RngStream(self.seed, derive_stream_id(self.stream_id, *path))

    def derive_seed(self, *path) -> int:
        """A 63-bit integer seed derived from this stream and ``path``."""
        return derive_stream_id(self.stream_id ^ self.seed, *path) >> 1

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise InvalidArgument(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def dirichlet_sample(alpha: float, n: int, rng) -> np.ndarray:
    """Draw one point from the symmetric Dirichlet(alpha * 1_n).

    Sampled as normalized independent Gamma(alpha, 1) variates.  For very
    small ``alpha`` every gamma draw can underflow to zero; in that case the
    draw is repeated in log space so the result is still a valid simplex point.
    """
    if not np.isfinite(alpha) or alpha <= 0:
        raise InvalidArgument(f"alpha must be positive, got {alpha}")
    if n < 1:
        raise InvalidArgument(f"n must be at least 1, got {n}")
    if n == 1:
        return np.ones(1)
    gen = as_generator(rng)
    g = gen.standard_gamma(alpha, size=n)
    total = g.sum()
    if total > 0 and np.isfinite(total):
        p = g / total
    else:
        # log Gamma(a) = log Gamma(a + 1) + log(U) / a
        logs = np.log(gen.standard_gamma(alpha + 1.0, size=n)) + np.log(gen.random(n)) / alpha
        logs -= logs.max()
        p = np.exp(logs)
        p /= p.sum()
    return p


@dataclass
class SgdState:
    """Learning rate, momentum, weight decay and the running velocity."""

    lr: float
    momentum: float = 0.9
    weight_decay: float = 1e-4
    velocity: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidArgument(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.lr < 0:
            raise InvalidArgument(f"learning rate must be nonnegative, got {self.lr}")

    def reset(self):
        self.velocity = None


def sgd_step(params, grads, state: SgdState, mask=None) -> np.ndarray:
    """One momentum SGD step with decoupled-from-clipping L2 weight decay.

    ``v <- m*v + (g + wd*w)``, ``w <- w - lr*v``.  The velocity on ``state`` is
    replaced by the new one; ``params`` is not modified.  With a boolean
    ``mask`` only the selected coordinates move; the rest stay bitwise equal.
    """
    w = np.asarray(params, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if w.shape != g.shape:
        raise InvalidArgument(f"parameter shape {w.shape} does not match gradient shape {g.shape}")
    if state.velocity is not None and state.velocity.shape != w.shape:
        raise InvalidArgument(
            f"velocity shape {state.velocity.shape} does not match parameter shape {w.shape}"
        )
    if not np.isfinite(g).all():
        raise NumericFault("non-finite gradient passed to sgd_step")

    d = g + state.weight_decay * w if state.weight_decay else g.copy()
    if mask is not None:
        d = np.where(mask, d, 0.0)
    if state.velocity is None or state.momentum == 0.0:
        v = d
    else:
        v = state.momentum * state.velocity + d
    state.velocity = v
    if mask is None:
        return w - state.lr * v
    return np.where(mask, w - state.lr * v, w)


def global_norm(g) -> float:
    g = np.asarray(g, dtype=np.float64)
    return float(np.sqrt(np.dot(g.ravel(), g.ravel())))


def clip_global_norm(grads, max_norm: float = 20.0) -> np.ndarray:
    """Rescale ``grads`` so its L2 norm does not exceed ``max_norm``."""
    if not max_norm > 0:
        raise InvalidArgument(f"max_norm must be positive, got {max_norm}")
    g = np.asarray(grads, dtype=np.float64)
    norm = global_norm(g)
    if not np.isfinite(norm):
        raise NumericFault("non-finite gradient passed to clip_global_norm")
    if norm <= max_norm * (1.0 + _CLIP_SLACK):
        return g
    return g * (max_norm / norm)
