"""Trainable MLPs over flat parameter vectors, losses, and architecture specs."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgument
from .numcore import as_generator

log = logging.getLogger(__name__)

BODY = "BODY"
HEAD = "HEAD"
ALL = "ALL"
_TAGS = (BODY, HEAD)
_SELECTORS = (ALL, BODY, HEAD)

KL_EPS = 1e-12


def _check_selector(selector, allow_all=True) -> str:
    sel = str(selector).upper()
    allowed = _SELECTORS if allow_all else _TAGS
    if sel not in allowed:
        raise InvalidArgument(f"unknown selector {selector!r}; expected one of {allowed}")
    return sel


# ---------------------------------------------------------------------------
# parameter vectors


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    length: int
    tag: str


@dataclass
class ParamVector:
    """Flat float64 values with a table of named, tagged segments.

    Views produced by :func:`split_view` remember where each of their
    segments lives in the parent (``origin``) so they can be merged back.
    """

    values: np.ndarray
    segments: tuple
    origin: tuple | None = None
    parent_size: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise InvalidArgument("parameter values must be one-dimensional")
        self.segments = tuple(self.segments)
        pos = 0
        for seg in self.segments:
            if seg.offset != pos or seg.length < 0:
                raise InvalidArgument(f"segment {seg.name!r} is not contiguous at offset {pos}")
            if seg.tag not in _TAGS:
                raise InvalidArgument(f"segment {seg.name!r} has invalid tag {seg.tag!r}")
            pos += seg.length
        if pos != self.values.size:
            raise InvalidArgument(f"segments cover {pos} values but vector has {self.values.size}")

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)

    def with_values(self, values) -> "ParamVector":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise InvalidArgument(f"expected {self.values.shape} values, got {values.shape}")
        return ParamVector(values, self.segments, self.origin, self.parent_size)

    def copy(self) -> "ParamVector":
        return self.with_values(self.values.copy())

    def mask(self, selector) -> np.ndarray:
        sel = _check_selector(selector)
        m = np.zeros(self.values.size, dtype=bool)
        for seg in self.segments:
            if sel == ALL or seg.tag == sel:
                m[seg.offset : seg.offset + seg.length] = True
        return m

    def segment(self, name) -> np.ndarray:
        for seg in self.segments:
            if seg.name == name:
                return self.values[seg.offset : seg.offset + seg.length]
        raise KeyError(name)


def split_view(params: ParamVector, selector) -> ParamVector:
    """The sub-vector made of every segment carrying ``selector``'s tag."""
    sel = _check_selector(selector, allow_all=False)
    chosen = [s for s in params.segments if s.tag == sel]
    if not chosen:
        raise InvalidArgument(f"no segment is tagged {sel}")
    base = params.origin
    segs, origin, parts = [], [], []
    pos = 0
    for s in chosen:
        segs.append(Segment(s.name, pos, s.length, s.tag))
        origin.append(s.offset if base is None else base[params.segments.index(s)])
        parts.append(params.values[s.offset : s.offset + s.length])
        pos += s.length
    parent = params.values.size if params.parent_size is None else params.parent_size
    return ParamVector(np.concatenate(parts), segs, tuple(origin), parent)


def merge_views(*views: ParamVector) -> ParamVector:
    """Rebuild the parent vector from views that jointly cover it."""
    if not views:
        raise InvalidArgument("nothing to merge")
    size = views[0].parent_size
    if size is None or any(v.parent_size != size or v.origin is None for v in views):
        raise InvalidArgument("merge_views needs views taken from the same parent")
    placed = []
    for v in views:
        for seg, start in zip(v.segments, v.origin):
            placed.append((start, seg, v.values[seg.offset : seg.offset + seg.length]))
    placed.sort(key=lambda item: item[0])
    out = np.empty(size)
    segs = []
    pos = 0
    for start, seg, vals in placed:
        if start != pos:
            raise InvalidArgument(f"views leave a gap or overlap at offset {pos}")
        out[pos : pos + seg.length] = vals
        segs.append(Segment(seg.name, pos, seg.length, seg.tag))
        pos += seg.length
    if pos != size:
        raise InvalidArgument(f"views cover {pos} of {size} values")
    return ParamVector(out, segs)


# ---------------------------------------------------------------------------
# MLP


def mlp_layout(sizes) -> tuple:
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or min(sizes) < 1:
        raise InvalidArgument(f"layer sizes must have at least two positive entries, got {sizes}")
    segs = []
    pos = 0
    last = len(sizes) - 2
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        tag = HEAD if i == last else BODY
        segs.append(Segment(f"W{i}", pos, fan_in * fan_out, tag))
        pos += fan_in * fan_out
        segs.append(Segment(f"b{i}", pos, fan_out, tag))
        pos += fan_out
    return tuple(segs)


class Cache(NamedTuple):
    activations: list  # inputs to each linear layer
    logits: np.ndarray
    probs: np.ndarray
    values: np.ndarray  # parameters the pass was run with


class MlpModel:
    """ReLU MLP ``[d_in, h_1, ..., h_L, C]`` with a softmax output.

    ``sizes=[d, C]`` is multinomial logistic regression.  The last linear
    layer is tagged HEAD, everything before it BODY.
    """

    def __init__(self, sizes, params: ParamVector | None = None):
        self.sizes = tuple(int(s) for s in sizes)
        layout = mlp_layout(self.sizes)
        n = layout[-1].offset + layout[-1].length
        if params is None:
            params = ParamVector(np.zeros(n), layout)
        elif not isinstance(params, ParamVector):
            params = ParamVector(params, layout)
        if len(params) != n:
            raise InvalidArgument(f"MLP {self.sizes} needs {n} parameters, got {len(params)}")
        self.params = params
        self._slices = [
            (slice(w.offset, w.offset + w.length), (fi, fo), slice(b.offset, b.offset + b.length))
            for w, b, fi, fo in zip(layout[::2], layout[1::2], self.sizes[:-1], self.sizes[1:])
        ]

    @property
    def n_params(self) -> int:
        return len(self.params)

    @property
    def n_features(self) -> int:
        return self.sizes[0]

    @property
    def n_classes(self) -> int:
        return self.sizes[-1]

    @property
    def layout(self) -> tuple:
        return self.params.segments

    def with_values(self, values) -> "MlpModel":
        m = MlpModel.__new__(MlpModel)
        m.sizes = self.sizes
        m._slices = self._slices
        m.params = self.params.with_values(values)
        return m

    def initialized(self, rng) -> "MlpModel":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
        gen = as_generator(rng)
        values = np.empty(self.n_params)
        for wsl, (fan_in, _), bsl in self._slices:
            bound = 1.0 / np.sqrt(fan_in)
            values[wsl] = gen.uniform(-bound, bound, size=wsl.stop - wsl.start)
            values[bsl] = gen.uniform(-bound, bound, size=bsl.stop - bsl.start)
        return self.with_values(values)

    def layers(self, values=None):
        v = self.params.values if values is None else values
        return [(v[wsl].reshape(shape), v[bsl]) for wsl, shape, bsl in self._slices]

    def arch_spec(self, name="mlp") -> "ArchSpec":
        layers = []
        for w, b in zip(self.layout[::2], self.layout[1::2]):
            layers.append(ArchLayer("linear", w.length + b.length, w.tag))
        return ArchSpec(name, tuple(layers))

    def __repr__(self):
        return f"MlpModel(sizes={self.sizes})"


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def forward(model: MlpModel, batch, values=None) -> tuple:
    """Class probabilities for ``batch`` and the cache needed for backward.

    ``values`` overrides the model's own parameters (used by training loops).
    """
    v = model.params.values if values is None else values
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise InvalidArgument(f"batch shape {x.shape} does not match input dimension {model.n_features}")
    acts = [x]
    layers = model.layers(v)
    h = x
    for i, (w, b) in enumerate(layers):
        h = h @ w + b
        if i < len(layers) - 1:
            np.maximum(h, 0.0, out=h)
            acts.append(h)
    probs = softmax(h)
    return probs, Cache(acts, h, probs, v)


def backward_logits(model: MlpModel, cache: Cache, dlogits: np.ndarray) -> np.ndarray:
    """Gradient of the parameters given the gradient w.r.t. the logits."""
    grad = np.empty(model.n_params)
    layers = model.layers(cache.values)
    delta = dlogits
    for i in range(len(layers) - 1, -1, -1):
        wsl, _, bsl = model._slices[i]
        a = cache.activations[i]
        grad[wsl] = (a.T @ delta).ravel()
        grad[bsl] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ layers[i][0].T) * (a > 0)
    return grad


def _check_labels(labels, n_classes, n_rows) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (n_rows,):
        raise InvalidArgument(f"expected {n_rows} labels, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise InvalidArgument(f"labels must lie in [0, {n_classes})")
    return y.astype(np.intp, copy=False)


def ce_loss(cache: Cache, labels) -> float:
    y = _check_labels(labels, cache.logits.shape[1], cache.logits.shape[0])
    logp = log_softmax(cache.logits)
    return float(-logp[np.arange(y.size), y].mean())


def ce_dlogits(cache: Cache, labels) -> np.ndarray:
    y = _check_labels(labels, cache.logits.shape[1], cache.logits.shape[0])
    d = cache.probs.copy()
    d[np.arange(y.size), y] -= 1.0
    d /= y.size
    return d


def backward_ce(model: MlpModel, cache: Cache, labels) -> tuple:
    """Mean cross-entropy and its gradient as a :class:`ParamVector`."""
    loss = ce_loss(cache, labels)
    grad = backward_logits(model, cache, ce_dlogits(cache, labels))
    return loss, model.params.with_values(grad)


def ce_loss_grad(model: MlpModel, values, x, y) -> tuple:
    """Mean cross-entropy and flat gradient at ``values``."""
    _, cache = forward(model, x, values)
    return ce_loss(cache, y), backward_logits(model, cache, ce_dlogits(cache, y))


class KLResult(NamedTuple):
    value: float
    grad: np.ndarray
    clamped: bool


def kl_grad(student_probs, teacher_probs) -> KLResult:
    """Batch-mean KL(teacher || student) and its gradient w.r.t. the student logits.

    The teacher is a constant.  Student probabilities below 1e-12 where the
    teacher has mass are clamped for the value, and ``clamped`` is set.
    """
    s = np.asarray(student_probs, dtype=np.float64)
    t = np.asarray(teacher_probs, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 2:
        raise InvalidArgument(f"student {s.shape} and teacher {t.shape} must be equal 2-D shapes")
    n = s.shape[0]
    pos = t > 0
    clamped = bool(np.any(pos & (s < KL_EPS)))
    if clamped:
        log.warning("kl_grad: student probability below %g where teacher has mass; clamped", KL_EPS)
    ss = np.maximum(s, KL_EPS)
    terms = np.where(pos, t * (np.log(np.where(pos, t, 1.0)) - np.log(ss)), 0.0)
    value = float(terms.sum() / n) if n else 0.0
    grad = (s - t) / max(n, 1)
    return KLResult(value, grad, clamped)


# ---------------------------------------------------------------------------
# architecture specs


@dataclass(frozen=True)
class ArchLayer:
    kind: str
    params: int
    tag: str


@dataclass(frozen=True)
class ArchSpec:
    name: str
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        for layer in self.layers:
            if not isinstance(layer.params, int) or layer.params < 0:
                raise InvalidArgument(f"layer {layer.kind!r} has invalid parameter count {layer.params!r}")
            if layer.tag not in _TAGS:
                raise InvalidArgument(f"layer {layer.kind!r} has invalid split tag {layer.tag!r}")

    @property
    def total(self) -> int:
        return sum(layer.params for layer in self.layers)


def param_count(spec: ArchSpec, selector=ALL) -> int:
    sel = _check_selector(selector)
    return sum(layer.params for layer in spec.layers if sel == ALL or layer.tag == sel)


def parse_arch(text: str, source="<string>") -> ArchSpec:
    """Parse the key-value architecture format.

    ::

        name = mnist
        layer = conv2d 320 BODY
        layer = linear 1290 HEAD

    Blank lines and ``#`` comments are ignored.
    """
    name = None
    layers = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise InvalidArgument(f"{source}:{lineno}: expected 'key = value'")
        if key == "name":
            name = value
        elif key == "layer":
            parts = value.split()
            if len(parts) != 3:
                raise InvalidArgument(f"{source}:{lineno}: layer needs 'kind count tag'")
            kind, count, tag = parts
            try:
                n = int(count.replace(",", "").replace("_", ""))
            except ValueError:
                raise InvalidArgument(f"{source}:{lineno}: bad parameter count {count!r}") from None
            if n < 0:
                raise InvalidArgument(f"{source}:{lineno}: negative parameter count")
            if tag.upper() not in _TAGS:
                raise InvalidArgument(f"{source}:{lineno}: split tag must be BODY or HEAD")
            layers.append(ArchLayer(kind, n, tag.upper()))
        else:
            raise InvalidArgument(f"{source}:{lineno}: unknown key {key!r}")
    if name is None:
        raise InvalidArgument(f"{source}: missing 'name'")
    return ArchSpec(name, tuple(layers))


def format_arch(spec: ArchSpec) -> str:
    lines = [f"name = {spec.name}"]
    lines += [f"layer = {l.kind} {l.params} {l.tag}" for l in spec.layers]
    return "\n".join(lines) + "\n"


BUNDLED_ARCHS = ("femnist", "shakespeare", "sent140", "mnist", "cifar10")


def bundled_arch(name: str) -> ArchSpec:
    key = name.lower().replace("-", "")
    if key not in BUNDLED_ARCHS:
        raise InvalidArgument(f"no bundled architecture {name!r}; have {BUNDLED_ARCHS}")
    text = resources.files("fedsim").joinpath("archs", f"{key}.arch").read_text()
    return parse_arch(text, source=f"{key}.arch")


def load_arch(name_or_path) -> ArchSpec:
    """A bundled spec by name, or a spec file from disk."""
    if isinstance(name_or_path, ArchSpec):
        return name_or_path
    p = Path(name_or_path)
    if p.suffix or p.exists():
        return parse_arch(p.read_text(), source=str(p))
    return bundled_arch(str(name_or_path))
