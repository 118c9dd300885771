"""Dense-network training engine for online learning under pipelined staleness.

Parameters are stored as one flat vector per pipeline stage, so a stored
weight version is a single array copy and gradient compensation is plain
elementwise arithmetic.  Layer matrices are views into those vectors.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ferret.profile import LayerProfile, ModelProfile, PartitionScheme
from ferret.sim import SimTrace
from ferret.stream import SkipResult, Stream

CKPT_HEADER = "ferret-ckpt v1"
ACTIVATIONS = ("relu", "identity")
POLICIES = ("none", "step", "gap", "fisher", "iter_fisher")
LEARNING_RATE = 1e-3
LAMBDA0 = 0.2
NU = 2e-6
ALPHA = 0.99
ETA_LAMBDA = 1e-3
GAP_FLOOR = 1e-12
REPLAY_CAPACITY = 5000


class ShapeError(ValueError):
    """Raised when arrays do not match the network's dimensions."""


class DenseNet:
    """Fully connected network ending in softmax cross-entropy.

    ``sizes`` lists layer widths from input to logits; hidden layers use ReLU
    and the output layer is linear.  ``stage_map[k]`` is the pipeline stage of
    layer ``k``.
    """

    def __init__(self, sizes: Sequence[int], stage_map: Sequence[int] | None = None,
                 acts: Sequence[str] | None = None):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ShapeError("need at least an input and an output width, all >= 1")
        n_layers = len(sizes) - 1
        acts = tuple(acts) if acts is not None else ("relu",) * (n_layers - 1) + ("identity",)
        stage_map = tuple(int(s) for s in stage_map) if stage_map is not None else (0,) * n_layers
        if len(acts) != n_layers or any(a not in ACTIVATIONS for a in acts):
            raise ShapeError(f"need {n_layers} activations from {ACTIVATIONS}")
        if len(stage_map) != n_layers or stage_map[0] != 0 or any(
            b - a not in (0, 1) for a, b in zip(stage_map, stage_map[1:])
        ):
            raise ShapeError("stage map must start at 0 and increase in unit steps")
        self.sizes, self.acts, self.stage_map = sizes, acts, stage_map
        self.n_stages = stage_map[-1] + 1
        self.stage_layers = [[k for k in range(n_layers) if stage_map[k] == i] for i in range(self.n_stages)]
        # (offset, n_in, n_out) of each layer inside its stage vector
        self._slots = {}
        lengths = [0] * self.n_stages
        for k in range(n_layers):
            i = stage_map[k]
            self._slots[k] = (lengths[i], sizes[k], sizes[k + 1])
            lengths[i] += sizes[k] * sizes[k + 1] + sizes[k + 1]
        self.flat = [np.zeros(n) for n in lengths]

    @classmethod
    def init(cls, sizes, seed: int = 0, stage_map=None, acts=None) -> "DenseNet":
        """He-initialized weights and zero biases."""
        net = cls(sizes, stage_map, acts)
        rng = np.random.default_rng(seed)
        for k in range(net.n_layers):
            W, _ = net.layer(k)
            W[...] = rng.normal(0.0, math.sqrt(2.0 / W.shape[0]), size=W.shape)
        return net

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def with_partition(self, L: PartitionScheme) -> "DenseNet":
        """Same weights regrouped into the stages of ``L``."""
        if L.bounds[-1] != self.n_layers:
            raise ShapeError(f"partition covers {L.bounds[-1]} layers, net has {self.n_layers}")
        out = DenseNet(self.sizes, tuple(L.stage_of(k) for k in range(self.n_layers)), self.acts)
        for k in range(self.n_layers):
            for dst, src in zip(out.layer(k), self.layer(k)):
                dst[...] = src
        return out

    def layer(self, k: int, vec: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Views of layer ``k``'s weight and bias inside ``vec`` (default: current)."""
        off, n_in, n_out = self._slots[k]
        if vec is None:
            vec = self.flat[self.stage_map[k]]
        W = vec[off : off + n_in * n_out].reshape(n_in, n_out)
        b = vec[off + n_in * n_out : off + n_in * n_out + n_out]
        return W, b

    def params(self) -> list[np.ndarray]:
        out = []
        for k in range(self.n_layers):
            out.extend(self.layer(k))
        return out

    def copy(self) -> "DenseNet":
        out = DenseNet(self.sizes, self.stage_map, self.acts)
        out.flat = [v.copy() for v in self.flat]
        return out

    def logits(self, X: np.ndarray, vecs: Sequence[np.ndarray] | None = None) -> np.ndarray:
        h = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if h.shape[1] != self.sizes[0]:
            raise ShapeError(f"expected {self.sizes[0]} features, got {h.shape[1]}")
        vecs = self.flat if vecs is None else vecs
        for i in range(self.n_stages):
            h, _ = forward_stage(self, i, vecs[i], h)
        return h

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)

    def profile(self, unit_time: float = 1e-3) -> ModelProfile:
        """Per-layer costs: time proportional to multiply-adds, memory in scalars."""
        layers = []
        for k in range(self.n_layers):
            n_in, n_out = self.sizes[k], self.sizes[k + 1]
            t_f = unit_time * n_in * n_out / 1000.0
            layers.append(LayerProfile(t_f, 2.0 * t_f, n_in * n_out + n_out, n_out))
        return ModelProfile(tuple(layers))


def _layer_forward(W, b, act, h):
    z = h @ W + b
    return (np.maximum(z, 0.0) if act == "relu" else z), z


def forward_stage(net: DenseNet, i: int, vec: np.ndarray, h: np.ndarray):
    """Run stage ``i`` with parameters ``vec``; the cache feeds ``backward_stage``."""
    cache = []
    for k in net.stage_layers[i]:
        W, b = net.layer(k, vec)
        out, z = _layer_forward(W, b, net.acts[k], h)
        cache.append((h, z))
        h = out
    return h, cache


def backward_stage(net: DenseNet, i: int, vec: np.ndarray, cache, dout: np.ndarray):
    """Gradient of stage ``i``'s parameters (flat) and of its input."""
    grad = np.zeros_like(vec)
    for k, (h, z) in zip(reversed(net.stage_layers[i]), reversed(cache)):
        W, _ = net.layer(k, vec)
        gW, gb = net.layer(k, grad)
        dz = dout * (z > 0) if net.acts[k] == "relu" else dout
        gW[...] = h.T @ dz
        gb[...] = dz.sum(axis=0)
        dout = dz @ W.T
    return grad, dout


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    rows = np.arange(n)
    loss = -float(logp[rows, labels].mean())
    d = np.exp(logp)
    d[rows, labels] -= 1.0
    return loss, d / n


def _check_batch(net: DenseNet, batch) -> tuple[np.ndarray, np.ndarray]:
    X, y = batch
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if X.shape[0] == 0:
        raise ShapeError("batch is empty")
    if X.shape[1] != net.sizes[0]:
        raise ShapeError(f"expected {net.sizes[0]} features, got {X.shape[1]}")
    if y.shape != (X.shape[0],):
        raise ShapeError("one label per row required")
    if y.min() < 0 or y.max() >= net.sizes[-1]:
        raise ShapeError(f"labels must lie in [0, {net.sizes[-1]})")
    return X, y


def stage_gradients(net: DenseNet, batch, vecs: Sequence[np.ndarray] | None = None):
    """Loss and per-stage flat gradients, evaluated at ``vecs`` (default: current)."""
    X, y = _check_batch(net, batch)
    vecs = net.flat if vecs is None else vecs
    caches = []
    h = X
    for i in range(net.n_stages):
        h, c = forward_stage(net, i, vecs[i], h)
        caches.append(c)
    loss, d = softmax_xent(h, y)
    grads = [None] * net.n_stages
    for i in reversed(range(net.n_stages)):
        grads[i], d = backward_stage(net, i, vecs[i], caches[i], d)
    return loss, grads


def forward_backward(net: DenseNet, batch) -> tuple[float, list[np.ndarray]]:
    """Mean softmax cross-entropy and its gradient, one array per ``net.params()`` entry."""
    loss, grads = stage_gradients(net, batch)
    out = []
    for k in range(net.n_layers):
        out.extend(a.copy() for a in net.layer(k, grads[net.stage_map[k]]))
    return loss, out


def loss_of(net: DenseNet, batch) -> float:
    X, y = _check_batch(net, batch)
    return softmax_xent(net.logits(X), y)[0]


# gradient compensation


def _same_shape(*arrays) -> None:
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ShapeError(f"shape mismatch: {shape} vs {np.shape(a)}")


def compensate_fisher(g, theta_to, theta_from, lam):
    """First-order correction of ``g`` from ``theta_from`` to ``theta_to``.

    The Hessian is replaced by the diagonal empirical Fisher ``lam * g * g``.
    """
    _same_shape(g, theta_to, theta_from)
    if np.ndim(lam):
        _same_shape(g, lam)
    g = np.asarray(g, dtype=np.float64)
    return g + lam * g * g * (np.asarray(theta_to) - np.asarray(theta_from))


@dataclass
class CompensatorState:
    lam: np.ndarray
    v_r: np.ndarray | None = None
    v_a: np.ndarray | None = None
    alpha: float = ALPHA
    eta_lambda: float = ETA_LAMBDA
    nu: float = NU

    def __post_init__(self):
        if self.eta_lambda < 0:
            raise ValueError("eta_lambda must be >= 0")
        if self.eta_lambda > 0:
            if self.v_r is None:
                self.v_r = np.zeros_like(self.lam)
            if self.v_a is None:
                self.v_a = np.zeros_like(self.lam)

    @classmethod
    def fresh(cls, size: int, lam0: float = LAMBDA0, **kw) -> "CompensatorState":
        return cls(np.full(size, lam0, dtype=np.float64), **kw)

    def copy(self) -> "CompensatorState":
        cp = lambda a: None if a is None else a.copy()  # noqa: E731
        return CompensatorState(self.lam.copy(), cp(self.v_r), cp(self.v_a), self.alpha, self.eta_lambda, self.nu)


def lambda_objective(lam, dv_r, v_a, nu) -> float:
    """Squared mismatch between observed and predicted gradient drift, plus ridge."""
    return float(np.sum((dv_r - lam * v_a) ** 2) + nu * np.sum(lam * lam))


def lambda_step(lam, dv_r, v_a, eta, nu):
    """One gradient step on ``lambda_objective``."""
    return lam - eta * (-2.0 * v_a * (dv_r - lam * v_a) + 2.0 * nu * lam)


def compensate_iterative(g, chain: Sequence[np.ndarray], state: CompensatorState):
    """Carry ``g`` from ``chain[0]`` to ``chain[-1]`` one version at a time.

    With ``eta_lambda > 0`` the per-parameter ``lam`` first takes one step
    toward predicting how gradients drift, using moving averages of the
    gradient and of ``g * g * (chain[1] - chain[0])``.  Returns the corrected
    gradient and the updated state; the input state is not modified.
    """
    if len(chain) < 1:
        raise ValueError("version chain must hold at least the read version")
    g = np.asarray(g, dtype=np.float64)
    for theta in chain:
        _same_shape(g, theta)
    state = state.copy()
    if state.eta_lambda > 0:
        a = state.alpha
        dv_r = (1.0 - a) * (g - state.v_r)
        state.lam = lambda_step(state.lam, dv_r, state.v_a, state.eta_lambda, state.nu)
        step = chain[1] - chain[0] if len(chain) > 1 else np.zeros_like(g)
        state.v_r = a * state.v_r + (1.0 - a) * g
        state.v_a = a * state.v_a + (1.0 - a) * g * g * step
    for older, newer in zip(chain, chain[1:]):
        g = compensate_fisher(g, newer, older, state.lam)
    return g, state


def compensate_step_aware(g, tau: int):
    if tau < 0:
        raise ValueError("staleness must be >= 0")
    return np.asarray(g, dtype=np.float64) / (1.0 + tau)


def compensate_gap_aware(g, theta_now, theta_read, running_mean_gap):
    """Shrink each coordinate by how far it moved relative to its usual step."""
    _same_shape(g, theta_now, theta_read)
    gap = np.abs(np.asarray(theta_now) - np.asarray(theta_read))
    mean_gap = np.maximum(running_mean_gap, GAP_FLOOR)
    return np.asarray(g, dtype=np.float64) / (1.0 + gap / mean_gap)


class VersionRing:
    """The most recent ``depth`` parameter versions of one stage, by version number."""

    def __init__(self, depth: int, initial: np.ndarray):
        if depth < 1:
            raise ValueError("ring depth must be >= 1")
        self.depth = depth
        self._store = {0: initial.copy()}
        self.latest = 0

    def push(self, version: int, theta: np.ndarray) -> None:
        if version != self.latest + 1:
            raise ValueError(f"version {version} does not follow {self.latest}")
        self._store[version] = theta.copy()
        self.latest = version
        self._store.pop(version - self.depth, None)

    def __getitem__(self, version: int) -> np.ndarray:
        try:
            return self._store[version]
        except KeyError:
            raise KeyError(f"version {version} is older than the ring depth {self.depth}") from None

    def chain(self, start: int) -> list[np.ndarray]:
        return [self[v] for v in range(start, self.latest + 1)]


class Compensator:
    """Staleness compensation policy for one stage, with its running state."""

    def __init__(self, policy: str, size: int, **state_kw):
        if policy not in POLICIES:
            raise ValueError(f"unknown compensation policy {policy!r}; expected one of {POLICIES}")
        self.policy = policy
        self.state = CompensatorState.fresh(size, **state_kw)
        self._gap_sum = np.zeros(size)
        self._gap_n = 0

    def observe_step(self, before: np.ndarray, after: np.ndarray) -> None:
        """Record one applied update, for the gap policy's typical step size."""
        if self.policy == "gap":
            self._gap_sum += np.abs(after - before)
            self._gap_n += 1

    def __call__(self, g: np.ndarray, chain: list[np.ndarray]) -> np.ndarray:
        tau = len(chain) - 1
        if tau == 0 or self.policy == "none":
            return g
        if self.policy == "step":
            return compensate_step_aware(g, tau)
        if self.policy == "gap":
            mean = self._gap_sum / max(self._gap_n, 1)
            return compensate_gap_aware(g, chain[-1], chain[0], mean)
        if self.policy == "fisher":
            return compensate_fisher(g, chain[-1], chain[0], self.state.lam)
        g, self.state = compensate_iterative(g, chain, self.state)
        return g


# online training


class RunningNormalizer:
    """Per-feature standardization with running mean and variance."""

    def __init__(self, n_features: int):
        self.n = 0
        self.mean = np.zeros(n_features)
        self.m2 = np.zeros(n_features)

    def update(self, x: np.ndarray) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.n < 2:
            return x - self.mean
        std = np.sqrt(self.m2 / (self.n - 1))
        return (x - self.mean) / np.where(std > 1e-8, std, 1.0)


class ReplayBuffer:
    """Uniform reservoir of past (features, label) pairs."""

    def __init__(self, capacity: int, n_features: int, seed: int = 0):
        self.capacity = capacity
        self.X = np.zeros((capacity, n_features))
        self.y = np.zeros(capacity, dtype=np.int64)
        self.seen = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return min(self.seen, self.capacity)

    def add(self, x: np.ndarray, y: int) -> None:
        if self.seen < self.capacity:
            k = self.seen
        else:
            k = int(self.rng.integers(0, self.seen + 1))
        self.seen += 1
        if k < self.capacity:
            self.X[k], self.y[k] = x, y

    def sample(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        idx = self.rng.integers(0, len(self), size=n)
        return self.X[idx], self.y[idx]


@dataclass
class OnlineResult:
    correct: np.ndarray
    net: DenseNet
    n_updates: int = 0
    staleness: dict = field(default_factory=dict)

    @property
    def oacc(self) -> float:
        return 100.0 * float(self.correct.mean()) if self.correct.size else 0.0


def test_accuracy(net: DenseNet, X: np.ndarray, y: np.ndarray, normalizer: RunningNormalizer | None = None) -> float:
    if len(y) == 0:
        return 0.0
    Xn = normalizer(X) if normalizer is not None else X
    return 100.0 * float(np.mean(net.predict(Xn) == y))


def ocl_step(net: DenseNet, x: np.ndarray, y: int, lr: float = LEARNING_RATE,
             replay: ReplayBuffer | None = None) -> int:
    """Predict ``x`` with the current weights, then take one SGD step on it.

    With a replay buffer, one stored sample joins the step and the item is
    then offered to the reservoir.
    """
    pred = int(net.predict(x)[0])
    X, Y = x[None, :], np.array([y])
    if replay is not None and len(replay):
        rx, ry = replay.sample(1)
        X, Y = np.vstack([X, rx]), np.concatenate([Y, ry])
    _, grads = stage_gradients(net, (X, Y))
    for v, g in zip(net.flat, grads):
        v -= lr * g
    if replay is not None:
        replay.add(x, y)
    return pred


def train_sequential(net: DenseNet, stream: Stream, skip: SkipResult, lr: float = LEARNING_RATE,
                     replay: bool = False, seed: int = 0):
    """A single-copy learner that trains only on the items ``skip`` kept.

    Every arrival not kept counts as a miss.  A kept item is predicted on
    arrival and its update lands at its finish time, so later arrivals see
    it only once it is done.
    """
    n = len(stream)
    norm = RunningNormalizer(stream.n_features)
    buf = ReplayBuffer(REPLAY_CAPACITY, stream.n_features, seed) if replay else None
    correct = np.zeros(n, dtype=bool)
    kept = np.zeros(n, dtype=bool)
    kept[skip.kept] = True
    # updates land in (finish time, item) order; an update finishing exactly
    # at an arrival is visible to that arrival unless it is the item's own
    order = sorted(zip(skip.finish.tolist(), skip.kept.tolist()))
    xs: dict[int, np.ndarray] = {}
    cursor = 0
    n_updates = 0

    def land(until: tuple[float, int]) -> None:
        nonlocal cursor, n_updates
        while cursor < len(order) and order[cursor] < until:
            _, k = order[cursor]
            cursor += 1
            x = xs.pop(k)
            X, Y = x[None, :], np.array([stream.y[k]])
            if buf is not None and len(buf):
                rx, ry = buf.sample(1)
                X, Y = np.vstack([X, rx]), np.concatenate([Y, ry])
            _, grads = stage_gradients(net, (X, Y))
            for v, g in zip(net.flat, grads):
                v -= lr * g
            if buf is not None:
                buf.add(x, int(stream.y[k]))
            n_updates += 1

    for i in range(n):
        land((i * stream.t_d, i))
        x_raw = stream.X[i]
        norm.update(x_raw)
        if not kept[i]:
            continue
        x = norm(x_raw)
        correct[i] = int(net.predict(x)[0]) == stream.y[i]
        xs[i] = x
    land((math.inf, 0))
    return OnlineResult(correct, net, n_updates), norm


def train_stale(net: DenseNet, stream: Stream, taus: Sequence[int], policy: str = "none",
                lr: float = LEARNING_RATE, **state_kw):
    """Sequential learner whose ``t``-th gradient is read ``taus[t]`` versions ago.

    The whole network is one stage here.  Item ``t`` is predicted with the
    latest weights, its gradient is taken at the weights of ``taus[t]``
    updates earlier, compensated by ``policy`` and applied.
    """
    if net.n_stages != 1:
        net = net.with_partition(PartitionScheme((0, net.n_layers)))
    n = len(stream)
    depth = max(taus, default=0) + 1
    ring = VersionRing(depth, net.flat[0])
    comp = Compensator(policy, net.flat[0].size, **state_kw)
    norm = RunningNormalizer(stream.n_features)
    correct = np.zeros(n, dtype=bool)
    for t in range(n):
        x_raw = stream.X[t]
        norm.update(x_raw)
        x = norm(x_raw)
        correct[t] = int(net.predict(x)[0]) == stream.y[t]
        tau = min(int(taus[t]), ring.latest)
        read = ring.latest - tau
        _, (g,) = stage_gradients(net, (x[None, :], np.array([stream.y[t]])), [ring[read]])
        g = comp(g, ring.chain(read))
        before = net.flat[0].copy()
        net.flat[0] -= lr * g
        comp.observe_step(before, net.flat[0])
        ring.push(ring.latest + 1, net.flat[0])
    return OnlineResult(correct, net, n), norm


def _ring_depths(trace: SimTrace, P: int) -> list[int]:
    """Versions each stage must keep so every read stays available until its backward."""
    version = [0] * P
    depth = [1] * P
    reads: dict[tuple[int, int], int] = {}
    for e in trace.events:
        if e.kind == "forward":
            reads[(e.item, e.stage)] = e.version
        elif e.kind == "backward":
            lag = version[e.stage] - reads.pop((e.item, e.stage))
            depth[e.stage] = max(depth[e.stage], lag + 1)
        elif e.kind == "update":
            depth[e.stage] = max(depth[e.stage], e.staleness + 1)
        elif e.kind == "commit":
            version[e.stage] = e.version
    return depth


def train_pipeline(net: DenseNet, stream: Stream, trace: SimTrace, policy: str = "none",
                   lr: float = LEARNING_RATE, accumulate: str = "mean", **state_kw):
    """Replay a simulator trace with real gradients.

    Each forward reads the stage weights of the version named in its event,
    each backward differentiates through those same weights, and each commit
    applies the compensated gradients of the items it carries.  Items are
    predicted on arrival with the newest weights of every stage; dropped
    items count as misses.
    """
    P = net.n_stages
    if trace.n_stages != P:
        raise ShapeError(f"trace has {trace.n_stages} stages, net has {P}")
    if len(stream) < trace.n_items:
        raise ShapeError(f"stream has {len(stream)} items, trace needs {trace.n_items}")
    n = trace.n_items
    needed = {(item, u.stage) for u in trace.updates for item in u.items}
    rings = [VersionRing(d, v) for d, v in zip(_ring_depths(trace, P), net.flat)]
    comps = [Compensator(policy, v.size, **state_kw) for v in net.flat]
    norm = RunningNormalizer(stream.n_features)
    correct = np.zeros(n, dtype=bool)
    inputs: dict[int, np.ndarray] = {}
    caches: dict[tuple[int, int], tuple] = {}
    dout: dict[int, np.ndarray] = {}
    grads: dict[tuple[int, int], tuple[np.ndarray, int]] = {}
    groups: dict[tuple[int, int], list[np.ndarray]] = defaultdict(list)
    n_updates = 0
    for e in trace.events:
        item = e.item
        if e.kind == "arrival":
            x_raw = stream.X[item]
            norm.update(x_raw)
            x = norm(x_raw)
            inputs[item] = x[None, :]
            correct[item] = int(net.predict(x)[0]) == stream.y[item]
        elif e.kind == "drop":
            correct[item] = False
            inputs.pop(item, None)
        elif e.kind == "forward":
            vec = rings[e.stage][e.version]
            h = inputs.pop(item)
            out, cache = forward_stage(net, e.stage, vec, h)
            caches[(item, e.stage)] = (cache, e.version)
            if e.stage < P - 1:
                inputs[item] = out
            else:
                _, dout[item] = softmax_xent(out, np.array([stream.y[item]]))
        elif e.kind == "backward":
            cache, v = caches.pop((item, e.stage))
            d = dout.pop(item, None)
            if d is None or (item, e.stage) not in needed:
                continue
            g, d_in = backward_stage(net, e.stage, rings[e.stage][v], cache, d)
            grads[(item, e.stage)] = (g, v)
            if e.stage > 0:
                dout[item] = d_in
        elif e.kind == "update":
            g, v = grads.pop((item, e.stage))
            ring = rings[e.stage]
            groups[(e.worker, e.stage)].append(comps[e.stage](g, ring.chain(v)))
        elif e.kind == "commit":
            i = e.stage
            group = groups.pop((e.worker, i), [])
            before = net.flat[i].copy()
            if group:
                step = np.mean(group, axis=0) if accumulate == "mean" else np.sum(group, axis=0)
                net.flat[i] -= lr * step
                n_updates += 1
            comps[i].observe_step(before, net.flat[i])
            rings[i].push(e.version, net.flat[i])
    return OnlineResult(correct, net, n_updates, dict(trace.update_staleness)), norm


# checkpoints


def save_checkpoint(net: DenseNet, path) -> None:
    """Layer shapes, activations and stage map, then row-major parameter values."""
    lines = [
        CKPT_HEADER,
        "sizes " + " ".join(map(str, net.sizes)),
        "acts " + " ".join(net.acts),
        "stages " + " ".join(map(str, net.stage_map)),
    ]
    for k in range(net.n_layers):
        W, b = net.layer(k)
        lines.append(f"W{k} " + " ".join(repr(float(v)) for v in W.ravel()))
        lines.append(f"b{k} " + " ".join(repr(float(v)) for v in b))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> DenseNet:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CKPT_HEADER:
        raise ValueError(f"not a {CKPT_HEADER} file: {path}")
    fields = {}
    for ln in lines[1:]:
        key, _, rest = ln.partition(" ")
        fields[key] = rest.split()
    net = DenseNet([int(s) for s in fields["sizes"]], [int(s) for s in fields["stages"]], fields["acts"])
    for k in range(net.n_layers):
        W, b = net.layer(k)
        W[...] = np.array([float(v) for v in fields[f"W{k}"]]).reshape(W.shape)
        b[...] = np.array([float(v) for v in fields[f"b{k}"]])
    return net
