"""Minimal neural RL substrate: MLP regression, dueling double DQN, replay
buffer, epsilon-greedy selection and the training stabilization options
(target clamping, gradient clipping, target-network sync).

Everything is plain float64 numpy, fully deterministic given seeds, and
snapshots round-trip bit-exactly through JSON.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import TrainingError

POLICY_SCHEMA = "hidvfs-policy-v1"


def _init_layer(fan_in: int, fan_out: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.uniform(-lim, lim, size=(fan_in, fan_out))
    return w, np.zeros(fan_out)


class Mlp:
    """Fully-connected net, rectified-linear hidden units, seeded init.

    ``out_relu`` turns the final layer into a hidden-style layer so the Mlp
    can serve as a shared trunk.
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, out_relu: bool = False):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.out_relu = out_relu
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for a, b in zip(self.sizes, self.sizes[1:]):
            w, bias = _init_layer(a, b, rng)
            self.weights.append(w)
            self.biases.append(bias)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns (output, cache of layer inputs and pre-activations)."""
        h = np.atleast_2d(np.asarray(x, dtype=float))
        cache = [h]
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            cache.append(z)
            if i < n - 1 or self.out_relu:
                h = np.maximum(z, 0.0)
            else:
                h = z
            cache.append(h)
        return h, cache

    def backward(
        self, cache: list[np.ndarray], d_out: np.ndarray
    ) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """Backpropagate d(loss)/d(output); returns (per-layer grads, d_input)."""
        n = len(self.weights)
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * n  # type: ignore[list-item]
        d = d_out
        for i in range(n - 1, -1, -1):
            z = cache[1 + 2 * i]
            h_in = cache[2 * i]
            if i < n - 1 or self.out_relu:
                d = d * (z > 0.0)
            grads[i] = (h_in.T @ d, d.sum(axis=0))
            d = d @ self.weights[i].T
        return grads, d

    def copy(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.sizes = self.sizes
        other.out_relu = self.out_relu
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out


def dueling_q(v: float | np.ndarray, a: np.ndarray) -> np.ndarray:
    """Combine value and advantages: Q[a] = V + A[a] - mean(A)."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        raise ValueError("advantage vector must be nonempty")
    return v + a - a.mean(axis=-1, keepdims=a.ndim > 1)


def double_dqn_target(
    r: float,
    gamma: float,
    q_online_next: np.ndarray,
    q_target_next: np.ndarray,
    clip: float | None = None,
    terminal: bool = False,
) -> float:
    """Decoupled selection/evaluation TD target, optionally clamped."""
    q_online_next = np.asarray(q_online_next, dtype=float)
    q_target_next = np.asarray(q_target_next, dtype=float)
    if q_online_next.shape != q_target_next.shape or q_online_next.size < 1:
        raise ValueError("next-state value vectors must match and be nonempty")
    if terminal:
        y = float(r)
    else:
        a_star = int(np.argmax(q_online_next))
        y = float(r) + gamma * float(q_target_next[a_star])
    if clip is not None:
        y = min(max(y, -clip), clip)
    return y


def select_action(q: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy with lowest-index tie-break on the greedy branch."""
    q = np.asarray(q, dtype=float)
    if q.size == 0:
        raise ValueError("empty action-value vector")
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must be in [0, 1]")
    if eps > 0.0 and rng.random() < eps:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


class ReplayBuffer:
    """FIFO ring of transitions with uniform without-replacement sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list = []
        self._next = 0

    def push(self, item) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
            self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def recent(self, n: int) -> list:
        """The n most recently pushed items, oldest first."""
        if len(self._items) < self.capacity:
            return self._items[-n:]
        k = min(n, self.capacity)
        idx = [(self._next - k + i) % self.capacity for i in range(k)]
        return [self._items[i] for i in idx]

    def sample(self, batch_size: int, rng: np.random.Generator) -> list:
        if batch_size < 1 or batch_size > len(self._items):
            raise ValueError("batch size out of range")
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[int(i)] for i in idx]


@dataclass
class TrainConfig:
    """Hyperparameters and stabilization flags for one agent."""

    lr: float = 0.01
    gamma: float = 0.9
    batch_size: int = 32
    target_sync: int = 25
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.4
    q_clip: float | None = None      # symmetric bound on TD targets when set
    plan_count: int = 20
    horizon: int = 3
    reward_averaging: bool = False
    dueling: bool = True
    double: bool = True
    grad_clip: float = 5.0
    train_steps_per_epoch: int = 24
    hidden: tuple[int, int] = (64, 64)
    buffer_capacity: int = 2000

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        for e in (self.eps_start, self.eps_end):
            if not 0.0 <= e <= 1.0:
                raise ValueError("epsilon bounds must be in [0, 1]")
        if self.q_clip is not None and self.q_clip <= 0:
            raise ValueError("q_clip must be positive (symmetric bound)")


def epsilon_at(config: TrainConfig, epoch: int, total_epochs: int) -> float:
    """Linear decay from eps_start to eps_end over the first decay fraction."""
    span = max(1.0, config.eps_decay_frac * total_epochs)
    frac = min(epoch / span, 1.0)
    return config.eps_start + (config.eps_end - config.eps_start) * frac


class QNetwork:
    """Q function: shared relu trunk plus dueling (or plain) linear heads."""

    def __init__(
        self,
        state_dim: int,
        n_actions: int,
        rng: np.random.Generator,
        hidden: tuple[int, int] = (64, 64),
        dueling: bool = True,
    ):
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.hidden = tuple(hidden)
        self.dueling = dueling
        self.trunk = Mlp([state_dim, *hidden], rng, out_relu=True)
        self.a_head = Mlp([hidden[-1], n_actions], rng)
        self.v_head = Mlp([hidden[-1], 1], rng) if dueling else None

    def q_values(self, states: np.ndarray) -> np.ndarray:
        h, _ = self.trunk.forward(states)
        a, _ = self.a_head.forward(h)
        if self.v_head is None:
            return a
        v, _ = self.v_head.forward(h)
        return dueling_q(v, a)

    def q_single(self, state: np.ndarray) -> np.ndarray:
        return self.q_values(np.atleast_2d(state))[0]

    def value_and_advantage(self, state: np.ndarray) -> tuple[float, np.ndarray]:
        if self.v_head is None:
            raise ValueError("plain head has no value stream")
        h, _ = self.trunk.forward(np.atleast_2d(state))
        a, _ = self.a_head.forward(h)
        v, _ = self.v_head.forward(h)
        return float(v[0, 0]), a[0]

    def loss(self, states: np.ndarray, actions: np.ndarray, targets: np.ndarray) -> float:
        q = self.q_values(states)
        picked = q[np.arange(len(actions)), actions]
        return float(np.mean((picked - targets) ** 2))

    def loss_and_grads(
        self, states: np.ndarray, actions: np.ndarray, targets: np.ndarray
    ):
        h, trunk_cache = self.trunk.forward(states)
        a, a_cache = self.a_head.forward(h)
        if self.v_head is not None:
            v, v_cache = self.v_head.forward(h)
            q = dueling_q(v, a)
        else:
            q = a
        batch = len(actions)
        picked = q[np.arange(batch), actions]
        err = picked - targets
        loss = float(np.mean(err**2))
        dq = np.zeros_like(q)
        dq[np.arange(batch), actions] = 2.0 * err / batch
        if self.v_head is not None:
            dv = dq.sum(axis=1, keepdims=True)
            da = dq - dq.mean(axis=1, keepdims=True)
            v_grads, dh_v = self.v_head.backward(v_cache, dv)
            a_grads, dh_a = self.a_head.backward(a_cache, da)
            dh = dh_v + dh_a
        else:
            v_grads = []
            a_grads, dh = self.a_head.backward(a_cache, dq)
        trunk_grads, _ = self.trunk.backward(trunk_cache, dh)
        return loss, (trunk_grads, a_grads, v_grads)

    def apply_grads(self, grads, lr: float, grad_clip: float | None) -> None:
        trunk_grads, a_grads, v_grads = grads
        flat = [g for pair in (*trunk_grads, *a_grads, *v_grads) for g in pair]
        if grad_clip is not None:
            norm = float(np.sqrt(sum(float((g**2).sum()) for g in flat)))
            if norm > grad_clip and norm > 0.0:
                scale = grad_clip / norm
                trunk_grads = [(gw * scale, gb * scale) for gw, gb in trunk_grads]
                a_grads = [(gw * scale, gb * scale) for gw, gb in a_grads]
                v_grads = [(gw * scale, gb * scale) for gw, gb in v_grads]
        for mlp, gs in ((self.trunk, trunk_grads), (self.a_head, a_grads), (self.v_head, v_grads)):
            if mlp is None:
                continue
            for i, (gw, gb) in enumerate(gs):
                mlp.weights[i] -= lr * gw
                mlp.biases[i] -= lr * gb

    def copy(self) -> "QNetwork":
        other = QNetwork.__new__(QNetwork)
        other.state_dim = self.state_dim
        other.n_actions = self.n_actions
        other.hidden = self.hidden
        other.dueling = self.dueling
        other.trunk = self.trunk.copy()
        other.a_head = self.a_head.copy()
        other.v_head = self.v_head.copy() if self.v_head is not None else None
        return other

    # -- flat parameter access (finite-difference tests, hashing) --

    def _mlps(self) -> list[Mlp]:
        out = [self.trunk, self.a_head]
        if self.v_head is not None:
            out.append(self.v_head)
        return out

    def get_flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for m in self._mlps() for p in m.params()])

    def set_flat_params(self, flat: np.ndarray) -> None:
        i = 0
        for m in self._mlps():
            for p in m.params():
                p[...] = flat[i : i + p.size].reshape(p.shape)
                i += p.size
        if i != flat.size:
            raise ValueError("parameter vector size mismatch")


def compute_targets_for_batch(
    net: QNetwork,
    target_net: QNetwork,
    batch: Sequence,
    config: TrainConfig,
) -> np.ndarray:
    """TD targets for a batch of transitions (duck-typed: state, action,
    reward, next_state, terminal, optional next_valid index mask)."""
    next_states = np.stack([np.asarray(tr.next_state, dtype=float) for tr in batch])
    qn_online = net.q_values(next_states)
    qn_target = target_net.q_values(next_states)
    ys = np.empty(len(batch))
    for i, tr in enumerate(batch):
        valid = getattr(tr, "next_valid", None)
        ov, tv = qn_online[i], qn_target[i]
        if valid is not None:
            idx = list(valid)
            ov, tv = ov[idx], tv[idx]
        if tr.terminal:
            y = float(tr.reward)
            if config.q_clip is not None:
                y = min(max(y, -config.q_clip), config.q_clip)
        elif config.double:
            y = double_dqn_target(tr.reward, config.gamma, ov, tv, config.q_clip)
        else:
            y = float(tr.reward) + config.gamma * float(np.max(tv))
            if config.q_clip is not None:
                y = min(max(y, -config.q_clip), config.q_clip)
        ys[i] = y
    if config.q_clip is not None and np.any(np.abs(ys) > config.q_clip):
        raise TrainingError("training target escaped the configured clamp")
    return ys


def train_step(
    net: QNetwork,
    target_net: QNetwork,
    batch: Sequence,
    config: TrainConfig,
) -> float:
    """One gradient-descent step on the TD mean squared error."""
    if not batch:
        raise ValueError("batch must be nonempty")
    states = np.stack([np.asarray(tr.state, dtype=float) for tr in batch])
    actions = np.asarray([tr.action for tr in batch], dtype=int)
    ys = compute_targets_for_batch(net, target_net, batch, config)
    loss, grads = net.loss_and_grads(states, actions, ys)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite training loss {loss!r}")
    net.apply_grads(grads, config.lr, config.grad_clip)
    return loss


class D3qnAgent:
    """One learning agent: online/target networks, buffers, step counting."""

    def __init__(
        self,
        name: str,
        state_dim: int,
        n_actions: int,
        config: TrainConfig,
        rng: np.random.Generator,
    ):
        self.name = name
        self.config = config
        self.rng = rng
        self.net = QNetwork(state_dim, n_actions, rng, config.hidden, config.dueling)
        self.target_net = self.net.copy()
        self.real_buffer = ReplayBuffer(config.buffer_capacity)
        self.model_buffer = ReplayBuffer(config.buffer_capacity)
        self.train_steps = 0

    def act(self, state: np.ndarray, eps: float, valid: Sequence[int] | None = None) -> int:
        q = self.net.q_single(np.asarray(state, dtype=float))
        if valid is None:
            return select_action(q, eps, self.rng)
        valid = list(valid)
        local = select_action(q[valid], eps, self.rng)
        return valid[local]

    def remember(self, transition, model_generated: bool = False) -> None:
        (self.model_buffer if model_generated else self.real_buffer).push(transition)

    def combined_size(self) -> int:
        return len(self.real_buffer) + len(self.model_buffer)

    def sample_combined(self, batch_size: int) -> list:
        pool = list(self.real_buffer) + list(self.model_buffer)
        idx = self.rng.choice(len(pool), size=batch_size, replace=False)
        return [pool[int(i)] for i in idx]

    def train_epoch(self) -> float | None:
        """Runs the configured number of steps once enough data is buffered."""
        if self.combined_size() < self.config.batch_size:
            return None
        last = None
        for _ in range(self.config.train_steps_per_epoch):
            batch = self.sample_combined(self.config.batch_size)
            last = train_step(self.net, self.target_net, batch, self.config)
            self.train_steps += 1
            if self.train_steps % self.config.target_sync == 0:
                self.target_net = self.net.copy()
        return last

    def snapshot(self) -> dict:
        return snapshot_qnetwork(self.net, self.config, name=self.name)

    def load_snapshot(self, doc: dict) -> None:
        self.net = qnetwork_from_snapshot(doc)
        self.target_net = self.net.copy()


def snapshot_qnetwork(net: QNetwork, config: TrainConfig | None = None, name: str = "") -> dict:
    doc = {
        "schema": POLICY_SCHEMA,
        "name": name,
        "dueling": net.dueling,
        "state_dim": net.state_dim,
        "n_actions": net.n_actions,
        "hidden": list(net.hidden),
        "trunk": _mlp_to_lists(net.trunk),
        "a_head": _mlp_to_lists(net.a_head),
        "v_head": _mlp_to_lists(net.v_head) if net.v_head is not None else None,
    }
    if config is not None:
        cfg = asdict(config)
        cfg["hidden"] = list(cfg["hidden"])
        doc["config"] = cfg
    return doc


def qnetwork_from_snapshot(doc: dict) -> QNetwork:
    if doc.get("schema") != POLICY_SCHEMA:
        raise ValueError(f"unsupported policy schema {doc.get('schema')!r}")
    net = QNetwork(
        doc["state_dim"], doc["n_actions"], np.random.default_rng(0),
        hidden=tuple(doc["hidden"]), dueling=doc["dueling"],
    )
    _mlp_from_lists(net.trunk, doc["trunk"])
    _mlp_from_lists(net.a_head, doc["a_head"])
    if net.v_head is not None:
        _mlp_from_lists(net.v_head, doc["v_head"])
    return net


def config_from_snapshot(doc: dict) -> TrainConfig:
    cfg = dict(doc["config"])
    cfg["hidden"] = tuple(cfg["hidden"])
    return TrainConfig(**cfg)


def _mlp_to_lists(mlp: Mlp) -> dict:
    return {
        "sizes": list(mlp.sizes),
        "out_relu": mlp.out_relu,
        "weights": [w.tolist() for w in mlp.weights],
        "biases": [b.tolist() for b in mlp.biases],
    }


def _mlp_from_lists(mlp: Mlp, doc: dict) -> None:
    if list(mlp.sizes) != list(doc["sizes"]):
        raise ValueError("snapshot layer sizes do not match network")
    mlp.weights = [np.array(w, dtype=float) for w in doc["weights"]]
    mlp.biases = [np.array(b, dtype=float) for b in doc["biases"]]


def save_policy(doc: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_policy(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
