"""Learned dynamics model used to refine rewards with predicted futures.

The model regresses (state, action encoding) onto (next state, next
instantaneous reward). A softmax-parameterized attention vector scales each
input feature and is trained jointly with the regression loss, so the
weights always form a probability vector. The model is used for reward
shaping only, never to pick actions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import TrainingError
from .rlcore import POLICY_SCHEMA, Mlp, _mlp_from_lists, _mlp_to_lists

REAL = "real"
MODEL = "model"

# policy callback: state -> (action index, action encoding)
Policy = Callable[[np.ndarray], tuple[int, np.ndarray]]


@dataclass(frozen=True)
class Transition:
    """One (s, a, r, s') record, real or model-generated."""

    state: tuple[float, ...]
    action: int
    reward: float
    next_state: tuple[float, ...]
    terminal: bool = False
    source: str = REAL
    action_enc: tuple[float, ...] | None = None
    # Optional restriction of the next-state action set (masked bootstrap).
    next_valid: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")
        if self.source not in (REAL, MODEL):
            raise ValueError(f"unknown transition source {self.source!r}")


def make_transition(
    state: Sequence[float],
    action: int,
    reward: float,
    next_state: Sequence[float],
    terminal: bool = False,
    source: str = REAL,
    action_enc: Sequence[float] | None = None,
    next_valid: Sequence[int] | None = None,
) -> Transition:
    return Transition(
        state=tuple(float(x) for x in state),
        action=int(action),
        reward=float(reward),
        next_state=tuple(float(x) for x in next_state),
        terminal=bool(terminal),
        source=source,
        action_enc=None if action_enc is None else tuple(float(x) for x in action_enc),
        next_valid=None if next_valid is None else tuple(int(i) for i in next_valid),
    )


class DynamicsModel:
    """Attention-scaled MLP regressor for one agent's transition dynamics."""

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        rng: np.random.Generator,
        hidden: tuple[int, int] = (64, 64),
        lr: float = 0.02,
        grad_clip: float = 5.0,
    ):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.d_in = state_dim + action_dim
        self.d_out = state_dim + 1
        self.lr = lr
        self.grad_clip = grad_clip
        self.net = Mlp([self.d_in, *hidden, self.d_out], rng)
        self.att_theta = np.zeros(self.d_in)

    @property
    def attention_weights(self) -> np.ndarray:
        z = self.att_theta - self.att_theta.max()
        e = np.exp(z)
        return e / e.sum()

    def _scale(self) -> np.ndarray:
        # Mean-one scaling keeps the layer well conditioned at uniform attention.
        return self.d_in * self.attention_weights

    def _forward(self, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        xs = x * self._scale()
        y, cache = self.net.forward(xs)
        return y, cache, x

    def predict(
        self, state: Sequence[float], action_enc: Sequence[float]
    ) -> tuple[np.ndarray, float]:
        x = np.concatenate([np.asarray(state, dtype=float), np.asarray(action_enc, dtype=float)])
        y, _, _ = self._forward(x)
        return y[0, : self.state_dim].copy(), float(y[0, self.state_dim])

    def _step(self, x: np.ndarray, target: np.ndarray) -> float:
        y, cache, raw = self._forward(x)
        err = y - target
        loss = float(np.mean(err**2))
        if not np.isfinite(loss):
            raise TrainingError("non-finite dynamics-model loss")
        d_out = 2.0 * err / err.size
        grads, d_in = self.net.backward(cache, d_out)
        # Attention gradient through the softmax-scaled input.
        w = self.attention_weights
        c = self.d_in * (d_in * raw).sum(axis=0)
        d_theta = w * c - w * float((c * w).sum())
        flat = [g for pair in grads for g in pair] + [d_theta]
        norm = float(np.sqrt(sum(float((g**2).sum()) for g in flat)))
        if self.grad_clip is not None and norm > self.grad_clip and norm > 0.0:
            scale = self.grad_clip / norm
            grads = [(gw * scale, gb * scale) for gw, gb in grads]
            d_theta = d_theta * scale
        for i, (gw, gb) in enumerate(grads):
            self.net.weights[i] -= self.lr * gw
            self.net.biases[i] -= self.lr * gb
        self.att_theta -= self.lr * d_theta
        return loss


def snapshot_dynamics_model(model: DynamicsModel, name: str = "") -> dict:
    """Serialize with the same versioned schema as policy snapshots."""
    return {
        "schema": POLICY_SCHEMA,
        "name": name,
        "kind": "dynamics",
        "state_dim": model.state_dim,
        "action_dim": model.action_dim,
        "lr": model.lr,
        "grad_clip": model.grad_clip,
        "net": _mlp_to_lists(model.net),
        "att_theta": model.att_theta.tolist(),
    }


def dynamics_model_from_snapshot(doc: dict) -> DynamicsModel:
    if doc.get("schema") != POLICY_SCHEMA or doc.get("kind") != "dynamics":
        raise ValueError("not a dynamics-model snapshot")
    hidden = tuple(doc["net"]["sizes"][1:-1])
    model = DynamicsModel(
        doc["state_dim"], doc["action_dim"], np.random.default_rng(0),
        hidden=hidden, lr=doc["lr"], grad_clip=doc["grad_clip"],
    )
    _mlp_from_lists(model.net, doc["net"])
    model.att_theta = np.array(doc["att_theta"], dtype=float)
    return model


def fit(
    model: DynamicsModel,
    transitions: Sequence[Transition],
    steps: int,
    rng: np.random.Generator,
    batch_size: int = 16,
) -> list[float]:
    """Mini-batch regression on real transitions; returns the loss history."""
    if not transitions:
        raise ValueError("need at least one real transition")
    if any(tr.source != REAL for tr in transitions):
        raise ValueError("model-generated transitions must not enter fit()")
    xs = np.stack([
        np.concatenate([np.asarray(tr.state), np.asarray(tr.action_enc)])
        for tr in transitions
    ])
    ys = np.stack([
        np.concatenate([np.asarray(tr.next_state), [tr.reward]])
        for tr in transitions
    ])
    n = len(transitions)
    history: list[float] = []
    for _ in range(steps):
        if n <= batch_size:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=batch_size, replace=False)
        history.append(model._step(xs[idx], ys[idx]))
    return history


def rollout(
    model: DynamicsModel,
    state: Sequence[float],
    policy: Policy,
    horizon: int,
) -> list[Transition]:
    """Predict a horizon-length trajectory under the given policy."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    out: list[Transition] = []
    s = np.asarray(state, dtype=float)
    for _ in range(horizon):
        action, enc = policy(s)
        s_next, r_hat = model.predict(s, enc)
        out.append(
            make_transition(s, action, r_hat, s_next, source=MODEL, action_enc=enc)
        )
        s = s_next
    return out


def shaped_reward(
    transition: Transition,
    model: DynamicsModel,
    policy: Policy,
    horizon: int,
    gamma: float,
    averaging: bool = False,
) -> float:
    """Instantaneous reward plus the discounted model-predicted future.

    r~ = r + sum_{t=1..horizon} gamma^t * r_hat_t along a rollout from the
    transition's next state; with averaging enabled the sum is divided by
    (number of terms). Horizon 0 reduces to the raw reward exactly.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must be in (0, 1]")
    if horizon == 0 or transition.terminal:
        return float(transition.reward)
    future = rollout(model, transition.next_state, policy, horizon)
    r = float(transition.reward)
    for t, tr in enumerate(future, start=1):
        r += gamma**t * tr.reward
    if averaging:
        r /= len(future) + 1
    return r
