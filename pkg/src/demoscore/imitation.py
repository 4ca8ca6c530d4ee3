"""Behaviour cloning from observations over a weighted transition distribution."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from demoscore import densenet
from demoscore import env as envs
from demoscore import weighting
from demoscore.env import Controller, EnvSpec
from demoscore.traj import Trajectory

VARIANTS = ("ours", "feasibility_only", "optimality_only", "naive", "none")


class Policy(Controller):
    """Deterministic policy; a tanh output layer is mapped affinely onto the action box."""

    def __init__(self, net: densenet.DenseNet, target: EnvSpec, state_mean, state_std):
        if net.layers[-1].activation != "tanh":
            raise ValueError("policy output layer must be tanh")
        self.net = net
        self.target = target
        self.state_mean = np.asarray(state_mean, dtype=np.float64)
        self.state_std = np.asarray(state_std, dtype=np.float64)
        lo, hi = target.action_box
        self.mid, self.half = (hi + lo) / 2.0, (hi - lo) / 2.0

    def act(self, states, t=0):
        x = (np.atleast_2d(states) - self.state_mean) / self.state_std
        a = densenet.forward(self.net, x) * self.half + self.mid
        # tanh saturates to exactly +-1 in floating point; clip keeps the box closed anyway
        return envs.clip_action(self.target, a)

    def save(self, path) -> None:
        path = Path(path)
        densenet.save(self.net, path)
        meta = {"target": self.target.to_dict(), "state_mean": self.state_mean.tolist(),
                "state_std": self.state_std.tolist()}
        path.with_suffix(path.suffix + ".meta.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Policy":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".meta.json").read_text())
        return cls(densenet.load(path), envs.spec_from_dict(meta["target"]),
                   np.array(meta["state_mean"]), np.array(meta["state_std"]))


@dataclass
class ImitationConfig:
    hidden: int = 100
    layers: int = 3
    batches_per_epoch: int = 20
    train: densenet.TrainConfig = field(default_factory=lambda: densenet.TrainConfig(epochs=200))

    def __post_init__(self):
        if self.batches_per_epoch < 1:
            raise ValueError("batches_per_epoch must be >= 1")


def init_policy(target: EnvSpec, cfg: ImitationConfig, state_mean=None, state_std=None) -> Policy:
    d = target.state_dim
    net = densenet.mlp(d, target.action_dim, cfg.hidden, cfg.layers, "tanh", cfg.train.seed,
                       output_activation="tanh")
    mean = np.zeros(d) if state_mean is None else state_mean
    std = np.ones(d) if state_std is None else state_std
    return Policy(net, target, mean, std)


def recover_actions(id_model, target: EnvSpec, s, s_next) -> np.ndarray:
    """Target-agent actions for observed transitions, clipped to the action box."""
    id_model.check_target(target)
    return envs.clip_action(target, id_model.predict(s, s_next))


def _support_rows(dist: weighting.TransitionDistribution, trajs: Sequence[Trajectory]):
    rows = np.flatnonzero(dist.probs > 0)
    s = np.stack([trajs[dist.traj_index[r]].states[dist.step[r]] for r in rows])
    s_next = np.stack([trajs[dist.traj_index[r]].states[dist.step[r] + 1] for r in rows])
    return rows, s, s_next


def train_policy(dist: weighting.TransitionDistribution, trajs: Sequence[Trajectory], id_model,
                 target: EnvSpec, cfg: ImitationConfig | None = None,
                 actions: np.ndarray | None = None) -> tuple[Policy, list[float]]:
    """Regress pi(s_t) onto f_id(s_t, s_{t+1}) for transitions drawn from ``dist``.

    ``actions`` (aligned with the distribution rows) bypasses the inverse model; it exists
    to compare against cloning on the true actions.
    """
    cfg = cfg or ImitationConfig()
    rows, s, s_next = _support_rows(dist, trajs)
    if actions is None:
        a = recover_actions(id_model, target, s, s_next)
    else:
        a = envs.clip_action(target, np.asarray(actions, dtype=np.float64)[rows])
    mean = s.mean(axis=0)
    std = s.std(axis=0)
    std = np.where(std > 1e-8, std, 1.0)
    policy = init_policy(target, cfg, mean, std)
    x = (s - mean) / std
    y = (a - policy.mid) / policy.half

    # sample from the support only: map distribution rows to positions in x/y
    pos = np.full(len(dist), -1)
    pos[rows] = np.arange(len(rows))
    rng = np.random.default_rng(cfg.train.seed)
    bs = cfg.train.batch_size

    def epochs():
        for _ in range(cfg.train.epochs):
            idx = pos[weighting.sample(dist, cfg.batches_per_epoch * bs, rng)]
            yield ((x[idx[i:i + bs]], y[idx[i:i + bs]]) for i in range(0, len(idx), bs))

    net, hist = densenet.fit_batches(policy.net, epochs(), cfg.train)
    return Policy(net, target, mean, std), hist


@dataclass(frozen=True)
class EvalReport:
    mean: float
    std: float
    n: int
    returns: tuple[float, ...]
    causes: dict

    def __post_init__(self):
        if self.n < 1 or len(self.returns) != self.n:
            raise ValueError("report needs n >= 1 per-episode returns")


def evaluate(policy: Controller, target: EnvSpec, episodes: int, seed: int) -> EvalReport:
    """Undiscounted returns of seeded rollouts from the initial-state distribution."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    ro = envs.rollout(target, policy, envs.episode_seeds(seed, episodes))
    returns = []
    for i in range(episodes):
        n = int(ro.lengths[i])
        r = envs.reward(target, ro.states[i, :n], ro.states[i, 1:n + 1])
        returns.append(float(np.sum(r)))
    arr = np.array(returns)
    std = float(arr.std()) if episodes > 1 else 0.0
    causes = dict(sorted(Counter(ro.causes).items()))
    return EvalReport(float(arr.mean()), std, episodes, tuple(returns), causes)


def variant_weights(variant: str, w_f, w_o, w_o_naive) -> np.ndarray:
    w_f = np.asarray(w_f, dtype=np.float64)
    if variant == "ours":
        return w_f * np.asarray(w_o, dtype=np.float64)
    if variant == "feasibility_only":
        return w_f.copy()
    if variant == "optimality_only":
        return np.asarray(w_o, dtype=np.float64).copy()
    if variant == "naive":
        return w_f * np.asarray(w_o_naive, dtype=np.float64)
    if variant == "none":
        return np.ones_like(w_f)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def variant_distribution(variant: str, trajs: Sequence[Trajectory], w_f, w_o,
                         w_o_naive) -> weighting.TransitionDistribution:
    w = variant_weights(variant, w_f, w_o, w_o_naive)
    if variant in ("feasibility_only", "none"):
        w_o_used = np.ones_like(w)
    elif variant == "naive":
        w_o_used = np.asarray(w_o_naive, dtype=np.float64)
    else:
        w_o_used = np.asarray(w_o, dtype=np.float64)
    w_f_used = np.ones_like(w) if variant in ("optimality_only", "none") else np.asarray(w_f, float)
    scored = [weighting.ScoredTrajectory(i, float(w_f_used[i]), float(w_o_used[i]), float(w[i]),
                                         len(t.states) - 1) for i, t in enumerate(trajs)]
    return weighting.build_distribution(scored, trajs)


def run_variant(variant: str, trajs: Sequence[Trajectory], w_f, w_o, w_o_naive, id_model,
                target: EnvSpec, cfg: ImitationConfig | None = None, eval_episodes: int = 100,
                eval_seed: int = 0) -> tuple[Policy, EvalReport]:
    dist = variant_distribution(variant, trajs, w_f, w_o, w_o_naive)
    policy, _ = train_policy(dist, trajs, id_model, target, cfg)
    return policy, evaluate(policy, target, eval_episodes, eval_seed)


def pooled_se(a: Sequence[float], b: Sequence[float]) -> float:
    """Standard error of the difference of two sample means."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    va = a.var(ddof=1) / len(a) if len(a) > 1 else 0.0
    vb = b.var(ddof=1) / len(b) if len(b) > 1 else 0.0
    return math.sqrt(va + vb)
