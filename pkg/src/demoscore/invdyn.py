"""Inverse dynamics of the target agent and replay of demonstrations through it."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from demoscore import densenet
from demoscore import env as envs
from demoscore.env import EnvSpec
from demoscore.traj import InvalidTrajectoryError, Trajectory, TrajectorySet, transition_arrays


class ReplayFailedError(RuntimeError):
    def __init__(self, step: int, rows):
        super().__init__(f"inverse dynamics produced a non-finite action at replay step {step} "
                         f"(trajectories {list(rows)[:5]})")
        self.step = step


class ModelMismatchError(ValueError):
    pass


def transition_features(s, s_next) -> np.ndarray:
    """Model input: the state and the displacement to the next state."""
    s = np.asarray(s, dtype=np.float64)
    s_next = np.asarray(s_next, dtype=np.float64)
    return np.concatenate([s, s_next - s], axis=-1)


@dataclass(frozen=True, eq=False)
class InverseDynamicsModel:
    net: densenet.DenseNet
    family: str
    variant: str
    state_dim: int
    action_dim: int
    feat_mean: np.ndarray
    feat_std: np.ndarray
    act_mid: np.ndarray
    act_half: np.ndarray
    seed: int = 0

    def check_target(self, target: EnvSpec) -> None:
        if (target.family, target.variant) != (self.family, self.variant):
            raise ModelMismatchError(
                f"model trained for {self.family}/{self.variant}, used on {target.family}/{target.variant}"
            )

    def predict(self, s, s_next) -> np.ndarray:
        x = (transition_features(s, s_next) - self.feat_mean) / self.feat_std
        return densenet.forward(self.net, x) * self.act_half + self.act_mid

    def metadata(self) -> dict:
        return {
            "family": self.family,
            "variant": self.variant,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "training_seed": self.seed,
            "feat_mean": self.feat_mean.tolist(),
            "feat_std": self.feat_std.tolist(),
            "act_mid": self.act_mid.tolist(),
            "act_half": self.act_half.tolist(),
        }

    def save(self, path) -> None:
        path = Path(path)
        densenet.save(self.net, path)
        path.with_suffix(path.suffix + ".meta.json").write_text(
            json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "InverseDynamicsModel":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".meta.json").read_text())
        return cls(densenet.load(path), meta["family"], meta["variant"], meta["state_dim"],
                   meta["action_dim"], np.array(meta["feat_mean"]), np.array(meta["feat_std"]),
                   np.array(meta["act_mid"]), np.array(meta["act_half"]), meta["training_seed"])


@dataclass
class InvDynConfig:
    hidden: int = 64
    layers: int = 8
    train: densenet.TrainConfig = None

    def __post_init__(self):
        if self.train is None:
            self.train = densenet.TrainConfig(epochs=40)


def fit_inverse_dynamics(feasible: TrajectorySet, target: EnvSpec,
                         cfg: InvDynConfig | None = None) -> tuple[InverseDynamicsModel, list[float]]:
    """Regress executed actions on (s_t, s_{t+1}) pooled from the target's random rollouts."""
    cfg = cfg or InvDynConfig()
    if len(feasible) == 0:
        raise ValueError("no feasible trajectories to fit inverse dynamics on")
    if any(t.actions is None for t in feasible):
        raise InvalidTrajectoryError("inverse dynamics needs trajectories with actions")
    s, s_next = transition_arrays(feasible)
    a = np.concatenate([t.actions for t in feasible])
    feats = transition_features(s, s_next)
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    std = np.where(std > 1e-8, std, 1.0)
    lo, hi = target.action_box
    mid, half = (hi + lo) / 2.0, (hi - lo) / 2.0
    net = densenet.mlp(feats.shape[1], a.shape[1], cfg.hidden, cfg.layers, "relu", cfg.train.seed)
    net, hist = densenet.train(net, (feats - mean) / std, (a - mid) / half, cfg.train)
    model = InverseDynamicsModel(net, target.family, target.variant, target.state_dim,
                                 target.action_dim, mean, std, mid, half, cfg.train.seed)
    return model, hist


class AnalyticInverse:
    """Exact inverse of the deterministic kinematics, clipped to the action box.

    Usable wherever a fitted model is (``predict``/``check_target``); test oracle only.
    """

    def __init__(self, target: EnvSpec):
        self.target = target
        self.family, self.variant = target.family, target.variant

    def check_target(self, target: EnvSpec) -> None:
        if (target.family, target.variant) != (self.family, self.variant):
            raise ModelMismatchError("analytic inverse built for a different target")

    def predict(self, s, s_next) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        s_next = np.asarray(s_next, dtype=np.float64)
        idx = 2 if self.family == "driving2d" else 0
        a = (s_next[..., idx] - s[..., idx]) / self.target.dt
        return envs.clip_action(self.target, a[..., None])


def analytic_inverse(target: EnvSpec, s, s_next, tol: float = 1e-9):
    """The action producing ``s -> s_next`` under the target dynamics, or None if none exists."""
    s = np.asarray(s, dtype=np.float64)
    s_next = np.asarray(s_next, dtype=np.float64)
    lo, hi = target.action_box
    p = target.params
    if target.family == "driving2d":
        expect = s[:2] + p.speed * target.dt * np.array([np.cos(s[2]), np.sin(s[2])])
        if np.max(np.abs(expect - s_next[:2])) > tol:
            return None
        a = (s_next[2] - s[2]) / target.dt
    else:
        if np.max(np.abs(s_next[1:] - s[1:])) > tol:
            return None
        jlo, jhi = p.joint_range
        if not (jlo - tol <= s_next[0] <= jhi + tol):
            return None
        a = (s_next[0] - s[0]) / target.dt
    scale = max(1.0, float(np.max(np.abs(hi - lo))))
    if a < lo[0] - tol * scale or a > hi[0] + tol * scale:
        return None
    return np.array([min(max(a, lo[0]), hi[0])])


def replay_states(model, target: EnvSpec, demos: Sequence[np.ndarray], perturb: float = 0.0,
                  seed: int | None = None) -> list[np.ndarray]:
    """Batched replay: s'_0 = s_0, a'_t = f(s'_{t-1}, s_t), s'_t = step(s'_{t-1}, a'_t) [+ noise].

    With ``perturb > 0`` each post-step state receives independent U(-perturb, perturb)
    per-coordinate noise before it is fed back. Each replay runs exactly as many steps
    as its demonstration, ignoring terminal flags.
    """
    model.check_target(target)
    if perturb == 0 and len(demos) > 1:
        # BLAS rounding can depend on a row's position in the batch, so identical
        # demonstrations are replayed once and share the result
        keys = [(np.shape(st), np.ascontiguousarray(st, dtype=np.float64).tobytes()) for st in demos]
        first = {}
        slot = [first.setdefault(k, len(first)) for k in keys]
        if len(first) < len(demos):
            uniq = [None] * len(first)
            for st, j in zip(demos, slot):
                if uniq[j] is None:
                    uniq[j] = st
            reps = replay_states(model, target, uniq)
            return [reps[j].copy() for j in slot]
    lengths = np.array([len(d) for d in demos])
    if np.any(lengths < 2):
        raise InvalidTrajectoryError("replay needs trajectories with at least one transition")
    b, L, d = len(demos), int(lengths.max()), target.state_dim
    D = np.empty((b, L, d))
    for i, st in enumerate(demos):
        D[i, : len(st)] = st
        D[i, len(st):] = st[-1]
    out = np.empty_like(D)
    out[:, 0] = D[:, 0]
    rng = np.random.default_rng(seed) if perturb > 0 else None
    cur = D[:, 0]
    for t in range(1, L):
        a = model.predict(cur, D[:, t])
        active = lengths > t
        bad = active & ~np.all(np.isfinite(a), axis=1)
        if bad.any():
            raise ReplayFailedError(t, np.flatnonzero(bad))
        a = np.where(active[:, None], a, 0.0)
        nxt, _ = envs.step(target, cur, a)
        if rng is not None:
            nxt = nxt + rng.uniform(-perturb, perturb, size=nxt.shape)
        out[:, t] = nxt
        cur = nxt
    return [out[i, :n] for i, n in enumerate(lengths)]


def replay(model, target: EnvSpec, xi: Trajectory) -> Trajectory:
    states = replay_states(model, target, [xi.states])[0]
    return Trajectory(states, None, xi.source_tag, xi.seed)
