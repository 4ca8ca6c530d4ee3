"""Combined trajectory weights and the per-transition sampling distribution."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from demoscore.traj import Trajectory


class EmptySupportError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredTrajectory:
    index: int
    w_f: float
    w_o: float
    w: float
    n_transitions: int = 0


def combine(w_f: Mapping[int, float], w_o: Mapping[int, float],
            n_transitions: Mapping[int, int] | None = None) -> list[ScoredTrajectory]:
    """Elementwise product of the two score maps, in the key order of ``w_f``."""
    if set(w_f) != set(w_o):
        missing = sorted(set(w_f) ^ set(w_o))
        raise KeyError(f"score ids do not match: {missing[:10]}")
    n_transitions = n_transitions or {}
    return [ScoredTrajectory(i, float(w_f[i]), float(w_o[i]), float(w_f[i]) * float(w_o[i]),
                             int(n_transitions.get(i, 0)))
            for i in w_f]


@dataclass(frozen=True, eq=False)
class TransitionDistribution:
    traj_index: np.ndarray  # (M,) position of the owning trajectory
    step: np.ndarray  # (M,)
    weights: np.ndarray  # (M,)
    probs: np.ndarray  # (M,)
    cdf: np.ndarray  # (M,) cumulative probabilities

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.probs))

    def entropy(self) -> float:
        p = self.probs[self.probs > 0]
        return float(-np.sum(p * np.log(p)))


def build_distribution(scored: Sequence[ScoredTrajectory],
                       trajs: Sequence[Trajectory]) -> TransitionDistribution:
    if len(scored) != len(trajs):
        raise ValueError("one score per trajectory required")
    idx, steps, weights = [], [], []
    for pos, (sc, t) in enumerate(zip(scored, trajs)):
        n = len(t.states) - 1
        if not (0.0 <= sc.w and math.isfinite(sc.w)):
            raise ValueError(f"invalid weight {sc.w} for trajectory {sc.index}")
        idx.append(np.full(n, pos))
        steps.append(np.arange(n))
        weights.append(np.full(n, sc.w))
    w = np.concatenate(weights) if weights else np.zeros(0)
    total = float(w.sum())
    if not total > 0:
        raise EmptySupportError(
            "every transition has zero weight; loosen the feasibility thresholds (larger delta_s) "
            "or widen sigma")
    p = w / total
    return TransitionDistribution(np.concatenate(idx), np.concatenate(steps), w, p, np.cumsum(p))


def sample(dist: TransitionDistribution, n: int, seed) -> np.ndarray:
    """Inverse-CDF draws; returns row indices into the distribution."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.random(n) * dist.cdf[-1]
    return np.searchsorted(dist.cdf, u, side="right")


def sample_transitions(dist: TransitionDistribution, trajs: Sequence[Trajectory], n: int, seed):
    rows = sample(dist, n, seed)
    s = np.stack([trajs[dist.traj_index[r]].states[dist.step[r]] for r in rows])
    s_next = np.stack([trajs[dist.traj_index[r]].states[dist.step[r] + 1] for r in rows])
    return s, s_next
