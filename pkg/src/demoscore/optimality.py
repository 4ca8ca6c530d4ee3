"""Discounted returns, the initial-state rectify table, and the Gaussian optimality score."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from demoscore import env as envs
from demoscore.env import EnvSpec
from demoscore.traj import InvalidTrajectoryError, Trajectory

MODES = ("rectified", "naive")


class NoFeasibleDemosError(ValueError):
    pass


@dataclass(frozen=True)
class OptimalityConfig:
    sigma: float = 100.0
    delta: float | None = None  # None: 10% of the initial-state set diameter
    gamma: float = 0.99
    mode: str = "rectified"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.delta is not None and not self.delta > 0:
            raise ValueError("delta must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"unknown optimality mode {self.mode!r}")


@dataclass(frozen=True)
class ReturnRecord:
    index: int
    eta: float
    s0: np.ndarray


def discounted_return(spec: EnvSpec, xi: Trajectory, gamma: float | None = None) -> float:
    if len(xi.states) < 2:
        raise InvalidTrajectoryError("return needs at least one transition")
    g = spec.gamma if gamma is None else gamma
    r = envs.reward(spec, xi.states[:-1], xi.states[1:])
    return float(np.sum(g ** np.arange(len(r)) * r))


def return_records(spec: EnvSpec, trajs: Sequence[Trajectory], gamma: float | None = None):
    return [ReturnRecord(i, discounted_return(spec, t, gamma), t.states[0]) for i, t in enumerate(trajs)]


def set_diameter(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return 0.0
    sq = np.sum(points * points, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    return float(np.sqrt(max(d2.max(), 0.0)))


def default_delta(s0s: np.ndarray) -> float:
    diam = set_diameter(s0s)
    return 0.1 * diam if diam > 0 else 1.0


@dataclass(frozen=True, eq=False)
class RectifyTable:
    """Best feasible return within ``delta`` (L2) of each demonstration's initial state."""

    s0: np.ndarray  # (D, d) query initial states, one per record
    best_eta: np.ndarray  # (D,)
    fallback: np.ndarray  # (D,) bool: neighbourhood held no feasible record
    delta: float
    global_max: float
    feasible_s0: np.ndarray  # candidate initial states (w_f > 0)
    feasible_eta: np.ndarray

    def query(self, s0) -> float:
        s0 = np.asarray(s0, dtype=np.float64)
        d = np.linalg.norm(self.feasible_s0 - s0, axis=1)
        near = d < self.delta
        return float(self.feasible_eta[near].max()) if near.any() else self.global_max


def build_rectify(records: Sequence[ReturnRecord], w_f, cfg: OptimalityConfig) -> RectifyTable:
    w_f = np.asarray(w_f, dtype=np.float64)
    if len(w_f) != len(records):
        raise ValueError("one feasibility score per return record required")
    s0 = np.stack([r.s0 for r in records]).astype(np.float64)
    eta = np.array([r.eta for r in records], dtype=np.float64)
    feas = w_f > 0
    if not feas.any():
        raise NoFeasibleDemosError("no demonstration has positive feasibility; rectify table undefined")
    delta = cfg.delta if cfg.delta is not None else default_delta(s0)
    cand_s0, cand_eta = s0[feas], eta[feas]
    global_max = float(cand_eta.max())
    d = np.linalg.norm(s0[:, None, :] - cand_s0[None, :, :], axis=-1)
    near = d < delta
    masked = np.where(near, cand_eta[None, :], -np.inf)
    best = masked.max(axis=1)
    fallback = ~near.any(axis=1)
    best = np.where(fallback, global_max, best)
    return RectifyTable(s0, best, fallback, float(delta), global_max, cand_s0, cand_eta)


def gaussian_score(eta, reference, sigma: float):
    gap = np.asarray(eta, dtype=np.float64) - np.asarray(reference, dtype=np.float64)
    w = np.exp(-gap * gap / (2.0 * sigma * sigma))
    return float(w) if w.ndim == 0 else w


def optimality_score(record: ReturnRecord, table: RectifyTable, cfg: OptimalityConfig) -> float:
    if cfg.mode == "naive":
        ref = table.global_max
    elif record.index < len(table.best_eta) and np.array_equal(table.s0[record.index], record.s0):
        ref = table.best_eta[record.index]
    else:
        ref = table.query(record.s0)
    return gaussian_score(record.eta, ref, cfg.sigma)


def optimality_scores(records: Sequence[ReturnRecord], table: RectifyTable,
                      cfg: OptimalityConfig) -> np.ndarray:
    eta = np.array([r.eta for r in records])
    ref = table.global_max if cfg.mode == "naive" else table.best_eta
    return np.atleast_1d(gaussian_score(eta, ref, cfg.sigma))
