"""Feasibility score: replay distance normalised between calibrated thresholds."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from demoscore.env import EnvSpec
from demoscore.invdyn import replay_states
from demoscore.traj import Trajectory, TrajectorySet


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class FeasibilityCalibration:
    d_min: float
    d_max: float
    delta_s: float
    calibration_seed: int
    source: str = ""  # fingerprint of the feasible-sample set

    def __post_init__(self):
        if not 0 <= self.d_min < self.d_max:
            raise CalibrationError(f"need 0 <= d_min < d_max, got d_min={self.d_min}, d_max={self.d_max}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FeasibilityResult:
    index: int
    w_f: float
    distance: float


def _mean_dists(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> np.ndarray:
    return np.array([float(np.mean(np.linalg.norm(x - y, axis=1))) for x, y in zip(a, b)])


def replay_distances(model, target: EnvSpec, trajs: Sequence[Trajectory], perturb: float = 0.0,
                     seed: int | None = None) -> np.ndarray:
    """F(xi, xi') for every trajectory (mean L2 between demo and replay states)."""
    demos = [t.states for t in trajs]
    return _mean_dists(demos, replay_states(model, target, demos, perturb, seed))


def calibrate(model, target: EnvSpec, feasible: TrajectorySet, delta_s: float,
              seed: int) -> FeasibilityCalibration:
    """d_min from plain replays of the feasible samples, d_max from perturbed replays."""
    if len(feasible) == 0:
        raise CalibrationError("calibration needs at least one feasible trajectory")
    if delta_s < 0:
        raise CalibrationError("delta_s must be >= 0")
    d_min = float(np.min(replay_distances(model, target, feasible.trajectories)))
    d_max = float(np.max(replay_distances(model, target, feasible.trajectories, delta_s, seed)))
    # a range this small cannot normalise anything: treat as the zero-perturbation collapse
    if d_max - d_min <= 1e-12 * max(1.0, abs(d_max)):
        raise CalibrationError(f"degenerate calibration: d_min={d_min!r}, d_max={d_max!r}")
    return FeasibilityCalibration(d_min, d_max, float(delta_s), int(seed), feasible.fingerprint())


def feasibility_from_distance(F, d_min: float, d_max: float):
    """1 below d_min, 0 above d_max, linear in between (closed interval)."""
    F = np.asarray(F, dtype=np.float64)
    w = np.where(F < d_min, 1.0, np.where(F > d_max, 0.0, 1.0 - (F - d_min) / (d_max - d_min)))
    return float(w) if w.ndim == 0 else w


def feasibility_score(model, target: EnvSpec, calib: FeasibilityCalibration, xi: Trajectory) -> float:
    F = replay_distances(model, target, [xi])[0]
    return feasibility_from_distance(F, calib.d_min, calib.d_max)


def score_set(model, target: EnvSpec, calib: FeasibilityCalibration,
              demos: TrajectorySet | Sequence[Trajectory]) -> list[FeasibilityResult]:
    trajs = list(demos)
    if not trajs:
        raise ValueError("no demonstrations to score")
    F = replay_distances(model, target, trajs)
    w = feasibility_from_distance(F, calib.d_min, calib.d_max)
    return [FeasibilityResult(i, float(w[i]), float(F[i])) for i in range(len(trajs))]
