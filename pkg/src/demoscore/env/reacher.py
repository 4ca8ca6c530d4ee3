"""One-joint, one-link planar reacher whose joint may rotate in a single direction only."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

VARIANT_SIGNS = {"ccw": 1, "cw": -1}
STATE_DIM = 3  # joint angle, goal x, goal y
ACTION_DIM = 1  # joint angular velocity


@dataclass(frozen=True)
class ReacherParams:
    link_length: float = 10.0
    rotation_sign: int = 1  # +1 counterclockwise-only, -1 clockwise-only
    joint_limit: float = math.radians(150.0)  # reachable sweep from the start angle
    goal_wedge_halfangle: float = math.atan(0.5)
    wedge_height: float = 10.0
    angular_speed_limit: float = 1.0
    start_angle: float = 0.0

    def __post_init__(self):
        if self.rotation_sign not in (1, -1):
            raise ValueError("rotation_sign must be +1 or -1")
        if self.link_length <= 0 or self.angular_speed_limit <= 0 or self.wedge_height <= 0:
            raise ValueError("link_length, angular_speed_limit and wedge_height must be positive")
        if not 0 < self.goal_wedge_halfangle < math.pi / 2:
            raise ValueError("goal_wedge_halfangle must be in (0, pi/2)")

    @property
    def joint_range(self) -> tuple[float, float]:
        if self.rotation_sign > 0:
            return self.start_angle, self.start_angle + self.joint_limit
        return self.start_angle - self.joint_limit, self.start_angle


# the goal wedges point up and down from the joint; vertex at the joint
WEDGE_AXES = (math.pi / 2, -math.pi / 2)


def action_box(p: ReacherParams):
    w = p.angular_speed_limit
    return (np.array([0.0]), np.array([w])) if p.rotation_sign > 0 else (np.array([-w]), np.array([0.0]))


def sample_goal(p: ReacherParams, rng: np.random.Generator) -> np.ndarray:
    axis = WEDGE_AXES[rng.integers(2)]
    # uniform in the isosceles triangle: depth ~ h*sqrt(u), lateral uniform across the width
    depth = p.wedge_height * math.sqrt(rng.uniform())
    lateral = depth * math.tan(p.goal_wedge_halfangle) * rng.uniform(-1.0, 1.0)
    c, s = math.cos(axis), math.sin(axis)
    return np.array([depth * c - lateral * s, depth * s + lateral * c])


def sample_initial(p: ReacherParams, rng: np.random.Generator) -> np.ndarray:
    g = sample_goal(p, rng)
    return np.array([p.start_angle, g[0], g[1]])


def in_wedge(p: ReacherParams, g) -> np.ndarray:
    """Whether goal points lie in one of the two triangles."""
    g = np.asarray(g)
    ok = np.zeros(g.shape[:-1], dtype=bool)
    for axis in WEDGE_AXES:
        c, s = math.cos(axis), math.sin(axis)
        depth = g[..., 0] * c + g[..., 1] * s
        lateral = -g[..., 0] * s + g[..., 1] * c
        tol = 1e-12
        ok |= (
            (depth >= -tol)
            & (depth <= p.wedge_height + tol)
            & (np.abs(lateral) <= depth * math.tan(p.goal_wedge_halfangle) + tol)
        )
    return ok


def step(p: ReacherParams, dt: float, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    lo_a, hi_a = action_box(p)
    u = np.clip(a[..., 0], lo_a[0], hi_a[0])
    lo, hi = p.joint_range
    phi = np.clip(s[..., 0] + u * dt, lo, hi)
    return np.stack([phi, s[..., 1], s[..., 2]], axis=-1)


def end_effector(p: ReacherParams, phi) -> np.ndarray:
    phi = np.asarray(phi)
    return p.link_length * np.stack([np.cos(phi), np.sin(phi)], axis=-1)


def distance(p: ReacherParams, s) -> np.ndarray:
    ee = end_effector(p, s[..., 0])
    return np.hypot(ee[..., 0] - s[..., 1], ee[..., 1] - s[..., 2])


def reward(p: ReacherParams, s, s_next) -> np.ndarray:
    return -distance(p, s_next)


def terminal(p: ReacherParams, s) -> np.ndarray:
    # no absorbing goal: episodes run to the step budget
    return np.zeros(np.shape(s)[:-1], dtype=bool)


def cause(p: ReacherParams, s) -> np.ndarray:
    return np.full(np.shape(s)[:-1], "", dtype=object)


def best_angle(p: ReacherParams, phi: np.ndarray, goal: np.ndarray) -> np.ndarray:
    """Reachable joint angle (given one-way rotation) minimising end-effector distance to goal."""
    lo, hi = p.joint_range
    psi = np.arctan2(goal[:, 1], goal[:, 0])
    if p.rotation_sign > 0:
        a, b = phi, np.full_like(phi, hi)
    else:
        a, b = np.full_like(phi, lo), phi
    cands = [a, b]
    # first copy of the goal direction at or after the interval start
    k = np.ceil((a - psi) / (2 * np.pi))
    first = psi + 2 * np.pi * k
    inside = first <= b
    cands.append(np.where(inside, first, phi))
    cands = np.stack(cands, axis=1)
    ee = p.link_length * np.stack([np.cos(cands), np.sin(cands)], axis=-1)
    d = np.linalg.norm(ee - goal[:, None, :], axis=-1)
    # prefer the smallest rotation among (near-)ties
    d = d + 1e-9 * np.abs(cands - phi[:, None])
    return cands[np.arange(len(phi)), np.argmin(d, axis=1)]


def optimal_action(p: ReacherParams, dt: float, s: np.ndarray) -> np.ndarray:
    s = np.atleast_2d(s)
    target = best_angle(p, s[:, 0], s[:, 1:3])
    lo_a, hi_a = action_box(p)
    u = np.clip((target - s[:, 0]) / dt, lo_a[0], hi_a[0])
    return u[:, None]
