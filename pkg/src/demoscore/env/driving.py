"""Kinematic 2D car: fixed speed, steering-rate control, goal disc and one rectangular obstacle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VARIANT_SPEEDS = {"slow": 1.0, "fast": 2.0}
STATE_DIM = 3  # x, y, heading (unwrapped)
ACTION_DIM = 1  # heading rate


@dataclass(frozen=True)
class DrivingParams:
    speed: float = 1.0
    steer_limit: float = 1.0
    goal_center: tuple[float, float] = (14.5, 5.0)
    goal_radius: float = 0.8
    # rectangles are (xmin, ymin, xmax, ymax)
    obstacle: tuple[float, float, float, float] = (9.0, 3.0, 11.0, 7.0)
    bounds: tuple[float, float, float, float] = (0.0, 0.0, 16.0, 10.0)
    start_regions: tuple[tuple[float, float, float, float], ...] = (
        (1.0, 4.0, 2.0, 6.0),
        (12.4, 4.4, 13.0, 5.6),
    )
    heading_range: tuple[float, float] = (-0.3, 0.3)
    # goal, obstacle, out-of-bounds, per-step
    alphas: tuple[float, float, float, float] = (1000.0, -500.0, -500.0, -10.0)
    avoid_margin: float = 0.8

    def __post_init__(self):
        if self.speed <= 0 or self.steer_limit <= 0:
            raise ValueError("speed and steer_limit must be positive")
        bx0, by0, bx1, by1 = self.bounds
        ox0, oy0, ox1, oy1 = self.obstacle
        gx, gy = self.goal_center
        r = self.goal_radius
        if not (bx0 <= ox0 < ox1 <= bx1 and by0 <= oy0 < oy1 <= by1):
            raise ValueError("obstacle must lie inside the world bounds")
        if not (bx0 <= gx - r and gx + r <= bx1 and by0 <= gy - r and gy + r <= by1):
            raise ValueError("goal must lie inside the world bounds")
        # closest point of the obstacle to the goal centre
        cx, cy = np.clip(gx, ox0, ox1), np.clip(gy, oy0, oy1)
        if np.hypot(gx - cx, gy - cy) <= r:
            raise ValueError("goal region and obstacle overlap")
        for reg in self.start_regions:
            if not (bx0 <= reg[0] <= reg[2] <= bx1 and by0 <= reg[1] <= reg[3] <= by1):
                raise ValueError(f"start region {reg} outside world bounds")


def action_box(p: DrivingParams):
    return np.array([-p.steer_limit]), np.array([p.steer_limit])


def sample_initial(p: DrivingParams, rng: np.random.Generator) -> np.ndarray:
    k = rng.integers(len(p.start_regions))
    x0, y0, x1, y1 = p.start_regions[k]
    h0, h1 = p.heading_range
    return np.array([rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(h0, h1)])


def step(p: DrivingParams, dt: float, s: np.ndarray, a: np.ndarray) -> np.ndarray:
    x, y, th = s[..., 0], s[..., 1], s[..., 2]
    u = np.clip(a[..., 0], -p.steer_limit, p.steer_limit)
    return np.stack(
        [x + p.speed * np.cos(th) * dt, y + p.speed * np.sin(th) * dt, th + u * dt], axis=-1
    )


def in_goal(p: DrivingParams, s) -> np.ndarray:
    gx, gy = p.goal_center
    return np.hypot(s[..., 0] - gx, s[..., 1] - gy) <= p.goal_radius


def in_obstacle(p: DrivingParams, s) -> np.ndarray:
    x0, y0, x1, y1 = p.obstacle
    x, y = s[..., 0], s[..., 1]
    return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


def out_of_bounds(p: DrivingParams, s) -> np.ndarray:
    x0, y0, x1, y1 = p.bounds
    x, y = s[..., 0], s[..., 1]
    return (x < x0) | (x > x1) | (y < y0) | (y > y1)


def terminal(p: DrivingParams, s) -> np.ndarray:
    return in_goal(p, s) | in_obstacle(p, s) | out_of_bounds(p, s)


def reward(p: DrivingParams, s, s_next) -> np.ndarray:
    a1, a2, a3, a4 = p.alphas
    return (
        a1 * in_goal(p, s_next)
        + a2 * in_obstacle(p, s_next)
        + a3 * out_of_bounds(p, s_next)
        + a4
    )


def cause(p: DrivingParams, s) -> np.ndarray:
    """Per-state termination label: goal / obstacle / out / '' (none)."""
    out = np.full(np.shape(s)[:-1], "", dtype=object)
    out[out_of_bounds(p, s)] = "out"
    out[in_obstacle(p, s)] = "obstacle"
    out[in_goal(p, s)] = "goal"
    return out


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def _segment_hits_rect(px, py, qx, qy, rect) -> np.ndarray:
    """Liang-Barsky clip of segments p->q against an axis-aligned rectangle."""
    x0, y0, x1, y1 = rect
    dx, dy = qx - px, qy - py
    t0 = np.zeros_like(px)
    t1 = np.ones_like(px)
    hit = np.ones(px.shape, dtype=bool)
    for d, lo, hi, p0 in ((dx, x0, x1, px), (dy, y0, y1, py)):
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo - p0) / d
            tb = (hi - p0) / d
        parallel = d == 0
        hit &= ~(parallel & ((p0 < lo) | (p0 > hi)))
        tn = np.where(parallel, -np.inf, np.minimum(ta, tb))
        tf = np.where(parallel, np.inf, np.maximum(ta, tb))
        t0 = np.maximum(t0, tn)
        t1 = np.minimum(t1, tf)
    return hit & (t0 <= t1)


def optimal_action(p: DrivingParams, s: np.ndarray, gain: float = 1.5) -> np.ndarray:
    """Pure pursuit toward the goal, detouring via the corners of an inflated obstacle."""
    s = np.atleast_2d(s)
    x, y, th = s[:, 0], s[:, 1], s[:, 2]
    gx, gy = p.goal_center
    ox0, oy0, ox1, oy1 = p.obstacle
    m = p.avoid_margin
    check = (ox0 - 0.75 * m, oy0 - 0.75 * m, ox1 + 0.75 * m, oy1 + 0.75 * m)
    tx = np.full_like(x, gx)
    ty = np.full_like(y, gy)
    blocked = _segment_hits_rect(x, y, tx, ty, check)
    side_y = np.where(y >= 0.5 * (oy0 + oy1), oy1 + m, oy0 - m)
    back_x = np.full_like(x, ox1 + m)
    front_x = np.full_like(x, ox0 - m)
    back_blocked = _segment_hits_rect(x, y, back_x, side_y, check)
    wx = np.where(back_blocked, front_x, back_x)
    tx = np.where(blocked, wx, tx)
    ty = np.where(blocked, side_y, ty)
    desired = np.arctan2(ty - y, tx - x)
    u = np.clip(gain * _wrap(desired - th), -p.steer_limit, p.steer_limit)
    return u[:, None]
