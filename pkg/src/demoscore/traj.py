"""Trajectory and transition data model plus the line-oriented trajectory file format."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SOURCE_TAGS = ("target-optimal", "target-suboptimal", "other-dynamics", "unknown")
SET_ROLES = ("demonstrations", "feasible-samples")


class InvalidTrajectoryError(ValueError):
    pass


class DimensionError(ValueError):
    pass


def _frozen(a, ndim: int, what: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise InvalidTrajectoryError(f"{what} must be a {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidTrajectoryError(f"{what} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``(N+1, state_dim)``, optional actions ``(N, action_dim)``, provenance metadata."""

    states: np.ndarray
    actions: np.ndarray | None = None
    source_tag: str = "unknown"
    seed: int = 0

    def __post_init__(self):
        states = _frozen(self.states, 2, "states")
        if len(states) == 0:
            raise InvalidTrajectoryError("trajectory needs at least one state")
        object.__setattr__(self, "states", states)
        if self.actions is not None:
            actions = _frozen(self.actions, 2, "actions")
            if len(actions) != len(states) - 1:
                raise InvalidTrajectoryError(
                    f"expected {len(states) - 1} actions for {len(states)} states, got {len(actions)}"
                )
            object.__setattr__(self, "actions", actions)
        if self.source_tag not in SOURCE_TAGS:
            raise InvalidTrajectoryError(f"unknown source tag {self.source_tag!r}")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return 0 if self.actions is None else self.actions.shape[1]

    def without_actions(self) -> "Trajectory":
        return replace(self, actions=None)


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    trajectories: tuple[Trajectory, ...]
    role: str = "demonstrations"

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        object.__setattr__(self, "trajectories", trajs)
        if self.role not in SET_ROLES:
            raise ValueError(f"unknown set role {self.role!r}")
        if self.role == "feasible-samples":
            for i, t in enumerate(trajs):
                if t.actions is None:
                    raise InvalidTrajectoryError(f"feasible-sample trajectory {i} carries no actions")

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    @property
    def tags(self) -> list[str]:
        return [t.source_tag for t in self.trajectories]

    def fingerprint(self) -> str:
        """sha256 over the serialized set; identical content gives identical digests."""
        return hashlib.sha256(dumps_set(self).encode()).hexdigest()


def transitions(t: Trajectory) -> list[tuple[np.ndarray, np.ndarray]]:
    if len(t.states) < 2:
        raise InvalidTrajectoryError("trajectory with fewer than 2 states has no transition")
    return [(t.states[i], t.states[i + 1]) for i in range(len(t.states) - 1)]


def transition_arrays(trajs: Iterable[Trajectory]) -> tuple[np.ndarray, np.ndarray]:
    """Stack every (s_t, s_{t+1}) pair of ``trajs`` in trajectory-then-step order."""
    s, s_next = [], []
    for t in trajs:
        if len(t.states) < 2:
            raise InvalidTrajectoryError("trajectory with fewer than 2 states has no transition")
        s.append(t.states[:-1])
        s_next.append(t.states[1:])
    return np.concatenate(s), np.concatenate(s_next)


def mean_pairwise_distance(x, y) -> float:
    """Mean L2 distance between time-aligned states over the shorter prefix."""
    xs = x.states if isinstance(x, Trajectory) else np.asarray(x, dtype=np.float64)
    ys = y.states if isinstance(y, Trajectory) else np.asarray(y, dtype=np.float64)
    if len(xs) == 0 or len(ys) == 0:
        raise InvalidTrajectoryError("cannot compare empty trajectories")
    if xs.shape[1] != ys.shape[1]:
        raise DimensionError(f"state dims differ: {xs.shape[1]} vs {ys.shape[1]}")
    m = min(len(xs), len(ys))
    return float(np.mean(np.linalg.norm(xs[:m] - ys[:m], axis=1)))


# --- file format -----------------------------------------------------------


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def dumps_set(ts: TrajectorySet) -> str:
    lines = [f"#trajset role={ts.role} count={len(ts)}"]
    for t in ts:
        lines.append(
            f"#traj state_dim={t.state_dim} action_dim={t.action_dim} "
            f"source_tag={t.source_tag} seed={t.seed} steps={len(t.states)}"
        )
        for i, s in enumerate(t.states):
            if t.actions is not None and i < len(t.actions):
                lines.append(_fmt(s) + " " + _fmt(t.actions[i]))
            else:
                lines.append(_fmt(s))
    return "\n".join(lines) + "\n"


def _header(line: str, tag: str) -> dict[str, str]:
    parts = line.split()
    if not parts or parts[0] != tag:
        raise ValueError(f"expected {tag!r} header, got {line!r}")
    out = {}
    for kv in parts[1:]:
        k, _, v = kv.partition("=")
        out[k] = v
    return out


def loads_set(text: str) -> TrajectorySet:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty trajectory file")
    head = _header(lines[0], "#trajset")
    count = int(head["count"])
    pos = 1
    trajs = []
    for _ in range(count):
        th = _header(lines[pos], "#traj")
        pos += 1
        sd, ad, steps = int(th["state_dim"]), int(th["action_dim"]), int(th["steps"])
        states = np.empty((steps, sd))
        actions = np.empty((steps - 1, ad)) if ad else None
        for i in range(steps):
            vals = [float(v) for v in lines[pos + i].split(" ")]
            want = sd + ad if (ad and i < steps - 1) else sd
            if len(vals) != want:
                raise ValueError(f"line {pos + i + 1}: expected {want} values, got {len(vals)}")
            states[i] = vals[:sd]
            if ad and i < steps - 1:
                actions[i] = vals[sd:]
        pos += steps
        trajs.append(Trajectory(states, actions, th["source_tag"], int(th["seed"])))
    if pos != len(lines):
        raise ValueError(f"trailing content after {count} trajectories")
    return TrajectorySet(tuple(trajs), head["role"])


def save_set(ts: TrajectorySet, path) -> None:
    Path(path).write_text(dumps_set(ts))


def load_set(path) -> TrajectorySet:
    return loads_set(Path(path).read_text())


def strip_actions(ts: Sequence[Trajectory] | TrajectorySet) -> TrajectorySet:
    return TrajectorySet(tuple(t.without_actions() for t in ts), "demonstrations")
