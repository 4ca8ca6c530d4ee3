"""Deterministic kinematic environments with interchangeable dynamics variants.

``step``/``reward`` accept a single state ``(d,)`` or a batch ``(B, d)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from demoscore.env import driving, reacher
from demoscore.traj import Trajectory, TrajectorySet

FAMILIES = ("driving2d", "reacher1j")
VARIANTS = {"driving2d": tuple(driving.VARIANT_SPEEDS), "reacher1j": tuple(reacher.VARIANT_SIGNS)}
TERMINATION_CAUSES = ("goal", "obstacle", "out", "timeout")


class InvalidStateError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSpec:
    family: str
    variant: str
    horizon: int
    dt: float
    params: driving.DrivingParams | reacher.ReacherParams
    seed: int = 0
    gamma: float = 0.99

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown environment family {self.family!r}")
        if self.variant not in VARIANTS[self.family]:
            raise ValueError(f"variant {self.variant!r} not in {VARIANTS[self.family]}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        want = driving.DrivingParams if self.family == "driving2d" else reacher.ReacherParams
        if not isinstance(self.params, want):
            raise TypeError(f"{self.family} needs {want.__name__}")
        if self.family == "driving2d" and self.params.speed != driving.VARIANT_SPEEDS[self.variant]:
            raise ValueError("driving speed does not match the variant")
        if self.family == "reacher1j" and self.params.rotation_sign != reacher.VARIANT_SIGNS[self.variant]:
            raise ValueError("reacher rotation sign does not match the variant")

    @property
    def _mod(self):
        return driving if self.family == "driving2d" else reacher

    @property
    def state_dim(self) -> int:
        return self._mod.STATE_DIM

    @property
    def action_dim(self) -> int:
        return self._mod.ACTION_DIM

    @property
    def action_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self._mod.action_box(self.params)

    @property
    def action_scale(self) -> float:
        lo, hi = self.action_box
        return float(np.max(hi - lo)) if self.family == "reacher1j" else float(np.max(hi))

    def with_variant(self, variant: str) -> "EnvSpec":
        return make_spec(self.family, variant, horizon=self.horizon, dt=self.dt, seed=self.seed,
                         gamma=self.gamma, **_variant_free(self))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = {k: _listify(v) for k, v in d["params"].items()}
        return d


def _listify(v):
    if isinstance(v, tuple):
        return [_listify(x) for x in v]
    return v


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def _variant_free(spec: EnvSpec) -> dict:
    d = asdict(spec.params)
    d.pop("speed" if spec.family == "driving2d" else "rotation_sign")
    return d


DEFAULTS = {
    "driving2d": {"horizon": 200, "dt": 0.1},
    "reacher1j": {"horizon": 80, "dt": 0.05},
}


def make_spec(family: str, variant: str, *, horizon: int | None = None, dt: float | None = None,
              seed: int = 0, gamma: float = 0.99, **param_overrides) -> EnvSpec:
    if family not in FAMILIES:
        raise ValueError(f"unknown environment family {family!r}")
    if variant not in VARIANTS[family]:
        raise ValueError(f"variant {variant!r} not in {VARIANTS[family]}")
    overrides = {k: _tuplify(v) for k, v in param_overrides.items()}
    if family == "driving2d":
        params = driving.DrivingParams(speed=driving.VARIANT_SPEEDS[variant], **overrides)
    else:
        params = reacher.ReacherParams(rotation_sign=reacher.VARIANT_SIGNS[variant], **overrides)
    d = DEFAULTS[family]
    return EnvSpec(family, variant, d["horizon"] if horizon is None else horizon,
                   d["dt"] if dt is None else dt, params, seed, gamma)


def spec_from_dict(d: dict) -> EnvSpec:
    params = dict(d.get("params", {}))
    params.pop("speed", None)
    params.pop("rotation_sign", None)
    return make_spec(d["family"], d["variant"], horizon=d.get("horizon"), dt=d.get("dt"),
                     seed=d.get("seed", 0), gamma=d.get("gamma", 0.99), **params)


# --- dynamics ----------------------------------------------------------------


def _check(x, name):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidStateError(f"non-finite {name}")
    return x


def _rngs(seed: int):
    return np.random.default_rng([int(seed), 0])


def reset(spec: EnvSpec, rng_seed: int) -> np.ndarray:
    return spec._mod.sample_initial(spec.params, _rngs(rng_seed))


def step(spec: EnvSpec, s, a):
    """Advance one step; returns ``(s_next, terminal)`` where terminal excludes the step budget."""
    s = _check(s, "state")
    a = _check(a, "action")
    if spec.family == "driving2d":
        s_next = driving.step(spec.params, spec.dt, s, a)
    else:
        s_next = reacher.step(spec.params, spec.dt, s, a)
    term = spec._mod.terminal(spec.params, s_next)
    return s_next, (bool(term) if np.ndim(term) == 0 else term)


def reward(spec: EnvSpec, s, s_next):
    r = spec._mod.reward(spec.params, np.asarray(s), np.asarray(s_next))
    return float(r) if np.ndim(r) == 0 else np.asarray(r, dtype=np.float64)


def terminal_flags(spec: EnvSpec, s) -> np.ndarray:
    return spec._mod.terminal(spec.params, np.asarray(s))


def termination_cause(spec: EnvSpec, s):
    return spec._mod.cause(spec.params, np.asarray(s))


def clip_action(spec: EnvSpec, a) -> np.ndarray:
    lo, hi = spec.action_box
    return np.clip(a, lo, hi)


# --- controllers -------------------------------------------------------------


class Controller:
    """Batched state -> action map. ``begin`` is called once per batch of episodes."""

    def begin(self, spec: EnvSpec, seeds: Sequence[int]) -> None:
        pass

    def act(self, states: np.ndarray, t: int) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, state, t: int = 0):
        s = np.asarray(state, dtype=np.float64)
        out = self.act(np.atleast_2d(s), t)
        return out[0] if s.ndim == 1 else out


class OptimalController(Controller):
    def __init__(self, spec: EnvSpec):
        self.spec = spec

    def act(self, states, t):
        if self.spec.family == "driving2d":
            return driving.optimal_action(self.spec.params, states)
        return reacher.optimal_action(self.spec.params, self.spec.dt, states)


class RandomController(Controller):
    """I.i.d. uniform actions from the action box, one stream per episode seed."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self._acts = None

    def begin(self, spec, seeds):
        lo, hi = spec.action_box
        n = spec.horizon
        self._acts = np.stack(
            [np.random.default_rng([int(s), 1]).uniform(lo, hi, size=(n, len(lo))) for s in seeds]
        )

    def act(self, states, t):
        return self._acts[:, t]


class SuboptimalController(Controller):
    """Optimal controller blended with piecewise-constant random steering and no-op segments.

    Each episode draws a corruption level ``c ~ U(0, noise_scale)``; the executed action is
    ``(1 - c) * a_opt + c * a_noise`` except inside no-op segments (entered with probability
    ``c`` per segment), where it is zero.
    """

    def __init__(self, spec: EnvSpec, noise_scale: float = 1.0, mean_segment: float = 10.0):
        if not 0 <= noise_scale <= 1:
            raise ValueError("noise_scale must be in [0, 1]")
        self.spec = spec
        self.optimal = OptimalController(spec)
        self.noise_scale = noise_scale
        self.mean_segment = mean_segment

    def begin(self, spec, seeds):
        lo, hi = spec.action_box
        n = spec.horizon
        levels, noise, noop = [], [], []
        for s in seeds:
            rng = np.random.default_rng([int(s), 2])
            c = self.noise_scale * rng.uniform()
            vals = np.empty((n, len(lo)))
            off = np.zeros(n, dtype=bool)
            t = 0
            while t < n:
                seg = int(rng.geometric(1.0 / self.mean_segment))
                vals[t:t + seg] = rng.uniform(lo, hi)
                off[t:t + seg] = rng.uniform() < c
                t += seg
            levels.append(c)
            noise.append(vals)
            noop.append(off)
        self.levels = np.array(levels)
        self._noise = np.stack(noise)
        self._noop = np.stack(noop)

    def act(self, states, t):
        a = self.optimal.act(states, t)
        c = self.levels[:, None]
        mixed = (1.0 - c) * a + c * self._noise[:, t]
        mixed = np.where(self._noop[:, t, None], 0.0, mixed)
        # zero may lie outside a one-sided box only at its boundary; clip keeps it legal
        return clip_action(self.spec, mixed)


def demo_policy(spec: EnvSpec, quality: str, noise_scale: float = 1.0) -> Controller:
    if quality == "optimal":
        return OptimalController(spec)
    if quality == "suboptimal":
        return SuboptimalController(spec, noise_scale)
    if quality == "random":
        return RandomController(spec)
    raise ValueError(f"unsupported demo quality {quality!r}")


# --- rollouts ----------------------------------------------------------------


def episode_seeds(seed: int, n: int) -> list[int]:
    return [int(x) for x in np.random.SeedSequence(int(seed)).generate_state(n, dtype=np.uint32)]


@dataclass
class Rollouts:
    states: np.ndarray  # (B, N+1, d), rows past `lengths` are unused
    actions: np.ndarray  # (B, N, k)
    lengths: np.ndarray  # transitions per episode
    causes: list[str]
    seeds: list[int]

    def trajectory(self, i: int, record_actions: bool, tag: str = "unknown") -> Trajectory:
        n = int(self.lengths[i])
        acts = self.actions[i, :n] if record_actions else None
        return Trajectory(self.states[i, : n + 1], acts, tag, self.seeds[i])


def rollout(spec: EnvSpec, policy: Controller | str, seeds: Sequence[int],
            initial_states: np.ndarray | None = None) -> Rollouts:
    if isinstance(policy, str):
        policy = demo_policy(spec, policy)
    seeds = [int(s) for s in seeds]
    b, n = len(seeds), spec.horizon
    S = np.zeros((b, n + 1, spec.state_dim))
    A = np.zeros((b, n, spec.action_dim))
    if initial_states is None:
        S[:, 0] = np.stack([reset(spec, s) for s in seeds])
    else:
        S[:, 0] = initial_states
    policy.begin(spec, seeds)
    alive = np.ones(b, dtype=bool)
    lengths = np.full(b, n)
    causes = ["timeout"] * b
    s = S[:, 0]
    for t in range(n):
        a = clip_action(spec, policy.act(s, t))
        s_next, term = step(spec, s, a)
        S[alive, t + 1] = s_next[alive]
        A[alive, t] = a[alive]
        ended = alive & term
        if ended.any():
            lengths[ended] = t + 1
            labels = termination_cause(spec, s_next)
            for i in np.flatnonzero(ended):
                causes[i] = labels[i]
            alive &= ~term
        if not alive.any():
            break
        s = s_next
    return Rollouts(S, A, lengths, causes, seeds)


def collect(spec: EnvSpec, policy: Controller | str, n: int, record_actions: bool, seed: int,
            source_tag: str = "unknown", role: str | None = None) -> TrajectorySet:
    if n < 1:
        raise ValueError("n must be >= 1")
    ro = rollout(spec, policy, episode_seeds(seed, n))
    trajs = tuple(ro.trajectory(i, record_actions, source_tag) for i in range(n))
    if role is None:
        role = "feasible-samples" if record_actions else "demonstrations"
    return TrajectorySet(trajs, role)
