"""Experiment configuration: strict JSON with explicit keys for every default."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from demoscore import env as envs
from demoscore.imitation import VARIANTS


class ConfigError(ValueError):
    pass


# per-family experiment defaults: target/demonstrator variants, mixture, sigma
FAMILY_DEFAULTS = {
    "driving2d": {"target": "slow", "demonstrator": "fast", "mixture": (0.30, 0.60, 0.10),
                  "sigma": 100.0},
    "reacher1j": {"target": "ccw", "demonstrator": "cw", "mixture": (0.05, 0.90, 0.05),
                  "sigma": 50.0},
}
MIXTURE_TAGS = ("target-optimal", "target-suboptimal", "other-dynamics")


@dataclass
class EnvSection:
    family: str = "driving2d"
    target_variant: str = "slow"
    demonstrator_variant: str = "fast"
    horizon: int = 200
    dt: float = 0.1
    gamma: float = 0.99
    params: dict = field(default_factory=dict)


@dataclass
class DemoSection:
    n_demos: int = 1000
    n_feasible: int = 500
    mixture: tuple = (0.30, 0.60, 0.10)
    suboptimal_noise: float = 1.0


@dataclass
class InvDynSection:
    hidden: int = 64
    layers: int = 8
    epochs: int = 30  # full passes over the feasible transitions
    batch_size: int = 256
    learning_rate: float = 1e-3


@dataclass
class PolicySection:
    hidden: int = 100
    layers: int = 3
    epochs: int = 200
    batches_per_epoch: int = 20  # minibatches drawn from p_w per epoch
    batch_size: int = 256
    learning_rate: float = 1e-3


@dataclass
class ScoreSection:
    sigma: float = 100.0
    delta: float | None = None
    delta_s: float = 0.001


@dataclass
class EvalSection:
    episodes: int = 100
    variants: tuple = ("ours", "none", "naive", "feasibility_only")
    seeds: tuple = (0, 1, 2, 3, 4)
    sweep_param: str = "sigma"
    sweep_factors: tuple = (0.1, 1.0, 10.0)


@dataclass
class ExperimentConfig:
    seed: int = 0
    env: EnvSection = field(default_factory=EnvSection)
    demos: DemoSection = field(default_factory=DemoSection)
    invdyn: InvDynSection = field(default_factory=InvDynSection)
    policy: PolicySection = field(default_factory=PolicySection)
    scoring: ScoreSection = field(default_factory=ScoreSection)
    evaluation: EvalSection = field(default_factory=EvalSection)

    def __post_init__(self):
        validate(self)

    # -- derived objects --------------------------------------------------

    def target_spec(self) -> envs.EnvSpec:
        return self._spec(self.env.target_variant)

    def demonstrator_spec(self) -> envs.EnvSpec:
        return self._spec(self.env.demonstrator_variant)

    def _spec(self, variant: str) -> envs.EnvSpec:
        e = self.env
        try:
            return envs.make_spec(e.family, variant, horizon=e.horizon, dt=e.dt, seed=self.seed,
                                  gamma=e.gamma, **e.params)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"env: {exc}") from None

    def mixture_counts(self) -> list[int]:
        return largest_remainder(self.demos.mixture, self.demos.n_demos)

    def stage_seed(self, stage: str) -> int:
        return stage_seed(self.seed, stage)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return from_dict({**to_dict(self), "seed": int(seed)})

    def with_sigma(self, sigma: float) -> "ExperimentConfig":
        d = to_dict(self)
        d["scoring"]["sigma"] = float(sigma)
        return from_dict(d)


def default_config(family: str = "driving2d", seed: int = 0) -> ExperimentConfig:
    if family not in FAMILY_DEFAULTS:
        raise ConfigError(f"unknown environment family {family!r}")
    fd = FAMILY_DEFAULTS[family]
    base = envs.DEFAULTS[family]
    return ExperimentConfig(
        seed=seed,
        env=EnvSection(family, fd["target"], fd["demonstrator"], base["horizon"], base["dt"]),
        demos=DemoSection(mixture=fd["mixture"]),
        scoring=ScoreSection(sigma=fd["sigma"]),
    )


def largest_remainder(ratios, total: int) -> list[int]:
    """Integer counts proportional to ``ratios`` summing exactly to ``total``.

    Floors first, then hands the leftover units to the largest fractional parts
    (earlier entries win ties).
    """
    raw = [r * total for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    left = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def stage_seed(master: int, stage: str) -> int:
    """Independent, stable seed for a named pipeline stage."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(stage.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def validate(cfg: ExperimentConfig) -> None:
    e, d = cfg.env, cfg.demos
    if e.family not in envs.FAMILIES:
        raise ConfigError(f"env.family must be one of {envs.FAMILIES}")
    for name in ("target_variant", "demonstrator_variant"):
        if getattr(e, name) not in envs.VARIANTS[e.family]:
            raise ConfigError(f"env.{name} must be one of {envs.VARIANTS[e.family]}")
    if len(d.mixture) != 3 or any(r < 0 for r in d.mixture):
        raise ConfigError("demos.mixture needs three non-negative ratios")
    if abs(sum(d.mixture) - 1.0) > 1e-9:
        raise ConfigError(f"demos.mixture must sum to 1, got {sum(d.mixture)!r}")
    if d.n_demos < 1 or d.n_feasible < 1:
        raise ConfigError("demos.n_demos and demos.n_feasible must be >= 1")
    if not 0 <= d.suboptimal_noise <= 1:
        raise ConfigError("demos.suboptimal_noise must be in [0, 1]")
    for name in ("invdyn", "policy"):
        n = getattr(cfg, name)
        if n.hidden < 1 or n.layers < 1 or n.epochs < 0 or n.batch_size < 1 or n.learning_rate <= 0:
            raise ConfigError(f"{name}: invalid network or training settings")
    if cfg.policy.batches_per_epoch < 1:
        raise ConfigError("policy.batches_per_epoch must be >= 1")
    s = cfg.scoring
    if not s.sigma > 0 or s.delta_s < 0 or (s.delta is not None and not s.delta > 0):
        raise ConfigError("scoring: need sigma > 0, delta > 0 (or null) and delta_s >= 0")
    v = cfg.evaluation
    if v.episodes < 1:
        raise ConfigError("evaluation.episodes must be >= 1")
    bad = [x for x in v.variants if x not in VARIANTS]
    if bad or not v.variants:
        raise ConfigError(f"evaluation.variants must be a non-empty subset of {VARIANTS}")
    if v.sweep_param not in ("sigma", "delta_s"):
        raise ConfigError("evaluation.sweep_param must be 'sigma' or 'delta_s'")
    if any(not f > 0 for f in v.sweep_factors):
        raise ConfigError("evaluation.sweep_factors must be positive")
    cfg.target_spec()
    cfg.demonstrator_spec()


# -- (de)serialisation ----------------------------------------------------


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def to_dict(cfg: ExperimentConfig) -> dict:
    d = _plain(asdict(cfg))
    # spell out every environment parameter, not just overrides
    spec = cfg.target_spec().to_dict()
    params = spec["params"]
    params.pop("speed", None)
    params.pop("rotation_sign", None)
    d["env"]["params"] = params
    return d


def _section(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kw = {k: (tuple(v) if isinstance(v, list) and k != "params" else v) for k, v in data.items()}
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be an object")
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(d) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    family = d.get("env", {}).get("family", "driving2d")
    base = default_config(family) if family in FAMILY_DEFAULTS else ExperimentConfig()
    sections = {}
    for f in fields(ExperimentConfig):
        if f.name == "seed":
            continue
        merged = {**asdict(getattr(base, f.name)), **d.get(f.name, {})} if isinstance(
            d.get(f.name, {}), dict) else d[f.name]
        sections[f.name] = _section(type(getattr(base, f.name)), merged, f.name)
    seed = d.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    return ExperimentConfig(seed=seed, **sections)


def dumps(cfg: ExperimentConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n"


def loads(text: str) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    # a manifest embeds the resolved config under "config"
    if isinstance(data, dict) and "manifest_version" in data:
        data = data["config"]
    return from_dict(data)


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text())


def save(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps(cfg))
