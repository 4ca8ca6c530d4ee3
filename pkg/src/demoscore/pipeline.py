"""Pipeline stages: demo generation, scoring, weighted imitation, ablations and sweeps.

Every stage reads and writes plain files in an output directory, so stages can be
rerun independently. All randomness derives from the config's master seed.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from demoscore import __version__
from demoscore import config as config_mod
from demoscore import densenet, feasibility, imitation, invdyn, optimality, traj, weighting
from demoscore import env as envs
from demoscore.config import MIXTURE_TAGS, ExperimentConfig

SCORE_COLUMNS = ("id", "source_tag", "F", "w_f", "eta", "f_rec", "w_o", "w_o_naive", "w")
RESULT_COLUMNS = ("variant", "seed", "mean", "std", "n") + tuple(envs.TERMINATION_CAUSES)
SWEEP_COLUMNS = ("param", "factor", "value", "seed", "variant", "mean", "std", "n")

DEMOS, FEASIBLE, INVDYN = "demos.traj", "feasible.traj", "invdyn.net"
CALIBRATION, SCORES, DISTRIBUTION = "calibration.json", "scores.csv", "distribution.json"
RESULTS, MANIFEST = "results.csv", "manifest.json"


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@contextmanager
def stage(name: str, timings: dict | None = None):
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except (ValueError, RuntimeError, OSError, KeyError) as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
    if timings is not None:
        timings[name] = round(time.perf_counter() - t0, 3)


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def update_manifest(out: Path, cfg: ExperimentConfig, **sections) -> None:
    path = out / MANIFEST
    m = json.loads(path.read_text()) if path.exists() else {}
    m.update({"manifest_version": 1, "tool_version": __version__,
              "config": config_mod.to_dict(cfg)})
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(m.get(key), dict):
            m[key] = {**m[key], **value}
        else:
            m[key] = value
    path.write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")


# -- stage 1: demonstrations --------------------------------------------------


def generate_demos(cfg: ExperimentConfig) -> tuple[traj.TrajectorySet, traj.TrajectorySet]:
    """Mixture of target-optimal, target-suboptimal and demonstrator-optimal rollouts,
    plus random target rollouts (with actions) for inverse dynamics and calibration."""
    target, other = cfg.target_spec(), cfg.demonstrator_spec()
    policies = (envs.demo_policy(target, "optimal"),
                envs.demo_policy(target, "suboptimal", cfg.demos.suboptimal_noise),
                envs.demo_policy(other, "optimal"))
    specs = (target, target, other)
    demos = []
    for tag, spec, pol, n in zip(MIXTURE_TAGS, specs, policies, cfg.mixture_counts()):
        if n:
            demos += envs.collect(spec, pol, n, False, cfg.stage_seed(f"demos/{tag}"), tag)
    feas = envs.collect(target, "random", cfg.demos.n_feasible, True, cfg.stage_seed("feasible"),
                        "unknown", "feasible-samples")
    return traj.TrajectorySet(tuple(demos), "demonstrations"), feas


def cmd_gen_demos(cfg: ExperimentConfig, out) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    with stage("gen-demos", timings):
        demos, feas = generate_demos(cfg)
        traj.save_set(traj.strip_actions(demos), out / DEMOS)
        traj.save_set(feas, out / FEASIBLE)
        counts = dict(zip(MIXTURE_TAGS, cfg.mixture_counts()))
        update_manifest(out, cfg, timings=timings, counts=counts,
                        fingerprints={DEMOS: sha256(out / DEMOS), FEASIBLE: sha256(out / FEASIBLE)})
    return counts


# -- stage 2: scoring ------------------------------------------------------------


@dataclass
class Scores:
    tags: list
    F: np.ndarray
    w_f: np.ndarray
    eta: np.ndarray
    f_rec: np.ndarray
    w_o: np.ndarray
    w_o_naive: np.ndarray
    fallback: np.ndarray
    delta: float

    @property
    def w(self) -> np.ndarray:
        return self.w_f * self.w_o

    def rows(self) -> list[dict]:
        return [{"id": i, "source_tag": self.tags[i], "F": float(self.F[i]),
                 "w_f": float(self.w_f[i]), "eta": float(self.eta[i]),
                 "f_rec": float(self.f_rec[i]), "w_o": float(self.w_o[i]),
                 "w_o_naive": float(self.w_o_naive[i]), "w": float(self.w[i])}
                for i in range(len(self.tags))]

    @classmethod
    def from_rows(cls, rows: list[dict]) -> "Scores":
        col = lambda k: np.array([float(r[k]) for r in rows])
        return cls([r["source_tag"] for r in rows], col("F"), col("w_f"), col("eta"),
                   col("f_rec"), col("w_o"), col("w_o_naive"), np.zeros(len(rows), bool), float("nan"))


def invdyn_config(cfg: ExperimentConfig) -> invdyn.InvDynConfig:
    n = cfg.invdyn
    return invdyn.InvDynConfig(n.hidden, n.layers, densenet.TrainConfig(
        n.learning_rate, n.batch_size, n.epochs, seed=cfg.stage_seed("invdyn")))


def fit_model(cfg: ExperimentConfig, feas: traj.TrajectorySet):
    model, _ = invdyn.fit_inverse_dynamics(feas, cfg.target_spec(), invdyn_config(cfg))
    return model


def feasibility_scores(cfg: ExperimentConfig, model, feas, demos, delta_s: float | None = None):
    target = cfg.target_spec()
    ds = cfg.scoring.delta_s if delta_s is None else delta_s
    calib = feasibility.calibrate(model, target, feas, ds, cfg.stage_seed("calibration"))
    F = feasibility.replay_distances(model, target, list(demos))
    return calib, F, feasibility.feasibility_from_distance(F, calib.d_min, calib.d_max)


def optimality_part(cfg: ExperimentConfig, demos, w_f, sigma: float | None = None):
    target = cfg.target_spec()
    sigma = cfg.scoring.sigma if sigma is None else sigma
    ocfg = optimality.OptimalityConfig(sigma, cfg.scoring.delta, target.gamma)
    records = optimality.return_records(target, list(demos))
    table = optimality.build_rectify(records, w_f, ocfg)
    w_o = optimality.optimality_scores(records, table, ocfg)
    naive = optimality.OptimalityConfig(sigma, cfg.scoring.delta, target.gamma, "naive")
    w_o_naive = optimality.optimality_scores(records, table, naive)
    eta = np.array([r.eta for r in records])
    return eta, table, w_o, w_o_naive


def compute_scores(cfg: ExperimentConfig, demos, F, w_f, sigma: float | None = None) -> Scores:
    eta, table, w_o, w_o_naive = optimality_part(cfg, demos, w_f, sigma)
    return Scores([t.source_tag for t in demos], np.asarray(F), np.asarray(w_f), eta,
                  table.best_eta, w_o, w_o_naive, table.fallback, table.delta)


def distribution_summary(scores: Scores, demos) -> dict:
    dist = weighting.build_distribution(
        [weighting.ScoredTrajectory(i, float(scores.w_f[i]), float(scores.w_o[i]), float(scores.w[i]),
                                    len(t.states) - 1) for i, t in enumerate(demos)], list(demos))
    mass: dict = {}
    for tag, p in zip((demos[i].source_tag for i in dist.traj_index), dist.probs):
        mass[tag] = mass.get(tag, 0.0) + float(p)
    return {"transitions": len(dist), "support_size": dist.support_size,
            "entropy": dist.entropy(), "mass_by_source_tag": dict(sorted(mass.items())),
            "rectify_delta": scores.delta, "rectify_fallbacks": int(scores.fallback.sum())}


def load_inputs(out: Path):
    for name in (DEMOS, FEASIBLE):
        if not (out / name).exists():
            raise StageError("score", f"{out / name} not found; run `demoscore gen-demos` first")
    return traj.load_set(out / DEMOS), traj.load_set(out / FEASIBLE)


def cmd_score(cfg: ExperimentConfig, out) -> Scores:
    out = Path(out)
    timings: dict = {}
    demos, feas = load_inputs(out)
    with stage("score/invdyn", timings):
        model = fit_model(cfg, feas)
        model.save(out / INVDYN)
    with stage("score/feasibility", timings):
        calib, F, w_f = feasibility_scores(cfg, model, feas, demos)
        (out / CALIBRATION).write_text(json.dumps(calib.to_dict(), indent=2, sort_keys=True) + "\n")
    with stage("score/optimality", timings):
        scores = compute_scores(cfg, demos, F, w_f)
    with stage("score/distribution", timings):
        write_csv(out / SCORES, SCORE_COLUMNS, scores.rows())
        summary = distribution_summary(scores, demos)
        (out / DISTRIBUTION).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    update_manifest(out, cfg, timings=timings, calibration=calib.to_dict(),
                    fingerprints={SCORES: sha256(out / SCORES), INVDYN: sha256(out / INVDYN)})
    return scores


# -- stage 3: weighted imitation and evaluation -------------------------------------


def imitation_config(cfg: ExperimentConfig) -> imitation.ImitationConfig:
    n = cfg.policy
    return imitation.ImitationConfig(n.hidden, n.layers, n.batches_per_epoch, densenet.TrainConfig(
        n.learning_rate, n.batch_size, n.epochs, seed=cfg.stage_seed("policy")))


def train_and_evaluate(cfg: ExperimentConfig, variant: str, demos, scores: Scores, model):
    target = cfg.target_spec()
    dist = imitation.variant_distribution(variant, list(demos), scores.w_f, scores.w_o,
                                          scores.w_o_naive)
    policy, _ = imitation.train_policy(dist, list(demos), model, target, imitation_config(cfg))
    report = imitation.evaluate(policy, target, cfg.evaluation.episodes, cfg.stage_seed("eval"))
    return policy, report


def result_row(variant: str, seed: int, report: imitation.EvalReport) -> dict:
    row = {"variant": variant, "seed": seed, "mean": report.mean, "std": report.std, "n": report.n}
    for c in envs.TERMINATION_CAUSES:
        row[c] = report.causes.get(c, 0)
    return row


def append_results(path: Path, rows: Sequence[dict]) -> None:
    old = read_csv(path) if path.exists() else []
    write_csv(path, RESULT_COLUMNS, old + list(rows))


def cmd_train_eval(cfg: ExperimentConfig, out, variant: str) -> imitation.EvalReport:
    out = Path(out)
    timings: dict = {}
    if variant not in imitation.VARIANTS:
        raise StageError("train-eval", f"unknown variant {variant!r}; choose from {imitation.VARIANTS}")
    if not (out / DEMOS).exists():
        raise StageError("train-eval", f"{out / DEMOS} not found; run `demoscore gen-demos` first")
    if not (out / INVDYN).exists() or (variant != "none" and not (out / SCORES).exists()):
        raise StageError("train-eval", f"scores for variant {variant!r} not found in {out}; "
                                       "run `demoscore score` first")
    with stage(f"train-eval/{variant}", timings):
        demos = traj.load_set(out / DEMOS)
        model = invdyn.InverseDynamicsModel.load(out / INVDYN)
        if (out / SCORES).exists():
            scores = Scores.from_rows(read_csv(out / SCORES))
        else:
            ones = np.ones(len(demos))
            scores = Scores(demos.tags, ones, ones, ones, ones, ones, ones, ones.astype(bool), 0.0)
        if len(scores.tags) != len(demos):
            raise StageError("train-eval", "scores.csv does not match the demonstration set")
        policy, report = train_and_evaluate(cfg, variant, demos, scores, model)
        policy.save(out / f"policy_{variant}.net")
        append_results(out / RESULTS, [result_row(variant, cfg.seed, report)])
    update_manifest(out, cfg, timings=timings)
    return report


def cmd_pipeline(cfg: ExperimentConfig, out, variants: Sequence[str] | None = None) -> list[dict]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if (out / RESULTS).exists():
        (out / RESULTS).unlink()
    cmd_gen_demos(cfg, out)
    cmd_score(cfg, out)
    rows = []
    for v in variants or cfg.evaluation.variants:
        rep = cmd_train_eval(cfg, out, v)
        rows.append(result_row(v, cfg.seed, rep))
    update_manifest(out, cfg, fingerprints={RESULTS: sha256(out / RESULTS)})
    return rows


# -- ablations and sweeps ---------------------------------------------------------


def aggregate(rows: Sequence[dict], keys: Sequence[str]) -> list[dict]:
    """Mean over seeds of per-seed mean returns, with the standard error across seeds."""
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(float(r["mean"]))
    out = []
    for k, vals in groups.items():
        a = np.array(vals)
        sd = float(a.std(ddof=1)) if len(a) > 1 else 0.0
        out.append({**dict(zip(keys, k)), "n_seeds": len(a), "mean": float(a.mean()),
                    "std": sd, "se": sd / float(np.sqrt(len(a)))})
    return out


def cmd_ablate(cfg: ExperimentConfig, out, variants: Sequence[str] | None = None,
               seeds: Sequence[int] | None = None) -> list[dict]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    variants = list(variants or cfg.evaluation.variants)
    seeds = list(cfg.evaluation.seeds if seeds is None else seeds)
    if not variants or not seeds:
        raise StageError("ablate", "need at least one variant and one seed")
    rows = []
    for s in seeds:
        rows += cmd_pipeline(cfg.with_seed(s), out / f"seed_{s}", variants)
    write_csv(out / RESULTS, RESULT_COLUMNS, rows)
    write_csv(out / "ablation.csv", ("variant", "n_seeds", "mean", "std", "se"),
              aggregate(rows, ["variant"]))
    update_manifest(out, cfg, ablation={"variants": variants, "seeds": seeds},
                    fingerprints={RESULTS: sha256(out / RESULTS)})
    return rows


def cmd_sweep(cfg: ExperimentConfig, out, factors: Sequence[float] | None = None,
              seeds: Sequence[int] | None = None, variants: Sequence[str] = ("ours",),
              param: str | None = None) -> list[dict]:
    """Scale sigma or delta_s by each factor and retrain; demos and f_id are shared per seed."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    param = param or cfg.evaluation.sweep_param
    factors = list(cfg.evaluation.sweep_factors if factors is None else factors)
    seeds = list(cfg.evaluation.seeds if seeds is None else seeds)
    base = cfg.scoring.sigma if param == "sigma" else cfg.scoring.delta_s
    rows = []
    for s in seeds:
        c = cfg.with_seed(s)
        with stage("sweep/prepare"):
            demos, feas = generate_demos(c)
            demos = traj.strip_actions(demos)
            model = fit_model(c, feas)
            if param == "sigma":
                _, F, w_f = feasibility_scores(c, model, feas, demos)
        for f in factors:
            value = base * f
            with stage(f"sweep/{param}={value!r}"):
                if param == "delta_s":
                    _, F, w_f = feasibility_scores(c, model, feas, demos, value)
                    scores = compute_scores(c, demos, F, w_f)
                else:
                    scores = compute_scores(c, demos, F, w_f, sigma=value)
                for v in variants:
                    _, rep = train_and_evaluate(c, v, demos, scores, model)
                    rows.append({"param": param, "factor": float(f), "value": float(value), "seed": s,
                                 "variant": v, "mean": rep.mean, "std": rep.std, "n": rep.n})
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    write_csv(out / "sweep_summary.csv", ("param", "factor", "value", "variant", "n_seeds", "mean",
                                          "std", "se"),
              aggregate(rows, ["param", "factor", "value", "variant"]))
    update_manifest(out, cfg, sweep={"param": param, "factors": factors, "seeds": seeds,
                                     "variants": list(variants)})
    return rows
