"""Experiment pipelines behind the ``run`` command.

Every run writes only inside ``cfg.output``: one CSV per table and a
``summary.json`` holding the resolved config, its hash, the per-kind summary
and the wall-clock duration. CSV payloads are fully determined by the config
and seed; the duration lives in the JSON only.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import capacity as cap
from .config import BOUND, ExperimentConfig
from .env import EnvironmentDrawn, LabeledExample, make_rng, sample_m, sample_meta, sample_task
from .hypo import true_risk
from .learner import RepresentationLearner, env_optimal_loss, meta_test, meta_train, transfer_risk
from .validate import GuaranteeConfig, run_trials, summarize


class ExperimentError(RuntimeError):
    pass


@dataclass
class Table:
    header: list[str]
    rows: list[list] = field(default_factory=list)


@dataclass
class RunReport:
    kind: str
    config: dict
    config_hash: str
    summary: dict
    tables: dict[str, Table]
    duration_s: float = 0.0

    @property
    def passed(self) -> bool | None:
        return self.summary.get("pass")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "config_hash": self.config_hash,
            "config": self.config,
            "summary": self.summary,
            "tables": sorted(self.tables),
            "duration_s": self.duration_s,
        }


def _probe_lists(cfg: ExperimentConfig):
    spec = cfg.params["probes"]
    family = cfg.family
    examples = cfg.environment.support_union()
    head_atoms = cap.head_space_atoms(family, examples)
    head_probes = cap.standard_probes(head_atoms, cap.HEAD_SPACE, spec["singles"], spec["pairs"])
    rep_probes = cap.standard_probes(examples, cap.REP_SPACE, spec["singles"], spec["pairs"])
    for extra in spec["heads"]:
        atoms = tuple((tuple(a["v"]), a["y"]) for a in extra["atoms"])
        probs = tuple(a["p"] for a in extra["atoms"])
        head_probes.append(cap.ProbeMeasure(atoms, probs, cap.HEAD_SPACE))
    for extra in spec["reps"]:
        atoms = tuple(LabeledExample(tuple(a["x"]), a["y"]) for a in extra["atoms"])
        probs = tuple(a["p"] for a in extra["atoms"])
        rep_probes.append(cap.ProbeMeasure(atoms, probs, cap.REP_SPACE))
    return head_probes, rep_probes


def _capacities(cfg: ExperimentConfig, eps_heads: float, eps_reps: float, eps_task: float):
    """(C(eps_heads), C*(eps_reps), C*(eps_task)), from config overrides or probes."""
    given = cfg.params.get("capacities") or {}
    mode = cfg.params["cover_mode"]
    head_probes, rep_probes = _probe_lists(cfg)
    if "heads" in given:
        c_heads = given["heads"]
    else:
        c_heads = cap.head_capacity(cfg.family, eps_heads, head_probes, mode)
    if "reps" in given:
        c_reps = given["reps"]
    else:
        c_reps = cap.rep_capacity(cfg.family, eps_reps, rep_probes, mode)
    if "reps_task" in given:
        c_task = given["reps_task"]
    elif "reps" in given:
        c_task = c_reps
    else:
        c_task = cap.rep_capacity(cfg.family, eps_task, rep_probes, mode)
    return c_heads, c_reps, c_task


def _learner(cfg: ExperimentConfig) -> RepresentationLearner:
    return RepresentationLearner(cfg.family, holdout=cfg.params["holdout"])


def _meta_train_eval(cfg: ExperimentConfig):
    p = cfg.params
    rng = make_rng(cfg.seed)
    env = cfg.environment
    family = cfg.family
    meta = sample_meta(env, p["n"], p["m"], EnvironmentDrawn(), rng)
    mk, heads = meta_train(_learner(cfg), meta)
    f = family.reps[mk.rep_index]
    source = Table(["row", "task_index", "head_index", "empirical_value", "true_value"])
    for i, (row, t) in enumerate(zip(meta.rows, heads)):
        task = env.tasks[row.origin_task_index]
        source.rows.append(
            [i, row.origin_task_index, t.head_index, t.empirical_value,
             true_risk(f, family.heads[t.head_index], family.loss, task)]
        )
    target_env = cfg.target_environment or env
    target_m = p.get("target_m", p["m"])
    targets = Table(["target", "task_index", "head_index", "empirical_value", "true_value"])
    for q in range(p["targets"]):
        i = sample_task(target_env, rng)
        trained = meta_test(mk, family, sample_m(target_env.tasks[i], target_m, rng, i))
        risk = true_risk(f, family.heads[trained.head_index], family.loss, target_env.tasks[i])
        targets.rows.append([q, i, trained.head_index, trained.empirical_value, risk])
    summary = {
        "rep_index": mk.rep_index,
        "rep_coords": list(f.coords),
        "outer_value": mk.outer_value,
        "env_optimal_loss": env_optimal_loss(f, family, env),
        "target_env_optimal_loss": env_optimal_loss(f, family, target_env),
        "mean_target_true_risk": float(np.mean([r[4] for r in targets.rows])),
    }
    return summary, {"source_rows": source, "targets": targets}


def _capacity_table(cfg: ExperimentConfig):
    head_probes, rep_probes = _probe_lists(cfg)
    mode = cfg.params["cover_mode"]
    heads = Table(["eps", "probe_count", "cover_mode", "value"])
    reps = Table(["eps", "probe_count", "cover_mode", "value"])
    for eps in sorted(cfg.params["eps_grid"]):
        c_heads = cap.head_capacity(cfg.family, eps, head_probes, mode)
        c_reps = cap.rep_capacity(cfg.family, eps, rep_probes, mode)
        heads.rows.append([eps, len(head_probes), mode, c_heads])
        reps.rows.append([eps, len(rep_probes), mode, c_reps])
    summary = {
        "probe_lower_bound": True,
        "head_count": len(cfg.family.heads),
        "rep_count": len(cfg.family.reps),
    }
    return summary, {"capacity_heads": heads, "capacity_reps": reps}


BOUND_HEADER = [
    "theorem", "n", "m", "M", "alpha", "delta", "nu", "eps1", "eps2",
    "cap_heads", "cap_reps", "cap_reps_task",
]


def _bound_row(theorem, n, m, bp: cap.BoundParams, c_task):
    return [theorem, n, m, bp.M, bp.alpha, bp.delta, bp.nu, bp.eps1, bp.eps2,
            bp.cap_heads, bp.cap_reps, c_task]


def _bounds_table(cfg: ExperimentConfig):
    p = cfg.params
    M, a, d, nu, s = cfg.family.bound, p["alpha"], p["delta"], p["nu"], p["eps_split"]
    table = Table(BOUND_HEADER)
    e1, e2 = s * a * nu / 8, (1 - s) * a * nu / 8
    c_h, c_r, _ = _capacities(cfg, e1, e2, e2)
    for n in p["n_grid"]:
        bp = cap.BoundParams(M, a, d, nu, e1, e2, n=n, cap_heads=c_h, cap_reps=c_r)
        table.rows.append(_bound_row(1, n, cap.theorem1_m(bp), bp, ""))
    e1, e2 = s * a * nu / 16, (1 - s) * a * nu / 16
    c_h, c_r, c_t = _capacities(cfg, e1, e2, a * nu / 16)
    bp = cap.BoundParams(M, a, d, nu, e1, e2, cap_heads=c_h, cap_reps=c_r, cap_reps_task=c_t)
    n2, m2 = cap.theorem2_nm(bp)
    table.rows.append(_bound_row(2, n2, m2, bp, c_t))
    summary = {"theorem2_n": n2, "theorem2_m": m2, "probe_lower_bound": True}
    return summary, {"bounds": table}


def _guarantee_sizes(cfg: ExperimentConfig, theorem: int):
    """Resolve n and m, replacing 'bound' entries by the theorem's sample sizes."""
    p = cfg.params
    n, m = p["n"], p["m"]
    info = {}
    if BOUND in (n, m):
        M, a, d, nu = cfg.family.bound, p["alpha"], p["delta"], p["nu"]
        task_eps = a * nu / 16
        c_h, c_r, c_t = _capacities(cfg, p["eps1"], p["eps2"], task_eps)
        bp = cap.BoundParams(
            M, a, d, nu, p["eps1"], p["eps2"], n=n if n != BOUND else 1,
            cap_heads=c_h, cap_reps=c_r, cap_reps_task=c_t,
        )
        if theorem == 1:
            m = cap.theorem1_m(bp)
        else:
            bn, _ = cap.theorem2_nm(bp)
            n = bn if n == BOUND else n
            m = cap.theorem2_m_at(bp, n) if m == BOUND else m
        info = {"cap_heads": c_h, "cap_reps": c_r}
        if theorem == 2:
            info["cap_reps_task"] = c_t
    return n, m, info


def _validate(cfg: ExperimentConfig, theorem: int):
    p = cfg.params
    n, m, info = _guarantee_sizes(cfg, theorem)
    gc = GuaranteeConfig(
        theorem, cfg.environment, cfg.family, p["alpha"], p["nu"], p["delta"], n, m,
        trials=p["trials"], base_seed=cfg.seed,
        tasks=tuple(p["tasks"]) if theorem == 1 and "tasks" in p else None,
        learner=_learner(cfg),
    )
    outcomes = run_trials(gc)
    report = summarize(outcomes, gc.delta)
    table = Table(["trial_index", "empirical_value", "true_value", "deviation", "exceeded"])
    for o in outcomes:
        table.rows.append(
            [o.trial_index, o.empirical_value, o.true_value, o.deviation, int(o.exceeded)]
        )
    summary = {**report.as_dict(), "theorem": theorem, "n": n, "m": m, **info}
    return summary, {"trials": table}


def _transfer(cfg: ExperimentConfig):
    p = cfg.params
    learner = _learner(cfg)
    reps = [p["rep"]] if "rep" in p else range(len(cfg.family.reps))
    table = Table(["rep_index", "coords", "estimate", "std_error"])
    for r in reps:
        # same stream for every representation: paired comparison
        rng = make_rng(cfg.seed)
        est, se = transfer_risk(learner, cfg.environment, p["m"], p["trials"], rng, r)
        coords = " ".join(str(c) for c in cfg.family.reps[r].coords)
        table.rows.append([r, coords, est, se])
    best = min(table.rows, key=lambda row: (row[2], row[0]))
    return {"best_rep_index": best[0], "best_estimate": best[2]}, {"transfer": table}


PIPELINES = {
    "MetaTrainEval": _meta_train_eval,
    "CapacityTable": _capacity_table,
    "BoundsTable": _bounds_table,
    "ValidateThm1": lambda cfg: _validate(cfg, 1),
    "ValidateThm2": lambda cfg: _validate(cfg, 2),
    "TransferRisk": _transfer,
}


def write_csv(path: str, table: Table) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.header)
        w.writerows(table.rows)


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> RunReport:
    start = time.perf_counter()
    try:
        summary, tables = PIPELINES[cfg.kind](cfg)
    except (ValueError, ArithmeticError) as exc:
        raise ExperimentError(f"{cfg.kind} failed: {exc}") from exc
    report = RunReport(cfg.kind, cfg.resolved, cfg.config_hash, summary, tables)
    report.duration_s = time.perf_counter() - start
    if write:
        os.makedirs(cfg.output, exist_ok=True)
        for name, table in tables.items():
            write_csv(os.path.join(cfg.output, f"{name}.csv"), table)
        with open(os.path.join(cfg.output, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(report.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report
