"""Experiment configuration: YAML text in, validated :class:`ExperimentConfig` out.

Validation collects every problem before failing. Each problem is a
:class:`ConfigIssue` whose ``code`` is one of ``parse``, ``unknown_key``,
``missing``, ``type``, ``range`` or ``constraint`` and whose ``key`` is the
dotted path of the offending entry. See README.md for the full schema.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from typing import Any

import yaml

from .env import Environment, InvalidEnvironment, relevant_coordinate_environment
from .hypo import FamilyError, Grid, HypothesisFamily

KINDS = (
    "MetaTrainEval",
    "CapacityTable",
    "BoundsTable",
    "ValidateThm1",
    "ValidateThm2",
    "TransferRisk",
)
SEED_ENV_VAR = "METALAB_SEED"
BOUND = "bound"
U64 = 2**64

TOP_KEYS = {
    "kind", "seed", "output", "loss", "environment", "target_environment", "family", "params",
}
PARAM_KEYS = {
    "alpha", "delta", "nu", "eps1", "eps2", "n", "m", "trials", "probes", "holdout",
    "cover_mode", "eps_grid", "n_grid", "eps_split", "targets", "target_m", "tasks",
    "rep", "capacities",
}
REQUIRED_PARAMS = {
    "MetaTrainEval": ("n", "m"),
    "CapacityTable": ("eps_grid",),
    "BoundsTable": ("alpha", "delta", "nu"),
    "ValidateThm1": ("alpha", "delta", "nu", "n", "m"),
    "ValidateThm2": ("alpha", "delta", "nu", "n", "m"),
    "TransferRisk": ("m",),
}
DEFAULT_PARAMS = {
    "trials": 1000,
    "probes": {"singles": True, "pairs": True, "heads": [], "reps": []},
    "holdout": 0.0,
    "cover_mode": "greedy",
    "n_grid": [1, 2, 4, 8, 16, 32],
    "eps_split": 0.5,
    "targets": 10,
}
GENERATORS = {"relevant_coordinate": relevant_coordinate_environment}


@dataclass(frozen=True)
class ConfigIssue:
    code: str
    key: str
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.key}: {self.message}"


class ConfigError(Exception):
    def __init__(self, issues: list[ConfigIssue]):
        self.issues = list(issues)
        super().__init__("\n".join(str(i) for i in self.issues))


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    kind: str
    seed: int
    output: str
    environment: Environment
    family: HypothesisFamily
    params: dict
    resolved: dict
    target_environment: Environment | None = None

    @property
    def config_hash(self) -> str:
        """Git blob hash of the canonical JSON of the resolved config."""
        data = canonical_json(self.resolved).encode()
        return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class _Checker:
    def __init__(self) -> None:
        self.issues: list[ConfigIssue] = []

    def add(self, code: str, key: str, message: str) -> None:
        self.issues.append(ConfigIssue(code, key, message))

    def keys(self, section: dict, allowed: set, prefix: str) -> None:
        for k in section:
            if k not in allowed:
                self.add("unknown_key", f"{prefix}{k}", "not a recognised key")

    def number(self, section: dict, key: str, path: str, lo=None, hi=None,
               lo_open=True, hi_open=True, integer=False):
        v = section[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (
            integer and not isinstance(v, int)
        ):
            self.add("type", path, f"expected {'an integer' if integer else 'a number'}, got {v!r}")
            return None
        bad = (lo is not None and (v <= lo if lo_open else v < lo)) or (
            hi is not None and (v >= hi if hi_open else v > hi)
        )
        if bad:
            left = "(" if lo_open else "["
            right = ")" if hi_open else "]"
            rng = f"{left}{'-inf' if lo is None else lo}, {'inf' if hi is None else hi}{right}"
            self.add("range", path, f"value {v!r} outside {rng}")
            return None
        return v


def _build_environment(spec: Any, path: str, chk: _Checker) -> Environment | None:
    if not isinstance(spec, dict):
        chk.add("type", path, "expected a mapping")
        return None
    if "generator" in spec:
        args = dict(spec)
        name = args.pop("generator")
        gen = GENERATORS.get(name)
        if gen is None:
            chk.add("range", f"{path}.generator", f"unknown generator {name!r}")
            return None
        try:
            return gen(**args)
        except TypeError as exc:
            chk.add("unknown_key", path, str(exc))
        except InvalidEnvironment as exc:
            chk.add("constraint", path, str(exc))
        return None
    chk.keys(spec, {"input_dim", "tasks"}, f"{path}.")
    if "tasks" not in spec:
        chk.add("missing", f"{path}.tasks", "required")
        return None
    tasks = spec["tasks"]
    if not isinstance(tasks, list) or not tasks:
        chk.add("type", f"{path}.tasks", "expected a nonempty list")
        return None
    ok = True
    for i, t in enumerate(tasks):
        tp = f"{path}.tasks[{i}]"
        if not isinstance(t, dict):
            chk.add("type", tp, "expected a mapping")
            ok = False
            continue
        chk.keys(t, {"p", "support"}, f"{tp}.")
        for k in ("p", "support"):
            if k not in t:
                chk.add("missing", f"{tp}.{k}", "required")
                ok = False
        if not isinstance(t.get("support", []), list):
            chk.add("type", f"{tp}.support", "expected a list")
            ok = False
            continue
        for j, a in enumerate(t.get("support", [])):
            ap = f"{tp}.support[{j}]"
            if not isinstance(a, dict):
                chk.add("type", ap, "expected a mapping")
                ok = False
                continue
            chk.keys(a, {"x", "y", "p"}, f"{ap}.")
            for k in ("x", "y", "p"):
                if k not in a:
                    chk.add("missing", f"{ap}.{k}", "required")
                    ok = False
    if not ok:
        return None
    try:
        return Environment.from_dict(spec)
    except (InvalidEnvironment, TypeError, ValueError) as exc:
        chk.add("constraint", path, str(exc))
        return None


def _build_family(spec: Any, input_dim: int, bound: float, chk: _Checker):
    if not isinstance(spec, dict):
        chk.add("type", "family", "expected a mapping")
        return None
    chk.keys(spec, {"v_dim", "weights", "bias"}, "family.")
    grids = {}
    for name in ("weights", "bias"):
        g = spec.get(name)
        if g is None:
            chk.add("missing", f"family.{name}", "required")
            continue
        if not isinstance(g, dict):
            chk.add("type", f"family.{name}", "expected a mapping with lo, step, count")
            continue
        chk.keys(g, {"lo", "step", "count"}, f"family.{name}.")
        vals = {}
        for k in ("lo", "step", "count"):
            if k not in g:
                chk.add("missing", f"family.{name}.{k}", "required")
                continue
            if k == "lo":
                vals[k] = chk.number(g, k, f"family.{name}.{k}")
            elif k == "step":
                vals[k] = chk.number(g, k, f"family.{name}.{k}", lo=0)
            else:
                vals[k] = chk.number(g, k, f"family.{name}.{k}", lo=1, lo_open=False, integer=True)
        if len(vals) == 3 and None not in vals.values():
            grids[name] = Grid(vals["lo"], vals["step"], vals["count"])
    v_dim = spec.get("v_dim", 1)
    checked = chk.number(
        {"v_dim": v_dim}, "v_dim", "family.v_dim", lo=1, lo_open=False, integer=True
    )
    if checked is None:
        return None
    if v_dim > input_dim:
        chk.add("range", "family.v_dim", f"v_dim {v_dim} exceeds input dimension {input_dim}")
        return None
    if len(grids) != 2:
        return None
    try:
        return HypothesisFamily.build(input_dim, v_dim, grids["weights"], grids["bias"], bound)
    except FamilyError as exc:
        chk.add("constraint", "family", str(exc))
        return None


def _check_params(kind: str, p: dict, chk: _Checker) -> None:
    num = chk.number
    unit = dict(lo=0, hi=1)
    if "alpha" in p:
        num(p, "alpha", "params.alpha", **unit)
    if "delta" in p:
        num(p, "delta", "params.delta", **unit)
    if "nu" in p:
        num(p, "nu", "params.nu", lo=0)
    for k in ("eps1", "eps2"):
        if k in p:
            num(p, k, f"params.{k}", **unit)
    for k in ("n", "m"):
        if k in p and p[k] != BOUND:
            num(p, k, f"params.{k}", lo=1, lo_open=False, integer=True)
    min_trials = 100 if kind.startswith("Validate") else 2
    num(p, "trials", "params.trials", lo=min_trials, lo_open=False, integer=True)
    num(p, "holdout", "params.holdout", lo=0, hi=1, lo_open=False)
    num(p, "eps_split", "params.eps_split", **unit)
    num(p, "targets", "params.targets", lo=1, lo_open=False, integer=True)
    if "target_m" in p:
        num(p, "target_m", "params.target_m", lo=1, lo_open=False, integer=True)
    if "rep" in p:
        num(p, "rep", "params.rep", lo=0, lo_open=False, integer=True)
    if p["cover_mode"] not in ("exact", "greedy"):
        chk.add("range", "params.cover_mode", "must be 'exact' or 'greedy'")
    for key, lo in (("eps_grid", 0), ("n_grid", 1)):
        if key in p:
            vals = p[key]
            if not isinstance(vals, list) or not vals:
                chk.add("type", f"params.{key}", "expected a nonempty list")
                continue
            for i, v in enumerate(vals):
                if key == "n_grid":
                    num({key: v}, key, f"params.{key}[{i}]", lo=lo, lo_open=False, integer=True)
                else:
                    num({key: v}, key, f"params.{key}[{i}]", lo=lo)
    if "tasks" in p:
        if not isinstance(p["tasks"], list) or not all(
            isinstance(i, int) and not isinstance(i, bool) for i in p["tasks"]
        ):
            chk.add("type", "params.tasks", "expected a list of task indices")
    probes = p["probes"]
    if not isinstance(probes, dict):
        chk.add("type", "params.probes", "expected a mapping")
    else:
        chk.keys(probes, {"singles", "pairs", "heads", "reps"}, "params.probes.")
        for space, point_key in (("heads", "v"), ("reps", "x")):
            extras = probes.get(space, [])
            if not isinstance(extras, list):
                chk.add("type", f"params.probes.{space}", "expected a list of probes")
                continue
            for i, extra in enumerate(extras):
                path = f"params.probes.{space}[{i}]"
                atoms = extra.get("atoms") if isinstance(extra, dict) else None
                if not isinstance(atoms, list) or not atoms:
                    chk.add("type", f"{path}.atoms", "expected a nonempty list of atoms")
                    continue
                for j, a in enumerate(atoms):
                    if not isinstance(a, dict) or set(a) != {point_key, "y", "p"}:
                        chk.add("type", f"{path}.atoms[{j}]", f"expected keys {point_key}, y, p")
    caps = p.get("capacities")
    if caps is not None:
        if not isinstance(caps, dict):
            chk.add("type", "params.capacities", "expected a mapping")
        else:
            chk.keys(caps, {"heads", "reps", "reps_task"}, "params.capacities.")
            for k in caps:
                num(caps, k, f"params.capacities.{k}", lo=1, lo_open=False, integer=True)
    for k in ("n", "m"):
        if p.get(k) == BOUND and kind not in ("ValidateThm1", "ValidateThm2"):
            chk.add("range", f"params.{k}", "'bound' is only meaningful for ValidateThm1/2")
    if kind == "ValidateThm1" and p.get("n") == BOUND:
        chk.add("range", "params.n", "ValidateThm1 fixes n; give an integer")


def _check_eps_identity(kind: str, p: dict, chk: _Checker) -> None:
    """In bound mode eps1 + eps2 must equal alpha*nu/8 (thm 1) or alpha*nu/16 (thm 2)."""
    if BOUND not in (p.get("n"), p.get("m")):
        return
    for k in ("eps1", "eps2"):
        if k not in p:
            chk.add("missing", f"params.{k}", "required when n or m is 'bound'")
    if chk.issues:
        return
    divisor = 8 if kind == "ValidateThm1" else 16
    target = p["alpha"] * p["nu"] / divisor
    if abs(p["eps1"] + p["eps2"] - target) > 1e-12:
        chk.add(
            "constraint",
            "params.eps1+eps2",
            f"eps1 + eps2 = alpha*nu/{divisor} is required; got {p['eps1'] + p['eps2']!r}"
            f" vs {target!r}",
        )


def _resolve_seed(doc: dict, seed_override: int | None, chk: _Checker) -> int | None:
    if seed_override is not None:
        seed = seed_override
    elif "seed" in doc:
        seed = doc["seed"]
    elif os.environ.get(SEED_ENV_VAR):
        raw = os.environ[SEED_ENV_VAR]
        try:
            seed = int(raw)
        except ValueError:
            chk.add("type", SEED_ENV_VAR, f"not an integer: {raw!r}")
            return None
    else:
        seed = 0
    return chk.number({"seed": seed}, "seed", "seed", lo=0, hi=U64, lo_open=False, integer=True)


def validate_config(
    text: str,
    *,
    seed: int | None = None,
    trials: int | None = None,
    output: str | None = None,
) -> ExperimentConfig:
    """Parse and validate config text; raises :class:`ConfigError` listing every issue.

    ``seed``, ``trials`` and ``output`` override the corresponding entries.
    The seed falls back to the config, then to $METALAB_SEED, then to 0.
    """
    chk = _Checker()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([ConfigIssue("parse", "<document>", str(exc).replace("\n", " "))])
    if not isinstance(doc, dict):
        raise ConfigError([ConfigIssue("parse", "<document>", "top level must be a mapping")])
    doc = copy.deepcopy(doc)
    chk.keys(doc, TOP_KEYS, "")
    for k in ("kind", "environment", "family", "loss"):
        if k not in doc:
            chk.add("missing", k, "required")
    kind = doc.get("kind")
    if "kind" in doc and kind not in KINDS:
        chk.add("range", "kind", f"must be one of {', '.join(KINDS)}")
    seed_value = _resolve_seed(doc, seed, chk)

    loss = doc.get("loss", {})
    bound = None
    if isinstance(loss, dict):
        chk.keys(loss, {"M"}, "loss.")
        if "M" not in loss:
            chk.add("missing", "loss.M", "required")
        else:
            bound = chk.number(loss, "M", "loss.M", lo=0)
    else:
        chk.add("type", "loss", "expected a mapping")

    params = doc.get("params", {}) or {}
    if not isinstance(params, dict):
        chk.add("type", "params", "expected a mapping")
        params = {}
    if trials is not None:
        params["trials"] = trials
    chk.keys(params, PARAM_KEYS, "params.")
    merged = copy.deepcopy(DEFAULT_PARAMS)
    merged.update(params)
    if isinstance(merged.get("probes"), dict):
        merged["probes"] = {**DEFAULT_PARAMS["probes"], **merged["probes"]}
    if kind in KINDS:
        for k in REQUIRED_PARAMS[kind]:
            if k not in merged:
                chk.add("missing", f"params.{k}", f"required for {kind}")
        _check_params(kind, merged, chk)
        if not chk.issues and kind in ("ValidateThm1", "ValidateThm2"):
            _check_eps_identity(kind, merged, chk)

    env = target = family = None
    if "environment" in doc:
        env = _build_environment(doc["environment"], "environment", chk)
    if doc.get("target_environment") is not None:
        target = _build_environment(doc["target_environment"], "target_environment", chk)
        if env is not None and target is not None and target.input_dim != env.input_dim:
            chk.add("constraint", "target_environment", "input dimension differs from environment")
    if env is not None and bound is not None and "family" in doc:
        family = _build_family(doc["family"], env.input_dim, bound, chk)
    if env is not None and family is not None and isinstance(merged.get("rep"), int):
        if merged["rep"] >= len(family.reps):
            chk.add("range", "params.rep", f"index outside [0, {len(family.reps)})")
    if env is not None and kind == "ValidateThm1" and isinstance(merged.get("tasks"), list):
        if isinstance(merged.get("n"), int) and len(merged["tasks"]) != merged["n"]:
            chk.add("constraint", "params.tasks", "needs exactly n task indices")
        if any(not 0 <= i < env.num_tasks for i in merged["tasks"] if isinstance(i, int)):
            chk.add("range", "params.tasks", f"task indices must lie in [0, {env.num_tasks})")

    if chk.issues:
        raise ConfigError(chk.issues)

    out = output if output is not None else doc.get("output", os.path.join("runs", kind))
    resolved = {
        "kind": kind,
        "seed": seed_value,
        "output": out,
        "loss": {"M": bound},
        "environment": doc["environment"],
        "target_environment": doc.get("target_environment"),
        "family": doc["family"],
        "params": merged,
    }
    return ExperimentConfig(kind, seed_value, out, env, family, merged, resolved, target)


def load_config(path: str, **overrides) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return validate_config(fh.read(), **overrides)
