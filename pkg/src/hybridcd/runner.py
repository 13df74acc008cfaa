"""Turn validated scenario files into result tables.

Every evaluation is an independent :class:`Task`; tasks are built up front
(so Monte Carlo streams are fixed before anything runs), optionally fanned
out to a process pool, and the resulting rows are sorted before being
written once. Output is therefore identical for any ``jobs`` value.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import re
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, binomial, oc
from .config import DEFAULT_GRID, ConfigError, config_hash
from .normal import CompromiseConfig, NormalDesign, NormalPrior
from .numerics import RngStream
from .rules import BD, CDC, CDD, FD, DecisionRule, EBPowD, NeverReject, PowerPrior, RMDUnit

__all__ = ["CSV_HEADER", "Row", "emit_thresholds", "run_scenario", "write_results"]

CSV_HEADER = ["scenario_id", "rule", "theta_C", "delta", "metric", "value", "mc_se", "estimator", "reps"]
THRESHOLD_HEADER = ["conflict", "critical_z", "kappa", "gamma"]


@dataclass(frozen=True)
class Row:
    scenario_id: str
    rule: str
    theta_C: float | None
    delta: float | None
    metric: str
    value: float
    mc_se: float = 0.0
    estimator: str = "quadrature"
    reps: int = 0

    def sort_key(self):
        def num(x):
            return -math.inf if x is None else x
        return (self.scenario_id, self.rule, self.metric, num(self.theta_C), num(self.delta))


@dataclass(frozen=True)
class Task:
    scenario_id: str
    label: str
    kind: str  # "point", "average" or "enumeration"
    engine: str
    design: object
    prior: object
    rule: object
    theta_C: float
    delta: float
    metric: str
    reps: int = 0
    stream: RngStream | None = None


# ---------------------------------------------------------------------------
# building domain objects

def normal_design(scn: dict, rule_spec: dict | None = None) -> NormalDesign:
    d = scn["design"]
    design = NormalDesign(d["n_C"], d["n_T"], d["sigma"], d["delta0"], d["gamma"], d["kappa"])
    if rule_spec:
        over = {k: rule_spec[k] for k in ("gamma", "kappa") if k in rule_spec}
        design = dataclasses.replace(design, **over)
    return design


def normal_prior(block: dict, sigma: float) -> NormalPrior:
    if "n0_C" in block:
        return NormalPrior.from_n0(block["mu_C"], block["n0_C"], sigma)
    return NormalPrior(block["mu_C"], block.get("sigma_C", math.inf))


def binomial_design(scn: dict, rule_spec: dict | None = None) -> binomial.BinomialDesign:
    d, p = scn["design"], scn["prior"]
    gamma = (rule_spec or {}).get("gamma", d["gamma"])
    kappa = (rule_spec or {}).get("kappa", d["kappa"])
    return binomial.BinomialDesign(
        d["n_C"], d["n_T"], p["y0_C"], p["n0_C"],
        prior_C=binomial.BetaPrior(p["a_C"], p["b_C"]),
        prior_T=binomial.BetaPrior(p["a_T"], p["b_T"]),
        gamma=gamma, kappa=kappa,
        robust=binomial.BetaPrior(p["robust_a"], p["robust_b"]),
        literal_scale=d["literal_scale"])


def _cd_config(spec: dict, **over) -> CompromiseConfig:
    vals = {k: spec[k] for k in ("alpha_low", "alpha_up", "t", "p", "freeze_w_below_mean")}
    vals.update(over)
    return CompromiseConfig(**vals)


def build_rule(spec: dict, **cd_over) -> DecisionRule:
    name = spec["name"]
    if name == "FD":
        return FD()
    if name == "BD":
        return BD()
    if name == "CDC":
        return CDC(_cd_config(spec, **cd_over))
    if name == "CDD":
        return CDD(_cd_config(spec, **cd_over))
    if name == "RMD-Unit":
        return RMDUnit(spec["weight"])
    if name == "EBPowD":
        return EBPowD()
    if name == "PP":
        return PowerPrior(spec["zeta"])
    raise ValueError(f"unknown rule {name!r}")


def _stream_key(*parts: str) -> int:
    return zlib.crc32("/".join(parts).encode("utf-8"))


def _conflict_grid(grid: dict) -> np.ndarray:
    lo, hi = grid["conflict"]
    return np.linspace(lo, hi, grid["points"])


def _mu_C(scn: dict) -> float:
    if scn["outcome"] == "normal":
        return scn["prior"]["mu_C"]
    p = scn["prior"]
    return p["y0_C"] / p["n0_C"] if p["n0_C"] else p["a_C"] / (p["a_C"] + p["b_C"])


def _resolve_rules(scn: dict, notes: dict) -> list[tuple[str, object, object, DecisionRule]]:
    """(label, design, prior, rule) per rule spec; CD ranges matched to a
    competitor are filled in here."""
    out = []
    if scn["outcome"] == "binomial":
        for spec in scn["rules"]:
            out.append((spec["label"], binomial_design(scn, spec), None, build_rule(spec)))
        return out
    specs = {s["label"]: s for s in scn["rules"]}
    rng = scn.get("recalibrate", {"conflict": [-2.0, 2.0], "points": 81})
    for spec in scn["rules"]:
        design = normal_design(scn, spec)
        prior = normal_prior(scn["prior"], design.sigma)
        target = spec.get("match_tie_range_of")
        if target:
            t_spec = specs[target]
            t_design = normal_design(scn, t_spec)
            low, up = oc.tie_range(t_design, prior, build_rule(t_spec), tuple(rng["conflict"]), rng["points"])
            rule = build_rule(spec, alpha_low=low, alpha_up=up)
            notes.setdefault("matched_tie_ranges", {})[spec["label"]] = {
                "competitor": target, "alpha_low": low, "alpha_up": up}
        else:
            rule = build_rule(spec)
        out.append((spec["label"], design, prior, rule))
    return out


def _metric(delta: float, delta0: float, average: bool = False) -> str:
    base = "tie" if delta <= delta0 else "power"
    return f"avg_{base}" if average else base


def _engine_for(scn: dict, engine: str) -> str:
    if engine != "auto":
        return engine
    return "enumeration" if scn["outcome"] == "binomial" else "quadrature"


def _curve_tasks(scn, label, design, prior, rule, engine, reps, seed, notes) -> list[Task]:
    tasks = []
    if "grid" not in scn:
        return tasks
    thetas = _mu_C(scn) + _conflict_grid(scn["grid"])
    binom = scn["outcome"] == "binomial"
    delta0 = 0.0 if binom else design.delta0
    key = _stream_key(scn["id"], label)
    for i, th in enumerate(thetas):
        for j, delta in enumerate(scn["grid"]["deltas"]):
            th = float(th)
            if binom and not (0 <= th <= 1 and 0 <= th + delta <= 1):
                notes["skipped_points"] = notes.get("skipped_points", 0) + 1
                continue
            stream = RngStream(seed).child(key, i, j) if engine == "monte_carlo" else None
            tasks.append(Task(scn["id"], label, "point", engine, design, prior, rule, th, float(delta),
                              _metric(delta, delta0), reps if engine == "monte_carlo" else 0, stream))
    return tasks


def _evaluate(task: Task) -> Row:
    th, delta = task.theta_C, task.delta
    if task.kind == "average":
        val = oc.average_oc(task.design, task.prior[0], task.rule, task.prior[1], delta)
        return Row(task.scenario_id, task.label, None, delta, task.metric, val, 0.0, "quadrature", 0)
    if task.engine == "enumeration":
        val = binomial.enumerate_oc(task.design, task.rule, th, delta)
        return Row(task.scenario_id, task.label, th, delta, task.metric, val, 0.0, "enumeration", 0)
    if task.engine == "monte_carlo":
        pt = oc.power_rule_mc(task.design, task.prior, task.rule, th, th + delta, task.reps, task.stream)
        return Row(task.scenario_id, task.label, th, delta, task.metric, pt.value, pt.mc_se, "monte_carlo", pt.reps)
    if task.engine == "closed_form":
        if isinstance(task.rule, FD):
            val = oc.power_fd_closed(task.design, th, th + delta)
        elif isinstance(task.rule, BD):
            val = oc.power_bd_closed(task.design, task.prior, th, th + delta)
        elif isinstance(task.rule, NeverReject):
            val = 0.0
        else:
            raise ConfigError([("$.engine", f"closed_form engine has no formula for {task.rule.name}")])
        return Row(task.scenario_id, task.label, th, delta, task.metric, float(val), 0.0, "closed_form", 0)
    val = oc.power_rule_quadrature(task.design, task.prior, task.rule, th, th + delta)
    return Row(task.scenario_id, task.label, th, delta, task.metric, val, 0.0, "quadrature", 0)


def _recalibrate(scn, resolved, notes) -> list[tuple[str, object, object, DecisionRule]]:
    spec = scn["recalibrate"]
    out = []
    records = []
    for label, design, prior, rule in resolved:
        rc = oc.recalibrate_max_tie(design, prior, rule, spec["target"], tuple(spec["conflict"]), spec["points"])
        records.append({"rule": label, "knob": rc.knob, "value": rc.value, "max_tie": rc.max_tie,
                        "attainable": rc.attainable, "message": rc.message})
        out.append((f"{label}@recal", rc.design, prior, rc.rule))
    notes["recalibration"] = records
    return out


def build_tasks(cfg: dict) -> tuple[list[Task], dict]:
    tasks: list[Task] = []
    notes: dict = {}
    for scn in cfg["scenarios"]:
        engine = _engine_for(scn, cfg["engine"])
        scn_notes: dict = {"engine": engine}
        resolved = _resolve_rules(scn, scn_notes)
        curves = list(resolved)
        if "recalibrate" in scn:
            curves += _recalibrate(scn, resolved, scn_notes)
        for label, design, prior, rule in curves:
            tasks += _curve_tasks(scn, label, design, prior, rule, engine, cfg["reps"], cfg["seed"], scn_notes)
        if "average" in scn:
            avg = scn["average"]
            for label, design, prior, rule in resolved:
                sampling = normal_prior(avg["sampling_prior"], design.sigma) if "sampling_prior" in avg else prior
                for delta in avg["deltas"]:
                    tasks.append(Task(scn["id"], label, "average", "quadrature", design, (prior, sampling), rule,
                                      math.nan, float(delta), _metric(delta, design.delta0, average=True)))
        if scn["outcome"] == "binomial":
            p = scn["prior"]
            scn_notes["robust_component"] = {"a": p["robust_a"], "b": p["robust_b"]}
            scn_notes["analysis_prior"] = {"a": p["a_C"] + p["y0_C"], "b": p["b_C"] + p["n0_C"] - p["y0_C"]}
        notes[scn["id"]] = scn_notes
    return tasks, notes


def _run_tasks(tasks: list[Task], jobs: int) -> list[Row]:
    if jobs <= 1 or len(tasks) < 2:
        return [_evaluate(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_evaluate, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


# ---------------------------------------------------------------------------
# output

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return "%.10g" % x


def results_csv(rows: list[Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sorted(rows, key=Row.sort_key):
        w.writerow([r.scenario_id, r.rule, _fmt(r.theta_C), _fmt(r.delta), r.metric,
                    _fmt(r.value), _fmt(r.mc_se), r.estimator, _fmt(r.reps)])
    return buf.getvalue()


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def write_results(out_dir: str | Path, rows: list[Row], cfg: dict, notes: dict, command: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = results_csv(rows)
    (out / "results.csv").write_text(text, encoding="utf-8")
    manifest = {
        "tool": "hybridcd",
        "version": __version__,
        "command": command,
        "config_name": cfg.get("name", ""),
        "config_sha256": config_hash(cfg),
        "seed": cfg["seed"],
        "reps": cfg["reps"],
        "engine": cfg["engine"],
        "rng": "numpy PCG64 seeded by SeedSequence(seed, spawn_key=(stream_id,)); "
               "stream_id derived from (crc32(scenario/rule), theta index, delta index)",
        "scenarios": {s["id"]: {"grid": s.get("grid"), "average": s.get("average"), **notes.get(s["id"], {})}
                      for s in cfg["scenarios"]},
        "rows": len(rows),
        "results_sha256": hashlib.sha256(text.encode("utf-8")).hexdigest(),
    }
    (out / "manifest.json").write_text(json.dumps(_json_safe(manifest), indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return out / "results.csv"


def run_scenario(cfg: dict, out_dir: str | Path, jobs: int = 1, command: str = "run") -> list[Row]:
    """Evaluate every scenario in ``cfg`` and write results.csv and manifest.json."""
    tasks, notes = build_tasks(cfg)
    rows = _run_tasks(tasks, jobs)
    write_results(out_dir, rows, cfg, notes, command)
    return rows


def _safe_name(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", s)


def emit_thresholds(cfg: dict, out_dir: str | Path) -> list[Row]:
    """Critical z, frequentist level and dual Bayes threshold per rule over
    the observed-conflict grid. Normal outcomes only."""
    if any(s["outcome"] != "normal" for s in cfg["scenarios"]):
        raise ConfigError([("$.scenarios", "thresholds are only available for Normal outcomes")])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[Row] = []
    notes: dict = {}
    for scn in cfg["scenarios"]:
        scn_notes: dict = {}
        conflict = _conflict_grid(scn.get("grid", DEFAULT_GRID))
        for label, design, prior, rule in _resolve_rules(scn, scn_notes):
            ybar = prior.mu_C + conflict
            z = np.asarray(rule.critical_z(design, prior, ybar), dtype=float)
            kappa = np.asarray(rule.kappa(design, prior, ybar), dtype=float)
            gamma = np.asarray(rule.gamma(design, prior, ybar), dtype=float)
            est = "root_finding" if isinstance(rule, RMDUnit) else "closed_form"
            with open(out / f"thresholds_{_safe_name(scn['id'])}_{_safe_name(label)}.csv", "w",
                      newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(THRESHOLD_HEADER)
                for row in zip(conflict, z, kappa, gamma):
                    w.writerow([_fmt(float(v)) for v in row])
            for yc, zi, ki in zip(ybar, z, kappa):
                rows.append(Row(scn["id"], label, float(yc), None, "critical_z", float(zi), 0.0, est, 0))
                rows.append(Row(scn["id"], label, float(yc), None, "threshold", float(ki), 0.0, est, 0))
        notes[scn["id"]] = scn_notes
    write_results(out, rows, cfg, notes, "thresholds")
    return rows
