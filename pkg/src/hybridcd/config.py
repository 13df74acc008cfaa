"""Scenario files: JSON schema validation, defaults and hashing.

A scenario file is a JSON object with a list of ``scenarios``; the schema
lives in ``configs/schema.json`` next to this module. Validation happens in
two passes: the schema catches structural problems (unknown keys, wrong
types, probabilities outside (0, 1)), then :func:`validate_config` checks
cross-field constraints the schema cannot express. Both passes report
every problem with its location in the file.
"""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

__all__ = [
    "DEFAULT_GRID",
    "ConfigError",
    "bundled_config",
    "bundled_configs",
    "config_hash",
    "load_config",
    "validate_config",
]

DEFAULT_SEED = 20240601
DEFAULT_REPS = 200_000

_NORMAL_DESIGN = {"sigma": 1.0, "delta0": 0.0, "gamma": 0.025, "kappa": 0.025}
_BINOMIAL_DESIGN = {"gamma": 0.025, "kappa": 0.025, "literal_scale": False}
_BINOMIAL_PRIOR = {"a_C": 0.5, "b_C": 0.5, "a_T": 0.5, "b_T": 0.5, "robust_a": 1.0, "robust_b": 1.0}
_CD_RULE = {"alpha_low": 0.01, "alpha_up": 0.075, "t": 4.0, "p": 4.0, "freeze_w_below_mean": False}
DEFAULT_GRID = _NORMAL_GRID = {"conflict": [-2.0, 2.0], "points": 81, "deltas": [0.0]}
_BINOMIAL_GRID = {"conflict": [-0.35, 0.35], "points": 71, "deltas": [0.0]}
_RECAL = {"conflict": [-2.0, 2.0], "points": 81}

# Keys that only label the file and do not change any result.
_COSMETIC = ("name", "description")


class ConfigError(ValueError):
    """Invalid scenario file; ``errors`` lists ``(location, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{loc}: {msg}" for loc, msg in errors))


def _schema() -> dict:
    text = resources.files("hybridcd").joinpath("configs/schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _loc(path) -> str:
    parts = ["$"]
    for p in path:
        parts.append(f"[{p}]" if isinstance(p, int) else f".{p}")
    return "".join(parts)


def _with_defaults(block: dict | None, defaults: dict) -> dict:
    out = copy.deepcopy(defaults)
    out.update(block or {})
    return out


def _normalise_rule(rule: dict) -> dict:
    out = dict(rule)
    out.setdefault("label", rule["name"])
    if rule["name"] in ("CDC", "CDD"):
        out = _with_defaults(out, _CD_RULE)
    elif rule["name"] == "RMD-Unit":
        out.setdefault("weight", 0.7)
    elif rule["name"] == "PP":
        out.setdefault("zeta", 1.0)
    return out


def _normalise(cfg: dict) -> dict:
    out = {k: v for k, v in cfg.items() if k != "scenarios"}
    out.setdefault("seed", DEFAULT_SEED)
    out.setdefault("reps", DEFAULT_REPS)
    out.setdefault("engine", "auto")
    scenarios = []
    for scn in cfg["scenarios"]:
        binomial = scn["outcome"] == "binomial"
        s = dict(scn)
        s["design"] = _with_defaults(scn["design"], _BINOMIAL_DESIGN if binomial else _NORMAL_DESIGN)
        s["prior"] = _with_defaults(scn["prior"], _BINOMIAL_PRIOR) if binomial else dict(scn["prior"])
        s["rules"] = [_normalise_rule(r) for r in scn["rules"]]
        if "grid" in scn:
            s["grid"] = _with_defaults(scn["grid"], _BINOMIAL_GRID if binomial else _NORMAL_GRID)
        if "recalibrate" in scn:
            s["recalibrate"] = _with_defaults(scn["recalibrate"], _RECAL)
        scenarios.append(s)
    out["scenarios"] = scenarios
    return out


def _semantic_errors(cfg: dict) -> list[tuple[str, str]]:
    errors = []
    ids = [s["id"] for s in cfg["scenarios"]]
    for i, sid in enumerate(ids):
        if ids.index(sid) != i:
            errors.append((f"$.scenarios[{i}].id", f"duplicate scenario id {sid!r}"))
    engine = cfg["engine"]
    for i, s in enumerate(cfg["scenarios"]):
        at = f"$.scenarios[{i}]"
        binomial = s["outcome"] == "binomial"
        if binomial:
            if s["prior"]["y0_C"] > s["prior"]["n0_C"]:
                errors.append((f"{at}.prior.y0_C", "must not exceed n0_C"))
            if engine not in ("auto", "enumeration"):
                errors.append(("$.engine", f"binomial scenario {s['id']!r} needs the enumeration engine"))
        else:
            if "n0_C" in s["prior"] and "sigma_C" in s["prior"]:
                errors.append((f"{at}.prior", "give either n0_C or sigma_C, not both"))
            if engine == "enumeration":
                errors.append(("$.engine", f"normal scenario {s['id']!r} cannot use the enumeration engine"))
        if "grid" in s:
            lo, hi = s["grid"]["conflict"]
            if lo > hi:
                errors.append((f"{at}.grid.conflict", "lower end exceeds upper end"))
            if s["grid"]["points"] == 1 and lo != hi:
                errors.append((f"{at}.grid.points", "a single point needs a degenerate conflict range"))
        elif "average" not in s:
            errors.append((at, "nothing to evaluate: give a grid, an average block or both"))
        if "recalibrate" in s:
            rlo, rhi = s["recalibrate"]["conflict"]
            if not rlo < rhi:
                errors.append((f"{at}.recalibrate.conflict", "need lower < upper"))
        labels = [r["label"] for r in s["rules"]]
        for j, r in enumerate(s["rules"]):
            rat = f"{at}.rules[{j}]"
            if labels.index(r["label"]) != j:
                errors.append((f"{rat}.label", f"duplicate rule label {r['label']!r}"))
            if r["name"] in ("CDC", "CDD") and not r["alpha_low"] < r["alpha_up"]:
                errors.append((rat, "need alpha_low < alpha_up"))
            target = r.get("match_tie_range_of")
            if target is not None:
                if r["name"] not in ("CDC", "CDD") or binomial:
                    errors.append((f"{rat}.match_tie_range_of", "only for CDC/CDD rules with Normal outcomes"))
                elif target not in labels:
                    errors.append((f"{rat}.match_tie_range_of", f"no rule labelled {target!r}"))
                elif next(x for x in s["rules"] if x["label"] == target).get("match_tie_range_of"):
                    errors.append((f"{rat}.match_tie_range_of", "cannot chain range matching"))
            if engine == "closed_form" and r["name"] not in ("FD", "BD"):
                errors.append((rat, f"closed_form engine has no formula for {r['name']}"))
    return errors


def validate_config(raw: Any) -> dict:
    """Validate a parsed scenario file and return it with defaults filled in."""
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        raise ConfigError([(_loc(e.absolute_path), e.message) for e in errors])
    cfg = _normalise(raw)
    sem = _semantic_errors(cfg)
    if sem:
        raise ConfigError(sem)
    return cfg


def load_config(path: str | Path, overrides: dict | None = None) -> dict:
    """Read, apply command-line overrides, validate and normalise."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError([(f"line {exc.lineno}", f"invalid JSON: {exc.msg}")]) from exc
    if isinstance(raw, dict):
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return validate_config(raw)


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical JSON of the normalised semantic content."""
    semantic = {k: v for k, v in cfg.items() if k not in _COSMETIC}
    blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def bundled_configs() -> list[str]:
    root = resources.files("hybridcd").joinpath("configs")
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json") and p.name != "schema.json")


def bundled_config(name: str) -> Path:
    """Filesystem path of a scenario file shipped with the package."""
    if not name.endswith(".json"):
        name += ".json"
    path = Path(str(resources.files("hybridcd").joinpath("configs", name)))
    if not path.is_file():
        raise FileNotFoundError(f"no bundled config {name!r}; available: {', '.join(bundled_configs())}")
    return path
