"""Experiment configuration: YAML documents checked against a JSON schema.

Every section is optional except ``schema_version`` and ``seed``; a driver raises
:class:`ConfigInvalid` when the section it needs is missing.  Unknown keys are rejected
at every level.  Validation errors carry the line of the offending node.
"""

from __future__ import annotations

import copy
import re
from pathlib import Path
from typing import Mapping

import jsonschema
import yaml

from .errors import ConfigInvalid

SCHEMA_VERSION = 1

_num = {"type": "number"}
_prob = {"type": "number", "minimum": 0, "maximum": 1}
_pos_int = {"type": "integer", "minimum": 1}
_nonneg_int = {"type": "integer", "minimum": 0}
_vector = {"type": "array", "items": _num, "minItems": 1}
_matrix = {"type": "array", "items": _vector, "minItems": 1}
_labels = {"type": "array", "items": {"enum": ["idle", "mfa_frontier", "mfa_all"]}, "minItems": 1}
_edge = {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2}
_edge_costs = {
    "type": "array",
    "items": {"type": "object", "additionalProperties": False, "required": ["edge", "cost"],
              "properties": {"edge": _edge, "cost": {"type": "number", "minimum": 0}}},
}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props, "required": list(required)}


AIMG_SCALARS = {
    "horizon": _pos_int,
    "prior": {"type": "array", "items": _prob, "minItems": 2, "maxItems": 2},
    "breach_cost": {"type": "number", "minimum": 0},
    "attacker_mfa_cost": {"type": "number", "minimum": 0},
    "reward": {"type": "number", "minimum": 0},
    "p_pass": _prob,
    "alpha": _prob,
    "beta": _prob,
    "defense_budget": _nonneg_int,
    "default_edge_cost": {"type": "number", "minimum": 0},
    "default_move_cost": {"type": "number", "minimum": 0},
}

_scenario = _obj({"id": {"type": "string"}, "overrides": _obj(AIMG_SCALARS), "weight": {"type": "number", "minimum": 0}},
                 required=["id"])

SCHEMA: dict = _obj(
    {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "name": {"type": "string"},
        "output_dir": {"type": "string"},
        "graph": _obj({"nodes": {"type": "array", "items": {"type": "string"}, "minItems": 2},
                       "edges": {"type": "array", "items": _edge},
                       "entry": {"type": "string"}, "target": {"type": "string"}},
                      required=["nodes", "edges", "entry", "target"]),
        "aimg": _obj({**AIMG_SCALARS, "edge_costs": _edge_costs, "move_costs": _edge_costs}),
        "trust": _obj({"engine": {"enum": ["bayes", "attribute", "mlte"]},
                       "weights": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
                       "mlte": _obj({"phi": _matrix, "theta": _matrix, "prior": _vector},
                                    required=["phi", "theta", "prior"])}),
        "attacker": _obj({"kind": {"enum": ["shortest_path", "uniform"]},
                          "legitimate": {"enum": ["random_walk", "shortest"]}}),
        "defender": _obj({"kind": {"enum": ["threshold", "constant"]},
                          "thresholds": {"type": "array", "items": _prob, "minItems": 1},
                          "labels": _labels,
                          "label": {"enum": ["idle", "mfa_frontier", "mfa_all"]}}),
        "simulate": _obj({"n_rollouts": _pos_int}),
        "train_threshold": _obj({"iterations": _pos_int, "a": _num, "A": _num, "c": _num, "alpha": _num,
                                 "gamma": _num, "tau0": {"type": "array", "items": _prob, "minItems": 1},
                                 "n_eval": _pos_int, "exact": {"type": "boolean"},
                                 "cost_mode": {"enum": ["true", "belief"]}, "labels": _labels}),
        "train_pg": _obj({"iterations": _pos_int, "batch": _pos_int, "lr": _num, "tol": _num,
                          "cost_mode": {"enum": ["true", "belief"]}, "baseline": {"type": "boolean"},
                          "attacker_mode": {"enum": ["fixed", "best_response"]}, "br_every": _pos_int,
                          "eval_exact": {"type": "boolean"}}),
        "train_vb": _obj({"emission": _matrix, "prior": _vector, "n_records": _pos_int, "record_len": _pos_int,
                          "epochs": _nonneg_int, "batch_size": _pos_int, "samples": _pos_int, "lr_phi": _num,
                          "lr_theta": _num, "lr_decay": _num, "learn_theta": {"type": "boolean"},
                          "init_scale": _num, "holdout_frac": _prob,
                          "estimator": {"enum": ["score", "exact"]}},
                         required=["emission", "prior"]),
        "bvi": _obj({"tol": _num, "max_iter": _pos_int, "max_nodes": _pos_int, "verify_tol": _num,
                     "c1_tol": _num}),
        "meta": _obj({"scenarios": {"type": "array", "items": _scenario, "minItems": 1},
                      "held_out": {"type": "array", "items": _scenario},
                      "labels": _labels, "iterations": _pos_int, "a": _num, "A": _num, "c": _num,
                      "tau0": _prob, "gamma0": {"type": "number", "minimum": 0},
                      "gamma_max": {"type": "number", "minimum": 0}, "gamma_scale": {"type": "number",
                                                                                     "exclusiveMinimum": 0},
                      "adapt_c": _num, "adapt_budget": _pos_int, "fix_gamma": {"type": "boolean"},
                      "exact": {"type": "boolean"}, "n_eval": _pos_int, "baseline_threshold": _prob},
                     required=["scenarios"]),
        "dynkin": _obj({"P": _matrix, "phi": _vector, "zeta": _vector, "psi": _vector, "T": _nonneg_int,
                        "verify_tol": _num, "method": {"enum": ["enumerate", "dp", "auto"]},
                        "cap": _pos_int},
                       required=["P", "phi", "zeta", "psi", "T"]),
        "ddgia": _obj({"O1": _matrix, "O2": _matrix, "cap": _pos_int, "tol": _num}, required=["O1", "O2"]),
        "case_study": _obj({"symbols": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                            "Q": _matrix, "initial": _vector, "C": _vector, "ell": _vector,
                            "overrides": {"type": "array", "items": _obj(AIMG_SCALARS)},
                            "T": _pos_int, "n_rollouts": _pos_int,
                            "bucket_width": {"type": ["number", "null"], "exclusiveMinimum": 0},
                            "exact_costs": {"type": "boolean"}, "verify_tol": _num, "verify_cap": _pos_int},
                           required=["symbols", "Q", "initial", "C", "ell", "T"]),
        "verify": _obj({"drivers": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                        "golden_dir": {"type": "string"}},
                       required=["drivers"]),
    },
    required=["schema_version", "seed"],
)

DEFAULTS: dict = {
    "trust": {"engine": "bayes", "weights": [1.0, -1.5, -2.0, 0.0]},
    "attacker": {"kind": "shortest_path", "legitimate": "random_walk"},
    "defender": {"kind": "threshold", "thresholds": [0.5]},
    "simulate": {"n_rollouts": 1000},
    "train_threshold": {"iterations": 40, "a": 0.1, "A": 5.0, "c": 0.3, "alpha": 0.602, "gamma": 0.101,
                        "tau0": [0.25], "n_eval": 100, "exact": False, "cost_mode": "true"},
    "train_pg": {"iterations": 50, "batch": 64, "lr": 0.05, "tol": 1e-3, "cost_mode": "true", "baseline": False,
                 "attacker_mode": "fixed", "br_every": 10, "eval_exact": True},
    "train_vb": {"n_records": 500, "record_len": 5, "epochs": 50, "batch_size": 64, "samples": 16, "lr_phi": 0.2,
                 "lr_theta": 0.05, "lr_decay": 0.0, "learn_theta": True, "init_scale": 0.1, "holdout_frac": 0.2,
                 "estimator": "score"},
    "bvi": {"tol": 1e-10, "max_iter": 100, "max_nodes": 50_000, "verify_tol": 1e-8, "c1_tol": 1e-9},
    "meta": {"held_out": [], "iterations": 60, "a": 0.3, "A": 5.0, "c": 0.3, "tau0": 0.5, "gamma0": 0.0,
             "gamma_max": 0.3, "gamma_scale": 0.1, "adapt_c": 0.3, "adapt_budget": 1, "fix_gamma": False,
             "exact": True, "n_eval": 200, "baseline_threshold": 0.5},
    "dynkin": {"verify_tol": 1e-9, "method": "auto", "cap": 2**16},
    "ddgia": {"cap": 2**12, "tol": 1e-9},
    "case_study": {"n_rollouts": 2000, "bucket_width": None, "exact_costs": False, "verify_tol": 1e-9,
                   "verify_cap": 2**16},
}


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e-9`` (no dot) as a float."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+][0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def _merge(base: Mapping, over: Mapping) -> dict:
    out = copy.deepcopy(dict(base))
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _child(node, key):
    if isinstance(node, yaml.MappingNode):
        return next((v for k, v in node.value if k.value == str(key)), None)
    if isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
        return node.value[key]
    return None


def _error_line(node: yaml.Node | None, err: jsonschema.ValidationError) -> int | None:
    """1-based line of the offending node, or of its deepest existing ancestor.

    For unknown keys the line of the key itself is reported.
    """
    if node is None:
        return None
    line = node.start_mark.line + 1
    for key in err.absolute_path:
        nxt = _child(node, key)
        if nxt is None:
            return line
        node = nxt
        line = node.start_mark.line + 1
    if err.validator == "additionalProperties" and isinstance(node, yaml.MappingNode):
        allowed = err.schema.get("properties", {})
        for k, _ in node.value:
            if k.value not in allowed:
                return k.start_mark.line + 1
    return line


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse and validate a config document; defaults are filled in for present sections.

    A run manifest (JSON) is also accepted; its embedded config is used.
    """
    try:
        node = yaml.compose(text, Loader=_Loader)
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigInvalid(f"{where}: malformed YAML: {problem}") from None
    if isinstance(doc, dict) and "manifest_version" in doc and "config" in doc:
        doc = doc["config"]
        node = None
    if not isinstance(doc, dict):
        raise ConfigInvalid(f"{source}:1: config must be a mapping")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        msgs = []
        for err in errors:
            path = list(err.absolute_path)
            line = _error_line(node, err)
            where = f"{source}:{line}" if line is not None else source
            dotted = ".".join(map(str, path)) or "<root>"
            msgs.append(f"{where}: {dotted}: {err.message}")
        raise ConfigInvalid("\n".join(msgs))
    out = dict(doc)
    for section, defaults in DEFAULTS.items():
        if section in out:
            out[section] = _merge(defaults, out[section])
    return out


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"{path}: cannot read config: {exc.strerror}") from None
    cfg = parse_config(text, str(path))
    cfg["_base_dir"] = str(path.resolve().parent)
    return cfg


def section(cfg: Mapping, name: str, fill_default: bool = False) -> dict:
    """Fetch a section, falling back to defaults when allowed, else raise ConfigInvalid."""
    if name in cfg:
        return cfg[name]
    if fill_default and name in DEFAULTS:
        return copy.deepcopy(DEFAULTS[name])
    raise ConfigInvalid(f"config has no '{name}' section")


def public(cfg: Mapping) -> dict:
    """Config without bookkeeping keys (what goes into the manifest and its hash)."""
    return {k: v for k, v in cfg.items() if not k.startswith("_")}
