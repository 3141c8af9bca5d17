"""JSON experiment configuration: schema validation, default resolution,
and construction of runnable simulation configs.

Unknown keys are rejected everywhere so typos fail loudly before any
computation. The resolved config (all defaults filled in) is what gets
echoed into the output directory and hashed into file metadata.
"""
from __future__ import annotations

import copy
import hashlib
import json

import jsonschema
import numpy as np

from .attacks import ATTACK_KINDS, AttackSpec
from .numerics import RngStream
from .objectives import make_classification_family, make_quadratic_family
from .protocol import EtaSchedule, SimulationConfig
from .sampling import SelectionPlan

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["plan", "objective", "rule", "optimizer", "seeds"],
    "properties": {
        "plan": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "b", "s", "b_hat", "T"],
            "properties": {
                "n": {"type": "integer", "minimum": 2},
                "b": {"type": "integer", "minimum": 0},
                "s": {"type": "integer", "minimum": 1},
                "b_hat": {"type": "integer", "minimum": 0},
                "T": {"type": "integer", "minimum": 1},
                "p": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "q": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
            },
        },
        "objective": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["quadratic", "classification"]},
                "dim": {"type": "integer", "minimum": 1},
                "mu": {"type": "number", "exclusiveMinimum": 0},
                "L": {"type": "number", "exclusiveMinimum": 0},
                "minimizer_spread": {"type": "number", "minimum": 0},
                "noise_sigma": {"type": "number", "minimum": 0},
                "dirichlet_alpha": {"type": "number", "exclusiveMinimum": 0},
                "pool_size": {"type": "integer", "minimum": 1},
                "num_classes": {"type": "integer", "minimum": 2},
                "feat_dim": {"type": "integer", "minimum": 1},
                "l2_reg": {"type": "number", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
            },
        },
        "attack": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": list(ATTACK_KINDS)},
                "strength": {"type": ["number", "null"], "minimum": 0},
            },
        },
        "rule": {"type": "string"},
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "required": ["eta"],
            "properties": {
                "eta": {
                    "anyOf": [
                        {"type": "number", "exclusiveMinimum": 0},
                        {
                            "type": "array",
                            "minItems": 1,
                            "items": {
                                "type": "array",
                                "minItems": 2,
                                "maxItems": 2,
                                "items": {"type": "number"},
                            },
                        },
                    ]
                },
                "beta": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "rho": {"type": ["number", "null"]},
                "x0": {"type": "number"},
            },
        },
        "mode": {"enum": ["rpel", "fixed_graph"]},
        "graph_edges": {"type": ["integer", "null"], "minimum": 1},
        "include_self_in_sample": {"type": "boolean"},
        "wide_visibility": {"type": "boolean"},
        "clip_with_true_b": {"type": "boolean"},
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer"}},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"directory": {"type": "string"}},
        },
    },
}

DEFAULTS = {
    "objective": {
        "quadratic": {
            "dim": 10,
            "mu": 1.0,
            "L": 1.0,
            "minimizer_spread": 1.0,
            "noise_sigma": 0.0,
        },
        "classification": {
            "dirichlet_alpha": 1.0,
            "pool_size": 10_000,
            "num_classes": 10,
            "feat_dim": 20,
            "l2_reg": 1e-4,
            "batch_size": 32,
        },
    },
    "attack": {"kind": "none", "strength": None},
    "optimizer": {"beta": 0.0, "rho": None, "x0": 0.0},
    "plan": {"p": 0.95, "q": 0.45},
}


class ConfigError(ValueError):
    pass


def validate_config(doc: dict) -> None:
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config schema violation: {exc.message}") from exc


def resolve_config(doc: dict) -> dict:
    """Validate and fill defaults; returns a new, fully explicit document."""
    validate_config(doc)
    out = copy.deepcopy(doc)
    plan = out["plan"]
    for key, val in DEFAULTS["plan"].items():
        plan.setdefault(key, val)
    obj = out["objective"]
    for key, val in DEFAULTS["objective"][obj["kind"]].items():
        obj.setdefault(key, val)
    attack = out.setdefault("attack", dict(DEFAULTS["attack"]))
    attack.setdefault("strength", None)
    opt = out["optimizer"]
    for key, val in DEFAULTS["optimizer"].items():
        opt.setdefault(key, val)
    out.setdefault("mode", "rpel")
    out.setdefault("graph_edges", None)
    out.setdefault("include_self_in_sample", False)
    out.setdefault("wide_visibility", False)
    out.setdefault("clip_with_true_b", False)
    out.setdefault("output", {}).setdefault("directory", "gossipsim-out")
    return out


def config_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def build_simulation(resolved: dict, seed: int) -> SimulationConfig:
    """Instantiate the engine config for one seed of a resolved document."""
    p = resolved["plan"]
    plan = SelectionPlan(
        n=p["n"], b=p["b"], s=p["s"], b_hat=p["b_hat"], T=p["T"], p=p["p"], q=p["q"]
    )
    obj_doc = resolved["objective"]
    obj_rng = RngStream(seed).substream("objective")
    if obj_doc["kind"] == "quadratic":
        objective = make_quadratic_family(
            num_honest=plan.num_honest,
            dim=obj_doc["dim"],
            rng=obj_rng,
            mu=obj_doc["mu"],
            lipschitz=obj_doc["L"],
            minimizer_spread=obj_doc["minimizer_spread"],
            noise_sigma=obj_doc["noise_sigma"],
        )
    else:
        objective = make_classification_family(
            num_honest=plan.num_honest,
            rng=obj_rng,
            dirichlet_alpha=obj_doc["dirichlet_alpha"],
            pool_size=obj_doc["pool_size"],
            num_classes=obj_doc["num_classes"],
            feat_dim=obj_doc["feat_dim"],
            l2_reg=obj_doc["l2_reg"],
            batch_size=obj_doc["batch_size"],
        )
    attack = AttackSpec(
        kind=resolved["attack"]["kind"], strength=resolved["attack"]["strength"]
    )
    x0 = np.full(objective.dim, float(resolved["optimizer"]["x0"]))
    return SimulationConfig(
        plan=plan,
        objective=objective,
        attack=attack,
        rule=resolved["rule"],
        eta=EtaSchedule.from_config(resolved["optimizer"]["eta"]),
        beta=resolved["optimizer"]["beta"],
        seed=seed,
        mode=resolved["mode"],
        graph_edges=resolved["graph_edges"],
        x0=x0,
        rho=resolved["optimizer"]["rho"],
        include_self_in_sample=resolved["include_self_in_sample"],
        wide_visibility=resolved["wide_visibility"],
        clip_with_true_b=resolved["clip_with_true_b"],
    )
