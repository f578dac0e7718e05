"""Experiment configuration: JSON schema, defaults, dotted-path overrides,
and builders from config to live objects."""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np

from .env import InitialDistribution, make_model, validate_model
from .errors import ConfigError
from .estimators import ProblemInstance
from .graph import build_graph
from .nets import window_input_dim
from .policies import (
    EnergyPolicyParams,
    EnergyTeamPolicy,
    LiftedTeamPolicy,
    TeamPolicy,
    make_individual_policy,
)
from .training import TrainerConfig, _ROLE_ACTOR_INIT, substream
from .nets import init_net

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_OPT_NUM = {"type": ["number", "null"]}

CONFIG_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["graph", "model"],
    "properties": {
        "graph": {
            "type": "object",
            "additionalProperties": False,
            "required": ["states", "edges"],
            "properties": {
                "states": {"type": "array", "minItems": 1},
                "edges": {
                    "type": "array",
                    "items": {"type": "array", "minItems": 2, "maxItems": 2},
                },
            },
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "reward": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"name": {"type": "string"}, "params": {"type": "object"}},
                },
                "kernel": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"name": {"type": "string"}, "params": {"type": "object"}},
                },
                "gamma": _NUM,
                "n_agents": _INT,
                "actions": {"type": "array", "minItems": 1},
                "r_max": _NUM,
            },
        },
        "init": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["point", "uniform"]},
                "counts": {"type": ["array", "null"], "items": _INT},
            },
        },
        "policy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["individual", "energy"]},
                "name": {"type": "string"},
                "params": {"type": "object"},
                "width": _INT,
                "tau": _NUM,
                "radius": _NUM,
                "checkpoint": {"type": ["string", "null"]},
            },
        },
        "training": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["actor", "critic"]},
                "width": _INT,
                "radius": _NUM,
                "tau": _NUM,
                "k": {"type": ["integer", "null"]},
                "t_critic": _INT,
                "t_actor": _INT,
                "batch": _INT,
                "eta_critic": _OPT_NUM,
                "eta_actor": _OPT_NUM,
                "burn_in": _INT,
                "restart_warmup": _INT,
                "candidate_cap": _INT,
                "oracle_j": {"type": "boolean"},
                "mc_j_every": _INT,
                "mc_j_rollouts": _INT,
                "mc_j_horizon": _INT,
            },
        },
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "xi_cap": _INT,
                "tol": _NUM,
                "stationary_tol": _NUM,
                "stationary_max_iter": _INT,
            },
        },
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"steps": _INT},
        },
        "seed": _INT,
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": ["string", "null"]}},
        },
    },
}

DEFAULT_CONFIG: dict = {
    "graph": {"states": [0, 1, 2], "edges": [[0, 1], [1, 2]]},
    "model": {
        "reward": {"name": "congestion", "params": {}},
        "kernel": {"name": "stay_spread", "params": {}},
        "gamma": 0.5,
        "n_agents": 4,
        "actions": ["stay", "spread"],
        "r_max": 1.0,
    },
    "init": {"kind": "point", "counts": [2, 1, 1]},
    "policy": {
        "kind": "individual",
        "name": "uniform",
        "params": {},
        "width": 64,
        "tau": 1.0,
        "radius": 40.0,
        "checkpoint": None,
    },
    "training": {
        "mode": "actor",
        "width": 64,
        "radius": 40.0,
        "tau": 1.0,
        "k": None,
        "t_critic": 2000,
        "t_actor": 50,
        "batch": 256,
        "eta_critic": 0.25,
        "eta_actor": 0.5,
        "burn_in": 50,
        "restart_warmup": 10,
        "candidate_cap": 20000,
        "oracle_j": True,
        "mc_j_every": 10,
        "mc_j_rollouts": 100,
        "mc_j_horizon": 60,
    },
    "oracle": {
        "xi_cap": 200000,
        "tol": 1e-8,
        "stationary_tol": 1e-10,
        "stationary_max_iter": 1000000,
    },
    "simulate": {"steps": 100},
    "seed": 0,
    "output": {"dir": None},
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(cfg: dict, sets: list[str]) -> dict:
    """Apply --set dotted.path=value overrides (values parsed as JSON)."""
    out = copy.deepcopy(cfg)
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        path, raw = item.split("=", 1)
        keys = path.split(".")
        node = out
        for key in keys[:-1]:
            if not isinstance(node.get(key), dict):
                node[key] = {}
            node = node[key]
        node[keys[-1]] = _parse_override_value(raw)
    return out


def resolve_config(
    user: Optional[dict] = None,
    sets: Optional[list[str]] = None,
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> dict:
    """Merge defaults with the user config and CLI overrides, then validate."""
    cfg = _deep_merge(DEFAULT_CONFIG, user or {})
    if sets:
        cfg = apply_overrides(cfg, sets)
    if seed is not None:
        cfg["seed"] = int(seed)
    if out_dir is not None:
        cfg["output"]["dir"] = str(out_dir)
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"config validation failed: {e.message} at {list(e.path)}") from e
    return cfg


def load_config(path: Optional[str | Path], **kwargs) -> dict:
    user = None
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file is not valid JSON: {e}") from None
    return resolve_config(user, **kwargs)


def build_instance(cfg: dict, validate: bool = True) -> ProblemInstance:
    gsec = cfg["graph"]
    try:
        g = build_graph(gsec["states"], [tuple(e) for e in gsec["edges"]])
    except ValueError as e:
        raise ConfigError(str(e)) from e
    msec = cfg["model"]
    model = make_model(
        g,
        reward_name=msec["reward"]["name"],
        reward_params=msec["reward"]["params"],
        kernel_name=msec["kernel"]["name"],
        kernel_params=msec["kernel"]["params"],
        gamma=msec["gamma"],
        n_agents=msec["n_agents"],
        actions=msec["actions"],
        r_max=msec["r_max"],
    )
    isec = cfg["init"]
    counts = tuple(isec["counts"]) if isec.get("counts") is not None else None
    p0 = InitialDistribution(
        kind=isec["kind"], n_agents=model.n_agents, n_states=g.n_states, counts=counts
    )
    if validate:
        validate_model(model, g)
    return ProblemInstance(graph=g, model=model, p0=p0)


def build_policy(cfg: dict, instance: ProblemInstance) -> TeamPolicy:
    psec = cfg["policy"]
    model = instance.model
    if psec["kind"] == "individual":
        pi = make_individual_policy(psec["name"], model.n_actions, psec.get("params"))
        return LiftedTeamPolicy(pi, model.n_agents, model.n_actions)
    if psec.get("checkpoint"):
        from .runs import load_checkpoint

        ck = load_checkpoint(psec["checkpoint"])
        params = EnergyPolicyParams(nets=ck["nets"], tau=ck["extras"]["tau"])
    else:
        d = window_input_dim(1, model.n_actions)
        nets = tuple(
            init_net(
                psec["width"], d, substream(cfg["seed"], _ROLE_ACTOR_INIT, s),
                radius=psec["radius"],
            )
            for s in range(instance.graph.n_states)
        )
        params = EnergyPolicyParams(nets=nets, tau=psec["tau"])
    return EnergyTeamPolicy(params, model.n_agents, model.n_actions)


def trainer_config(cfg: dict) -> TrainerConfig:
    t = cfg["training"]
    return TrainerConfig(
        width=t["width"],
        radius=t["radius"],
        tau=t["tau"],
        k=t["k"],
        t_critic=t["t_critic"],
        t_actor=t["t_actor"],
        batch=t["batch"],
        eta_critic=t["eta_critic"],
        eta_actor=t["eta_actor"],
        burn_in=t["burn_in"],
        restart_warmup=t["restart_warmup"],
        candidate_cap=t["candidate_cap"],
        oracle_j=t["oracle_j"],
        mc_j_every=t["mc_j_every"],
        mc_j_rollouts=t["mc_j_rollouts"],
        mc_j_horizon=t["mc_j_horizon"],
    )
