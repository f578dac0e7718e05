"""The mfnet command line: simulate | oracle | train | verify | export.

Every run writes into a locked run directory and finishes with a manifest
recording the resolved config, instance sizes, timings, and sha256 digests of
all data outputs. Data outputs are byte-identical under seeded reruns; the
manifest (timings) is the only rerun-variable file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from .config import build_instance, build_policy, load_config, trainer_config
from .env import (
    AgentProfile,
    InitialDistribution,
    agent_reward,
    empirical_of,
    global_stage_reward,
    team_dist_of,
    _move_profile,
)
from .errors import ConfigError, MfnetError, VerificationError
from .oracle import ExactOracle
from .policies import LiftedTeamPolicy, draw_profile_actions
from .runs import ManifestBuilder, run_lock, save_checkpoint, write_json
from .sampling import TeamChain
from .training import actor_train, critic_train, substream

_ROLE_SIMULATE = 20

OUT_ROOT_ENV = "MFNET_OUT_ROOT"


def _default_out_root() -> Path:
    return Path(os.environ.get(OUT_ROOT_ENV, "runs"))


def _resolve_run_dir(cfg: dict, out: Optional[str], command: str) -> Path:
    if out is not None:
        return Path(out)
    if cfg["output"]["dir"]:
        return Path(cfg["output"]["dir"])
    return _default_out_root() / f"{command}-seed{cfg['seed']}"


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _traj_header(g, model) -> list[str]:
    cols = ["t"]
    cols += [f"count_{lab}" for lab in g.labels]
    cols += [f"act_{lab}_{a}" for lab in g.labels for a in model.actions]
    cols.append("stage_reward")
    return cols


def _traj_row(t, g, model, mu, h) -> list:
    row = [t]
    row += list(mu.counts)
    row += [c for s in range(g.n_states) for c in h.counts[s]]
    row.append(repr(float(global_stage_reward(model, g, mu, h))))
    return row


def cmd_simulate(cfg: dict, run_dir: Path) -> list[Path]:
    """Seeded team-level trajectory; plus the coupled agent-level trajectory
    when the policy is individual (an energy policy has no per-agent form)."""
    instance = build_instance(cfg)
    g, model, p0 = instance.graph, instance.model, instance.p0
    policy = build_policy(cfg, instance)
    steps = cfg["simulate"]["steps"]
    seed = cfg["seed"]
    outputs = []

    chain = TeamChain(model, g, policy, p0, substream(seed, _ROLE_SIMULATE))
    rows = []
    for t in range(steps):
        rows.append(_traj_row(t, g, model, chain.mu, chain.h))
        chain.step()
    team_csv = run_dir / "trajectory_team.csv"
    team_csv.write_text(_csv_text(_traj_header(g, model), rows))
    outputs.append(team_csv)

    if isinstance(policy, LiftedTeamPolicy):
        rng = substream(seed, _ROLE_SIMULATE)
        mu = p0.sample(rng)
        states = []
        for s, c in enumerate(mu.counts):
            states.extend([s] * c)
        rows = []
        for t in range(steps):
            mu = empirical_of(AgentProfile(states=tuple(states)), g.n_states)
            actions = draw_profile_actions(policy.pi, states, mu, rng)
            pairs = sorted(zip(states, actions))
            states = [p[0] for p in pairs]
            actions = [p[1] for p in pairs]
            profile = AgentProfile(states=tuple(states), actions=tuple(actions))
            h = team_dist_of(profile, g.n_states, model.n_actions)
            rows.append(_traj_row(t, g, model, mu, h))
            states = sorted(_move_profile(model, g, states, actions, mu, rng))
        agent_csv = run_dir / "trajectory_agents.csv"
        agent_csv.write_text(_csv_text(_traj_header(g, model), rows))
        outputs.append(agent_csv)
    return outputs


def cmd_oracle(cfg: dict, run_dir: Path) -> list[Path]:
    """All exact tables for the configured policy, keyed by the Xi index."""
    instance = build_instance(cfg)
    g, model, p0 = instance.graph, instance.model, instance.p0
    policy = build_policy(cfg, instance)
    osec = cfg["oracle"]
    oracle = ExactOracle(model, g, xi_cap=osec["xi_cap"])
    tables = oracle.compute_tables(policy, p0, tol=osec["tol"])
    xi = oracle.xi
    dump = {
        "xi": [
            {"id": i, "mu": list(xi.pair(i)[0].counts),
             "h": [list(r) for r in xi.pair(i)[1].counts]}
            for i in range(xi.n_xi)
        ],
        "q_team": {str(s): tables.q_team[s].tolist() for s in tables.q_team},
        "q_team_weighted": {
            str(s): tables.q_team_weighted[s].tolist() for s in tables.q_team_weighted
        },
        "q_global": tables.q_global.tolist(),
        "q_opt": tables.q_opt.tolist(),
        "v_weighted": {
            "mus": [list(m) for m in xi.mus],
            "values": tables.v_weighted.tolist(),
        },
        "stationary": tables.stationary.tolist(),
        "visitation": tables.visitation.tolist(),
        "tolerances": {"fixed_point": osec["tol"]},
    }
    out = run_dir / "oracle_tables.json"
    write_json(out, dump)
    return [out]


def cmd_train(cfg: dict, run_dir: Path) -> list[Path]:
    instance = build_instance(cfg)
    g, model, p0 = instance.graph, instance.model, instance.p0
    tcfg = trainer_config(cfg)
    seed = cfg["seed"]
    outputs = []
    if cfg["training"]["mode"] == "critic":
        policy = build_policy(cfg, instance)
        critic = critic_train(model, g, policy, tcfg, seed, p0, log_residuals=True)
        log_csv = run_dir / "training_log.csv"
        header = ["iteration"] + [f"tdloss_{lab}" for lab in g.labels]
        rows = [
            [t] + [repr(float(v)) for v in critic.sq_residuals[t]]
            for t in range(critic.sq_residuals.shape[0])
        ]
        log_csv.write_text(_csv_text(header, rows))
        outputs.append(log_csv)
        ck = run_dir / "critic.json"
        save_checkpoint(
            ck,
            [critic.avg_net(s) for s in range(g.n_states)],
            kind="critic",
            extras={"k": critic.k, "seed": seed},
        )
        outputs.append(ck)
    else:
        oracle = ExactOracle(model, g, xi_cap=cfg["oracle"]["xi_cap"]) if tcfg.oracle_j else None
        result = actor_train(model, g, tcfg, seed, p0, oracle=oracle)
        log_csv = run_dir / "training_log.csv"
        header = (
            ["iteration"]
            + [f"tdloss_{lab}" for lab in g.labels]
            + ["j_estimate"]
        )
        rows = []
        for t in range(len(result.j_values)):
            rows.append(
                [t + 1]
                + [repr(float(v)) for v in result.critic_residuals[t]]
                + [repr(float(result.j_values[t]))]
            )
        log_csv.write_text(_csv_text(header, rows))
        outputs.append(log_csv)
        ck = run_dir / "actor.json"
        save_checkpoint(
            ck,
            result.params.nets,
            kind="actor",
            extras={
                "tau": result.params.tau,
                "seed": seed,
                "best_iteration": result.best_iteration + 1,
                "j_kind": result.j_kind,
            },
        )
        outputs.append(ck)
    return outputs


def cmd_verify(cfg: dict, run_dir: Path) -> tuple[list[Path], bool]:
    from .verification import run_all

    report = run_all(cfg)
    out = run_dir / "verification_report.json"
    write_json(out, report)
    ok = all(c["passed"] for c in report["checks"])
    return [out], ok


def cmd_export(path: Path, columns: Optional[list[str]]) -> str:
    """Whitespace-separated columns from a run CSV, ready for gnuplot."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if columns:
            missing = [c for c in columns if c not in header]
            if missing:
                raise MfnetError(f"columns not in {path}: {missing}")
            idx = [header.index(c) for c in columns]
        else:
            idx = list(range(len(header)))
        lines = ["# " + " ".join(header[i] for i in idx)]
        for row in reader:
            lines.append(" ".join(row[i] for i in idx))
    return "\n".join(lines) + "\n"


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", type=str, default=None, help="run directory")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config leaf via dotted path (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfnet",
        description="Mean-field multi-agent RL on a network of states",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "seeded agent- and team-level trajectories"),
        ("oracle", "exact ground-truth tables"),
        ("train", "run the critic or actor-critic trainer"),
        ("verify", "run the acceptance criteria and write a report"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
    p = sub.add_parser("export", help="dump gnuplot-ready columns from a run CSV")
    p.add_argument("file", type=str, help="CSV file from a run directory")
    p.add_argument("--columns", type=str, default=None, help="comma-separated columns")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export":
            sys.stdout.write(cmd_export(Path(args.file), args.columns.split(",") if args.columns else None))
            return 0
        cfg = load_config(args.config, sets=args.set, seed=args.seed)
        run_dir = _resolve_run_dir(cfg, args.out, args.command)
        with run_lock(run_dir):
            manifest = ManifestBuilder(run_dir, cfg, args.command)
            tic = time.perf_counter()
            ok = True
            if args.command == "simulate":
                outputs = cmd_simulate(cfg, run_dir)
            elif args.command == "oracle":
                outputs = cmd_oracle(cfg, run_dir)
                instance = build_instance(cfg, validate=False)
                oracle = ExactOracle(
                    instance.model, instance.graph, xi_cap=cfg["oracle"]["xi_cap"]
                )
                manifest.add_size("n_xi", oracle.xi.n_xi)
                manifest.add_size("n_mus", oracle.xi.n_mus)
            elif args.command == "train":
                outputs = cmd_train(cfg, run_dir)
            elif args.command == "verify":
                outputs, ok = cmd_verify(cfg, run_dir)
            else:  # pragma: no cover
                raise MfnetError(f"unknown command {args.command}")
            manifest.add_timing(args.command, time.perf_counter() - tic)
            for path in outputs:
                manifest.add_output(path)
            manifest.write()
            if not ok:
                print("verification FAILED; see verification_report.json", file=sys.stderr)
                return VerificationError.exit_code
        return 0
    except MfnetError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
