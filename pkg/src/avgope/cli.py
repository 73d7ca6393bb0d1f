"""Command-line interface: ``simulate``, ``evaluate`` and ``coverage``.

Exit codes are 0 on success, 1 on runtime failure and 2 on bad flags or
an invalid configuration.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .core import Policy, always_policy, binned_policy, load_csv, threshold_policy, uniform_policy, write_csv
from .exceptions import AvgOPEError, ConfigError, InvalidPolicyOutput, StudyFailure

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SCHEMA_VERSION = "1.0"


class UsageError(Exception):
    """Bad input detected before any work starts (exit code 2)."""


# ------------------------------------------------------------------ policies


def _coordinate(value, d):
    """Coordinate given as a 0-based index or a column name ``s_k``."""
    if isinstance(value, str):
        if not value.startswith("s_") or not value[2:].isdigit():
            raise InvalidPolicyOutput(f"unknown state coordinate {value!r}")
        idx = int(value[2:]) - 1
    else:
        idx = int(value)
    if d is not None and not 0 <= idx < d:
        raise InvalidPolicyOutput(f"state coordinate {value!r} out of range for d={d}")
    return idx


def policy_from_spec(spec: str, num_actions: int, d=None) -> Policy:
    """Build a policy from a command-line spec.

    Built-ins are ``always`` (action 1), ``always:<a>``, ``never`` (action
    0) and ``uniform``.  Anything else is read as a JSON file holding either
    ``{"type": "threshold", "coordinate", "threshold", "above", "below"}``
    or ``{"type": "table", "coordinates", "edges", "table", "default"}``;
    table keys are comma-separated bin indices.
    """
    if spec == "never":
        return always_policy(0, num_actions, "never")
    if spec == "always":
        return always_policy(1, num_actions, "always")
    if spec.startswith("always:"):
        try:
            a = int(spec.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad policy spec {spec!r}") from None
        if not 0 <= a < num_actions:
            raise InvalidPolicyOutput(f"action {a} out of range for {num_actions} actions")
        return always_policy(a, num_actions, spec)
    if spec == "uniform":
        return uniform_policy(num_actions)
    path = Path(spec)
    if not path.is_file():
        raise UsageError(f"unknown policy {spec!r} (not a built-in name or a file)")
    with open(path) as fh:
        doc = json.load(fh)
    kind = doc.get("type")
    label = doc.get("label", path.stem)
    if kind == "threshold":
        pol = threshold_policy(_coordinate(doc["coordinate"], d), float(doc["threshold"]), doc["above"], doc["below"], label)
    elif kind == "table":
        coords = [_coordinate(c, d) for c in doc["coordinates"]]
        table = {tuple(int(b) for b in str(k).split(",")): v for k, v in doc["table"].items()}
        pol = binned_policy(coords, doc["edges"], table, doc.get("default"), label)
    else:
        raise InvalidPolicyOutput(f"{path}: policy type must be 'threshold' or 'table', got {kind!r}")
    if pol.num_actions != num_actions:
        raise InvalidPolicyOutput(f"{path}: policy has {pol.num_actions} actions, data has {num_actions}")
    return pol


# ------------------------------------------------------------------ commands


def cmd_simulate(args) -> int:
    from .simulator import FiniteMDP, LuckettModelConfig, simulate_finite_mdp, simulate_luckett

    if args.model == "luckett":
        data = simulate_luckett(LuckettModelConfig(seed=args.seed), args.n, args.t)
    elif args.model.startswith("mdp:"):
        mdp = FiniteMDP.load(args.model[4:])
        behavior = np.full((mdp.num_states, mdp.num_actions), 1.0 / mdp.num_actions)
        data = simulate_finite_mdp(mdp, behavior, args.n, args.t, args.seed)
    else:
        raise UsageError(f"unknown model {args.model!r}; use 'luckett' or 'mdp:<file>'")
    write_csv(data, args.out)
    return 0


def cmd_evaluate(args) -> int:
    from .pipeline import evaluate_policies
    from .tuning import write_score_table

    data = load_csv(args.data, num_actions=args.num_actions)
    policies = [policy_from_spec(s, data.num_actions, data.d) for s in args.policy]
    ev = evaluate_policies(data, policies, args.level, args.seed, max_centers=args.max_centers)
    with open(args.out, "w") as fh:
        json.dump(ev.inference.to_dict(), fh, indent=2)
        fh.write("\n")
    if args.score_tables:
        out = Path(args.score_tables)
        out.mkdir(parents=True, exist_ok=True)
        for j, table in enumerate(ev.score_tables):
            write_score_table(table, out / f"scores_{j}.csv")
    return 0


def load_study_configs(path):
    """Coverage configs from a TOML file.

    Keys are the :class:`StudyConfig` fields; ``n`` and ``T`` may be lists,
    in which case one study runs per ``(n, T)`` combination.
    """
    from .coverage import StudyConfig

    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if "n" not in doc or "T" not in doc:
        raise ConfigError("config needs 'n' and 'T'")
    ns = doc.pop("n")
    Ts = doc.pop("T")
    ns = ns if isinstance(ns, list) else [ns]
    Ts = Ts if isinstance(Ts, list) else [Ts]
    return [StudyConfig.from_dict({"n": n, "T": T, **doc}) for n, T in itertools.product(ns, Ts)]


def cmd_coverage(args) -> int:
    from .coverage import run_study, write_table

    configs = load_study_configs(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = [run_study(c, jobs=args.jobs) for c in configs]
    doc = {"spec_version": SCHEMA_VERSION, "studies": [r.to_dict() for r in results]}
    with open(out / "study.json", "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    rows = [row for r in results for row in r.rows()]
    rows.sort(key=lambda row: (row["case"], row["n"], row["T"]))
    write_table(rows, out / "table.csv")
    return 0


# ------------------------------------------------------------------ parser


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avgope", description="Off-policy inference for the average reward.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a dataset")
    p.add_argument("--model", required=True, help="'luckett' or 'mdp:<json file>'")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--t", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="estimate average rewards with confidence intervals")
    p.add_argument("--data", required=True)
    p.add_argument("--policy", action="append", required=True, help="always[:a], never, uniform, or a JSON policy file")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--num-actions", type=_positive_int, default=None)
    p.add_argument("--max-centers", type=_positive_int, default=1000)
    p.add_argument("--score-tables", default=None, help="directory for per-policy tuning score tables")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("coverage", help="run a Monte-Carlo coverage study")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.set_defaults(func=cmd_coverage)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "evaluate" and not 0 < args.level < 1:
        print(f"error: --level must lie in (0, 1), got {args.level}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StudyFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (AvgOPEError, OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
