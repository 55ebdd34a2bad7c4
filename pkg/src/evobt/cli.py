"""``evobt`` command-line interface."""
from __future__ import annotations

import argparse
import logging
import random
import sys
from pathlib import Path

from evobt.bt import SkillRegistry
from evobt.config import ConfigError, load_config, with_overrides
from evobt.fitness import EpisodeLimits, FitnessWeights, run_episode, score
from evobt.harness import (
    COMPARE_HEADER,
    compare_rows,
    median_episodes,
    run_experiment,
    run_seeding,
    write_experiment,
    write_lines,
    write_seeds,
)
from evobt.llm import ProviderError, ProviderUnreachable
from evobt.text import ParseError, parse, validate
from evobt.world import PROFILES, SCENARIOS, get_profile, get_scenario

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PROVIDER = 3

log = logging.getLogger("evobt")


def _err(msg: str) -> None:
    print(f"evobt: error: {msg}", file=sys.stderr)


def _load(path: str, args):
    cfg = load_config(path)
    return with_overrides(cfg, getattr(args, "output_dir", None), getattr(args, "master_seed", None))


def _out_dir(cfg) -> Path:
    return Path(cfg.output_dir)


def _read_tree(path: str, registry):
    """Parse and validate a tree file; returns (tree, None) or (None, exit code)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        _err(f"cannot read {path}: {exc.strerror}")
        return None, EXIT_USAGE
    try:
        tree = parse(text)
    except ParseError as exc:
        print(f"{path}: {exc.code} at line {exc.position[0]}, column {exc.position[1]}: {exc}")
        return None, EXIT_USAGE
    report = validate(tree, registry)
    if not report.ok:
        print(f"{path}: invalid tree")
        print(report)
        return None, EXIT_USAGE
    return tree, None


def cmd_evolve(args) -> int:
    cfg = _load(args.config, args)
    results, _ = run_experiment(cfg, Path(args.config).parent)
    out = _out_dir(cfg)
    write_experiment(cfg, results, out)
    for r in results:
        reached = "-" if r.episodes_to_target is None else str(r.episodes_to_target)
        print(f"run {r.run_id}: best_J={r.trace.best_J:.6g} episodes={len(r.trace.rows)} "
              f"episodes_to_target={reached}")
    print(f"wrote {len(results)} trace file(s), summary.csv and curve.csv to {out}")
    return EXIT_OK


def _fmt_state(state) -> dict:
    return {"pos": f"({state.robot_pos[0]:g},{state.robot_pos[1]:g})", "localized": state.localized,
            "head": state.head, "tucked": state.tucked, "holding": state.holding,
            "cube": state.cube_at}


def _bool(x) -> str:
    return "true" if x else "false"


def cmd_run_bt(args) -> int:
    scenario = get_scenario(args.scenario)
    profile = get_profile(args.profile)
    registry = SkillRegistry.default(scenario.tables)
    tree, code = _read_tree(args.file, registry)
    if tree is None:
        return code

    def on_action(skill, param, status, before, after):
        old, new = _fmt_state(before), _fmt_state(after)
        delta = " ".join(f"{k}={_bool(v) if isinstance(v, bool) else v}"
                         for k, v in new.items() if old[k] != v)
        name = skill if param is None else f"{skill} {param}"
        print(f"t={after.clock:8.3f}  {name:<16} {status.name:<7} {delta}".rstrip())

    limits = EpisodeLimits()
    outcome = run_episode(tree, scenario, profile, limits, random.Random(args.seed),
                          registry=registry, on_action=on_action)
    J = score(outcome, FitnessWeights())
    print(f"J={J:.6g} d_cube_goal={outcome.d_cube_goal:.6g} d_robot_cube={outcome.d_robot_cube:.6g} "
          f"loc_err={outcome.loc_err:g} nodes={outcome.node_count} exec_time={outcome.exec_time:.6g} "
          f"root_ticks={outcome.root_ticks_used} picked={_bool(outcome.picked)} "
          f"placed={_bool(outcome.placed)}")
    return EXIT_OK


def cmd_seed(args) -> int:
    cfg = _load(args.config, args)
    if cfg.seeding.mode not in ("llm", "replay"):
        _err("seed requires seeding.mode 'llm' or 'replay'")
        return EXIT_USAGE
    result = run_seeding(cfg, Path(args.config).parent)
    out = _out_dir(cfg)
    write_seeds(result.survivors, result.log, out)
    rejected = len(result.log.rejections())
    print(f"requests={len(result.log)} valid={len(result.candidates)} rejected={rejected} "
          f"gate_threshold={result.threshold:.6g} accepted={len(result.survivors)}")
    print(f"wrote {len(result.survivors)} .bt file(s) and seed_log.jsonl to {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if len(args.configs) < 2:
        _err("compare needs at least two configs")
        return EXIT_USAGE
    cfgs = [_load(p, args) for p in args.configs]
    labels = [c.label or Path(p).stem for c, p in zip(cfgs, args.configs)]
    if len(set(labels)) != len(labels):
        _err("method labels must be distinct (set 'label' in the configs)")
        return EXIT_USAGE
    out = Path(args.output_dir) if args.output_dir else _out_dir(cfgs[0])
    rows = []
    for cfg, path, label in zip(cfgs, args.configs, labels):
        results, _ = run_experiment(cfg, Path(path).parent)
        write_experiment(cfg, results, out / label)
        rows.extend(compare_rows(label, results))
        med = median_episodes(results, cfg.gp.episode_budget)
        print(f"{label}: median episodes to J>={cfg.target_J:g}: {med:g}")
    out.mkdir(parents=True, exist_ok=True)
    write_lines(out / "compare.csv", COMPARE_HEADER, rows)
    print(f"wrote compare.csv to {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    registry = SkillRegistry.default(get_scenario(args.scenario).tables)
    tree, code = _read_tree(args.file, registry)
    if tree is None:
        return code
    report = validate(tree, registry)
    print(f"{args.file}: ok")
    for v in report.violations:
        print(f"  {v.severity}: {v.code} at {list(v.path)}: {v.detail}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", default=argparse.SUPPRESS,
                        help="directory for output files (overrides the config)")
    common.add_argument("--master-seed", type=int, default=argparse.SUPPRESS,
                        help="base seed; run i uses master_seed + i (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="evobt", parents=[common],
                                     description="Evolve behavior trees for a pick-and-place robot.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("evolve", parents=[common], help="run repeated evolutions from a config")
    p.add_argument("config")
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("run-bt", parents=[common], help="simulate one episode of a tree file")
    p.add_argument("file")
    p.add_argument("--scenario", default="scenario1", choices=sorted(SCENARIOS))
    p.add_argument("--profile", default="det", choices=sorted(PROFILES))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_run_bt)

    p = sub.add_parser("seed", parents=[common], help="request, validate and gate LLM seed trees")
    p.add_argument("config")
    p.set_defaults(func=cmd_seed)

    p = sub.add_parser("compare", parents=[common], help="run several configs into one long CSV")
    p.add_argument("configs", nargs="+")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate", parents=[common], help="parse and validate a tree file")
    p.add_argument("file")
    p.add_argument("--scenario", default="scenario1", choices=sorted(SCENARIOS))
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("output_dir", "master_seed", "verbose"):
        if not hasattr(args, name):
            setattr(args, name, None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"config: {exc}")
        return EXIT_USAGE
    except ProviderUnreachable as exc:
        _err(f"provider unreachable: {exc}")
        return EXIT_PROVIDER
    except ProviderError as exc:
        _err(f"provider error: {exc}")
        return EXIT_PROVIDER
    except FileNotFoundError as exc:
        _err(str(exc))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
