"""Command line entry points: serve a session, or exercise one layer alone."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

from .gateway import DATA_DIR, ConfigError, GatewayConfig, GatewayError
from .grammar import GrammarError, NoParse, generate, load_grammar, parse
from .kb import KnowledgeBase
from .planning import (
    PlanningError,
    Unsolvable,
    load_domain,
    load_state,
    parse_goal,
    plan,
)
from .world import BadScenario, load_scenario

DEFAULT_SCENARIO = DATA_DIR / "scenarios" / "apartment.json"


def _kb_for(scenario: Path) -> KnowledgeBase:
    kb = KnowledgeBase()
    load_scenario(scenario, kb)
    return kb


def _render(node, depth: int = 0) -> str:
    from .grammar import Node, WildcardTok, WordTok

    pad = "  " * depth
    if isinstance(node, WordTok):
        return f"{pad}{node.text}"
    if isinstance(node, WildcardTok):
        return f"{pad}{{{node.kind}}} -> {' '.join(node.tokens)}"
    lines = [f"{pad}${node.name}"]
    lines.extend(_render(child, depth + 1) for child in node.children)
    return "\n".join(lines)


def _cmd_run(args: argparse.Namespace) -> int:
    config = GatewayConfig(
        scenario=Path(args.scenario),
        grammar=Path(args.grammar),
        domain=Path(args.domain),
        machines=Path(args.machines),
        tasks=Path(args.tasks),
        port=args.port,
    )
    from . import gateway

    if args.headless:
        if args.script is None:
            print("--headless needs --script", file=sys.stderr)
            return 2
        for line in gateway.run_headless(config, Path(args.script)):
            print(line)
        return 0
    gateway.serve(config)
    return 0


def _cmd_gen(args: argparse.Namespace) -> int:
    grammar = load_grammar(Path(args.grammar).read_text(encoding="utf-8"))
    kb = _kb_for(Path(args.scenario))
    for offset in range(args.count):
        sentence, _ = generate(grammar, kb, args.seed + offset)
        print(sentence)
    return 0


def _cmd_parse(args: argparse.Namespace) -> int:
    grammar = load_grammar(Path(args.grammar).read_text(encoding="utf-8"))
    kb = _kb_for(Path(args.scenario))
    try:
        tree = parse(grammar, kb, args.sentence)
    except NoParse as err:
        print(f"no parse: {err}", file=sys.stderr)
        return 1
    print(_render(tree))
    return 0


def _cmd_plan(args: argparse.Namespace) -> int:
    domain = load_domain(Path(args.domain))
    state = load_state(Path(args.state))
    goal = parse_goal(args.goal, domain)
    result = plan(domain, state, goal, horizon=args.horizon)
    if isinstance(result, Unsolvable):
        print(f"unsolvable within horizon {result.horizon}")
        return 1
    for step in result.steps:
        print(step.name)
    print(f"cost {result.cost:g}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="homebot")
    verbs = top.add_subparsers(dest="verb", required=True)

    run = verbs.add_parser("run", help="serve a live session over HTTP")
    run.add_argument("--scenario", required=True)
    run.add_argument("--grammar", default=str(DATA_DIR / "grammar.txt"))
    run.add_argument("--domain", default=str(DATA_DIR / "domain.json"))
    run.add_argument("--machines", default=str(DATA_DIR / "machines.json"))
    run.add_argument("--tasks", default=str(DATA_DIR / "tasks.json"))
    run.add_argument("--port", type=int, default=8000)
    run.add_argument("--headless", action="store_true",
                     help="no HTTP; run a script and print the trace log")
    run.add_argument("--script", default=None)
    run.set_defaults(fn=_cmd_run)

    gen = verbs.add_parser("gen", help="emit seeded sample commands")
    gen.add_argument("--grammar", required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--count", type=int, default=1)
    gen.add_argument("--scenario", default=str(DEFAULT_SCENARIO),
                     help="scenario supplying the wildcard vocabulary")
    gen.set_defaults(fn=_cmd_gen)

    par = verbs.add_parser("parse", help="parse one command sentence")
    par.add_argument("--grammar", required=True)
    par.add_argument("--sentence", required=True)
    par.add_argument("--scenario", default=str(DEFAULT_SCENARIO),
                     help="scenario supplying the wildcard vocabulary")
    par.set_defaults(fn=_cmd_parse)

    pl = verbs.add_parser("plan", help="plan for a goal from a state file")
    pl.add_argument("--domain", required=True)
    pl.add_argument("--state", required=True)
    pl.add_argument("--goal", required=True)
    pl.add_argument("--horizon", type=int, default=12)
    pl.set_defaults(fn=_cmd_plan)
    return top


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"config error in {err.file}: {err.diagnostic}", file=sys.stderr)
        return 2
    except (GatewayError, GrammarError, PlanningError, BadScenario, OSError) as err:
        print(str(err), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
