"""``raml-lab`` command line.

Exit status: 0 success, 1 check or experiment failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from typing import List, Optional

from . import config as cfgmod
from .experiments import edit_hist_rows, payoff_table, run_sweep
from .io import csv_text, fmt, jsonl_text, write_atomic
from .verify import run_suites

log = logging.getLogger("raml_lab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="raml-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="YAML file; command-line flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("verify", help="run identity / proposition / sampler / gradient checks")
    p.add_argument("--suite", choices=("all",) + cfgmod.SUITES)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--draws", type=int, help="sampler suite draw count (default 1e6)")
    p.add_argument("--out")

    p = sub.add_parser("edit-hist", help="distribution of the number of edits per temperature")
    p.add_argument("--m", type=int)
    p.add_argument("--v", type=int)
    p.add_argument("--tau", help="comma-separated temperatures")
    p.add_argument("--mode", choices=("as_written", "figure1"))
    p.add_argument("--e-max", type=int)
    p.add_argument("--out")

    p = sub.add_parser("payoff", help="exact payoff distribution around a target")
    p.add_argument("--target")
    p.add_argument("--vocab", help="symbols, one character per token, e.g. 01 or abc")
    p.add_argument("--tau", type=float)
    p.add_argument("--len", type=int)
    p.add_argument("--up-to", type=_bool, nargs="?", const=True,
                   help="enumerate lengths 0..len instead of exactly len")
    p.add_argument("--reward", choices=cfgmod.REWARD_KINDS)
    p.add_argument("--out")

    p = sub.add_parser("train", help="SGD on a toy copy/reverse task over a temperature grid")
    p.add_argument("--task", choices=("copy", "reverse"))
    p.add_argument("--method", help="ml, raml, rl or a comma-separated list")
    p.add_argument("--tau", help="comma-separated temperatures")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int, help="pairs per step; 0 means all")
    p.add_argument("--grad", help="exact or stoch:N")
    p.add_argument("--seeds", help="comma-separated master seeds")
    p.add_argument("--v", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--model", choices=("tabular", "position_factorized"))
    p.add_argument("--reward", choices=cfgmod.REWARD_KINDS)
    p.add_argument("--init-scale", type=float)
    p.add_argument("--baseline", help="constant or 'mean'")
    p.add_argument("--literal-rl", type=_bool, nargs="?", const=True)
    p.add_argument("--timing", type=_bool, nargs="?", const=True,
                   help="include wall_time_ms (breaks byte-identical reruns)")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    skip = {"command", "config", "verbose"}
    return {k: v for k, v in vars(args).items() if k not in skip}


def _emit(path: Optional[str], text: str) -> None:
    if path:
        write_atomic(path, text)
    else:
        sys.stdout.write(text)


def cmd_verify(cfg: cfgmod.VerifyConfig) -> int:
    t0 = time.perf_counter()
    results = run_suites(cfg.suites, cfg.trials, cfg.seed, cfg.draws)
    ok = all(r.passed for r in results)
    lines = [
        f"# raml-lab verify suite={cfg.suite} trials={cfg.trials} seed={cfg.seed} draws={cfg.draws}",
        *(r.line() for r in results),
        f"RESULT {'PASS' if ok else 'FAIL'} ({sum(r.passed for r in results)}/{len(results)} checks)",
    ]
    _emit(cfg.out, "\n".join(lines) + "\n")
    log.info("verify finished in %.1fs", time.perf_counter() - t0)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_edit_hist(cfg: cfgmod.EditHistConfig) -> int:
    rows = edit_hist_rows(cfg)
    comments = [f"edit-hist m={cfg.m} v={cfg.v} mode={cfg.mode} e_max={cfg.e_max}"]
    _emit(cfg.out, csv_text(("tau", "e", "probability"),
                            ((fmt(t), e, fmt(p)) for t, e, p in rows), comments))
    return EXIT_OK


def cmd_payoff(cfg: cfgmod.PayoffConfig) -> int:
    try:
        rows, log_z, _ = payoff_table(cfg)
    except ValueError as exc:
        print(f"raml-lab payoff: {exc}", file=sys.stderr)
        return EXIT_FAIL
    comments = [
        f"payoff target={cfg.target} vocab={cfg.vocab} tau={fmt(cfg.tau)} len={cfg.len}"
        f" up_to={cfg.up_to} reward={cfg.reward}",
        f"logZ={fmt(log_z) if log_z is not None else 'none'}",
    ]
    _emit(cfg.out, csv_text(("sequence", "probability"), ((s, fmt(p)) for s, p in rows), comments))
    return EXIT_OK


def cmd_train(cfg: cfgmod.TrainConfig) -> int:
    lines, summary = run_sweep(cfg)
    _emit(cfg.out, jsonl_text(lines))
    out = sys.stderr if not cfg.out else sys.stdout
    print("method  tau      seeds  mean_final_expected_reward (-, +)", file=out)
    for row in summary:
        if "mean_final_expected_reward" in row:
            print(f"{row['method']:<7} {row['tau']:<8g} {row['n_seeds']:<6d} "
                  f"{row['mean_final_expected_reward']:.6f} ({row['minus']:+.2e}, {row['plus']:+.2e})",
                  file=out)
        else:
            print(f"{row['method']:<7} {row['tau']:<8g} {row['n_seeds']:<6d} all runs diverged", file=out)
    return EXIT_FAIL if any(r["n_diverged"] for r in summary) else EXIT_OK


COMMANDS = {
    "verify": cmd_verify,
    "edit-hist": cmd_edit_hist,
    "payoff": cmd_payoff,
    "train": cmd_train,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = cfgmod.load_file(args.config) if args.config else {}
        cfg = cfgmod.build(args.command, file_values, _overrides(args))
    except cfgmod.ConfigError as exc:
        print(f"raml-lab {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
