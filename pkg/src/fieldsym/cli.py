"""Command-line front end.

Exit codes: 0 when every requested verdict passes, 1 when an analysis finds a
violation, 2 for usage, input and parse errors.
"""

from __future__ import annotations

import argparse
import os
import sys

from .dsl import SHIPPED, ModelError, parse_model, shipped_text
from .expr import ExprError
from .goldstone import ConfigError, MissingDilaton, NoPotential, VacuumConfig
from .report import (Report, conformal_sections, emit_report, goldstone_sections, higgs_sections,
                     oracle_section, pick_transformations, verify_section)

COMMANDS = ("verify", "goldstone", "higgs", "conformal", "oracle")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)

    def exit(self, status: int = 0, message: str | None = None):
        if message:
            sys.stderr.write(message)
        raise SystemExit(status)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--model", required=True,
                        help="model file, or the name of a shipped model (" + ", ".join(SHIPPED) + ")")
    common.add_argument("--param", default="", help='parameter values, e.g. "lambda=0.5,v=1"')
    common.add_argument("--vacuum", default=None, help='constant configuration, e.g. "phi[1]=1,phi[2]=0"')
    common.add_argument("--tol", type=float, default=None, help="tolerance override")
    common.add_argument("--format", choices=("text", "json"), default="text")
    common.add_argument("--dimension", type=int, default=None, help="override the declared dimension")
    common.add_argument("--transform", action="append", default=None,
                        help="restrict to a named transformation (repeatable)")
    common.add_argument("--override", action="store_true",
                        help="count transformations even if they fail verification")

    p = _Parser(prog="fieldsym", description="Symmetry and Goldstone analysis of classical field models.")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True
    sub.add_parser("verify", parents=[common], help="check transformations against the Lagrangian")
    sub.add_parser("goldstone", parents=[common], help="mass matrix and Goldstone modes at a vacuum")
    sub.add_parser("higgs", parents=[common], help="gauge constraints, mass and the polar rewrite")
    c = sub.add_parser("conformal", parents=[common], help="dilation and special conformal constraints")
    c.add_argument("--dilaton", default=None)
    c.add_argument("--scale", default="f", help="parameter the dilaton shift divides by")
    o = sub.add_parser("oracle", parents=[common], help="finite-difference checks on a periodic lattice")
    o.add_argument("--sites", type=int, default=16)
    o.add_argument("--no-require-solution", action="store_true",
                   help="run the check even where the configuration is not a solution")
    return p


def _caret(text: str, err: ModelError) -> str:
    lines = text.splitlines() or [""]
    line = lines[min(err.line, len(lines)) - 1]
    return f"{line}\n{' ' * (err.column - 1)}^"


def load_model(source: str, dimension: int | None):
    """Path first, then the shipped catalogue (with or without .ftl)."""
    if os.path.isfile(source):
        with open(source, "rb") as fh:
            raw = fh.read()
        label = source
    else:
        stem = os.path.basename(source)
        stem = stem[:-4] if stem.endswith(".ftl") else stem
        if stem not in SHIPPED:
            raise UsageError(f"no model file or shipped model named {source!r}")
        raw = shipped_text(stem).encode("utf-8")
        label = stem
    try:
        return parse_model(raw, dimension)
    except ModelError as err:
        text = raw.decode("utf-8", errors="replace")
        kind = type(err).__name__
        raise UsageError(f"{label}:{err.line}:{err.column}: {kind}: {err.message}\n"
                         f"{_caret(text, err)}") from None


def _vacuum(m, args, required: bool) -> VacuumConfig | None:
    if args.vacuum is None:
        if required:
            raise UsageError(f"{args.command} needs --vacuum")
        if args.param:
            VacuumConfig.from_strings(m, "", args.param)
        return None
    return VacuumConfig.from_strings(m, args.vacuum, args.param)


def _transforms(m, args, kinds=None) -> list:
    try:
        return pick_transformations(m, args.transform, kinds)
    except KeyError as exc:
        raise UsageError(f"unknown transformation {exc.args[0]}") from None


def run(argv: list) -> tuple:
    """Return (exit code, report bytes or None, error text or None)."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return 2, None, f"usage error: {exc}"
    except SystemExit as exc:       # --help
        return (exc.code if isinstance(exc.code, int) else 0), None, None
    try:
        m = load_model(args.model, args.dimension)
        rep = Report(m.name, args.command)
        if args.command == "verify":
            data, ok = verify_section(m, _transforms(m, args))
            rep.add("symmetry verdicts", data, ok)
        elif args.command == "goldstone":
            v = _vacuum(m, args, True)
            tol = args.tol if args.tol is not None else 1e-9
            for title, data, ok in goldstone_sections(m, v, _transforms(m, args), args.override, tol):
                rep.add(title, data, ok)
        elif args.command == "higgs":
            v = _vacuum(m, args, False)
            tol = args.tol if args.tol is not None else 1e-12
            for title, data, ok in higgs_sections(m, v, tol):
                rep.add(title, data, ok)
        elif args.command == "conformal":
            v = _vacuum(m, args, False)
            for title, data, ok in conformal_sections(m, v, args.override, args.dilaton, args.scale):
                rep.add(title, data, ok)
        else:
            v = _vacuum(m, args, True)
            tol = args.tol if args.tol is not None else 1e-6
            data, ok = oracle_section(m, v, _transforms(m, args), args.sites, tol,
                                      not args.no_require_solution)
            rep.add("lattice oracle", data, ok)
    except UsageError as exc:
        return 2, None, f"error: {exc}"
    except (ConfigError, NoPotential, MissingDilaton, ExprError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        return 2, None, f"error: {type(exc).__name__}: {msg}"
    except RecursionError:
        return 2, None, "error: input nests too deeply"
    return rep.exit_status, emit_report(rep, args.format), None


def main(argv: list | None = None) -> int:
    code, out, err = run(sys.argv[1:] if argv is None else list(argv))
    if out is not None:
        sys.stdout.buffer.write(out)
        sys.stdout.flush()
    if err:
        sys.stderr.write(err + "\n")
    return code
