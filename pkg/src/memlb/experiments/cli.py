"""Command line: run, verify, params, replay."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from ..ovg import DEFAULT_C_H, theorem_parameters
from ..hard_instances import PAPER_CONSTANTS, RELAXED_FEAS, RELAXED_OPT
from .config import ExperimentConfig, parse_overrides, records_to_csv
from .runner import ALGORITHMS, cmd_run, replay_transcript
from .suite import default_suite


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v.strip()] if s else []


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _config(a) -> ExperimentConfig:
    return ExperimentConfig(mode=a.mode, ds=_ints(a.d), Ms=_ints(a.M), ks=_ints(a.k) or [2],
                            algs=a.alg.split(","), trials=a.trials, seed=a.seed, budget=a.budget,
                            overrides=parse_overrides(a.const_overrides), paper_exact=a.paper_exact,
                            c_H=a.c_H, out=a.out)


def do_run(a) -> int:
    cfg = _config(a)
    for alg in cfg.algs:
        if alg not in ALGORITHMS:
            print(f"unknown algorithm {alg!r}; choose from {', '.join(ALGORITHMS)}", file=sys.stderr)
            return 2
    transcripts = {} if a.transcripts else None
    recs = cmd_run(cfg, transcripts=transcripts)
    _write(records_to_csv(recs), cfg.out)
    if cfg.out:
        meta = {"config": cfg.to_dict(), "notes": [r.note for r in recs if r.note]}
        Path(cfg.out).with_suffix(".config.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    if transcripts:
        root = Path(a.transcripts)
        root.mkdir(parents=True, exist_ok=True)
        for (d, M, k, alg, seed), text in sorted(transcripts.items()):
            (root / f"{cfg.mode}_d{d}_k{k}_M{M}_{alg}_seed{seed}.jsonl").write_text(text)
    return 0


def do_verify(a) -> int:
    cfg = _config(a)
    ds = tuple(cfg.ds) if a.d else (16, 32, 64)
    results = default_suite(cfg.trials, ds, cfg.seed, quick=a.quick)
    lines = [json.dumps({"config": cfg.to_dict()}, sort_keys=True)]
    lines += [json.dumps(r.to_json(), sort_keys=True) for r in results]
    _write("\n".join(lines) + "\n", cfg.out)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:28s} stat={r.statistic:.6g} thr={r.threshold:.6g} "
              f"trials={r.trials}", file=sys.stderr)
    return 0 if all(r.passed for r in results) else 1


def do_params(a) -> int:
    ds = _ints(a.d) or [16, 32, 64, 128, 1024, 10**4, 10**6]
    Ms = _ints(a.M) or [1024]
    mode = a.mode if a.mode in ("opt", "feas") else "opt"
    if a.paper_exact:
        consts = PAPER_CONSTANTS
    else:
        consts = dict(RELAXED_OPT if mode == "opt" else RELAXED_FEAS)
        consts.update(parse_overrides(a.const_overrides))
    cols = ["d", "M", "k", "p_max", "alpha", "beta", "m_lower", "condition"]
    rows = [",".join(cols)]
    notes = []
    for d in ds:
        for M in Ms:
            t = theorem_parameters(d, M, a.c_H, mode, consts=consts)
            rows.append(",".join(str(t[c]) if not isinstance(t[c], float) else repr(t[c]) for c in cols))
            notes += [f"d={d} M={M}: {n}" for n in t["notes"]]
    text = "\n".join(rows) + "\n"
    if notes:
        text += "".join(f"# {n}\n" for n in notes)
    _write(text, a.out)
    return 0


def do_replay(a) -> int:
    rep = replay_transcript(Path(a.file).read_text())
    _write(json.dumps(rep, sort_keys=True) + "\n", a.out)
    return 0 if rep["equal"] else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memlb", description="Adversarial oracles and memory-constrained algorithms")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, mode_default="opt"):
        p.add_argument("--mode", default=mode_default, choices=["opt", "feas", "ovg", "verify"])
        p.add_argument("--d", default="", help="comma-separated dimensions")
        p.add_argument("--M", default="", help="comma-separated memory sizes in bits")
        p.add_argument("--k", default="", help="comma-separated k values (default 2)")
        p.add_argument("--trials", type=int, default=10)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--budget", type=int, default=None, help="query budget per run (default d^2)")
        p.add_argument("--const-overrides", action="append", default=[], metavar="key=val")
        p.add_argument("--paper-exact", action="store_true")
        p.add_argument("--c-H", dest="c_H", type=float, default=DEFAULT_C_H)
        p.add_argument("--out", default=None)

    p = sub.add_parser("run", help="sweep algorithms against an adversary and emit CSV")
    common(p)
    p.add_argument("--alg", default="descender", help=f"comma-separated, from {', '.join(ALGORITHMS)}")
    p.add_argument("--transcripts", default=None, help="directory for per-trial JSONL transcripts")
    p.set_defaults(func=do_run)

    p = sub.add_parser("verify", help="run the property verification suite")
    common(p, "verify")
    p.set_defaults(trials=100, alg="descender")
    p.add_argument("--quick", action="store_true", help="smaller Monte-Carlo sample sizes")
    p.set_defaults(func=do_verify)

    p = sub.add_parser("params", help="print the trade-off parameter table")
    common(p)
    p.set_defaults(func=do_params)

    p = sub.add_parser("replay", help="re-execute a transcript file and diff")
    p.add_argument("file")
    p.add_argument("--out", default=None)
    p.set_defaults(func=do_replay)
    return ap


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    return a.func(a)


if __name__ == "__main__":
    raise SystemExit(main())
