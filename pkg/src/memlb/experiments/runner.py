"""Sweeps: build adversary and algorithm per trial, run the harness, judge success."""

from __future__ import annotations

import json
import math
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..adversary_feas import FeasAdversary, membership
from ..adversary_opt import OptAdversary, is_success_opt
from ..hard_instances import ParameterError, make_feas_params, make_opt_params
from ..harness import make_ellipsoid, make_nullspace_descender, make_subgradient_descent, run
from .config import ExperimentConfig, TradeoffRecord, records_to_csv, thread_count

ALGORITHMS = ("descender", "walk", "sgd", "ellipsoid")
DEFAULT_BITS = {"sgd": 16, "ellipsoid": 32}


def make_params(mode: str, d: int, k: int, cfg: ExperimentConfig):
    make = make_opt_params if mode == "opt" else make_feas_params
    return make(d, k, paper_exact=cfg.paper_exact, overrides=cfg.overrides)


def make_adversary(mode: str, params, seed: int):
    return OptAdversary(params, seed) if mode == "opt" else FeasAdversary(params, seed)


def descender_capacity(params) -> int:
    """Vector slots needed to hold v_0 and every constructed vector."""
    return 2 + params.k * params.p_max


def build_algorithm(name: str, adv, params, M: int | None, seed: int):
    """The algorithm for one trial; ``M`` (bits) sets the precision or capacity."""
    d = params.d
    if name in ("descender", "walk"):
        per = (d + 1) * 64
        cap = descender_capacity(params) if M is None else (M - 64) // per
        if cap < 1:
            raise ParameterError(f"M={M} leaves no room for one stored vector ({per + 64} bits needed)")
        kw = dict(capacity=cap, seed=seed, jitter=1.0 if name == "walk" else 0.0)
        if isinstance(adv, OptAdversary):
            return make_nullspace_descender(adv.A.dense(), "opt", eta=params.eta, gamma1=params.gamma1,
                                            gamma2=params.gamma2, **kw)
        return make_nullspace_descender(adv.A.dense(), "feas", eta1=params.eta1, **kw)
    if name == "sgd":
        b = DEFAULT_BITS["sgd"] if M is None else (M - 64) // d
        return make_subgradient_descent(d, b)
    if name == "ellipsoid":
        b = DEFAULT_BITS["ellipsoid"] if M is None else (M - 64) // (d + d * (d + 1) // 2)
        return make_ellipsoid(d, b)
    raise ValueError(f"unknown algorithm {name!r}; choose from {ALGORITHMS}")


@dataclass
class TrialResult:
    seed: int
    M: int
    success: bool
    queries: int
    periods: int
    transcript: str


def run_trial(mode: str, params, alg_name: str, M: int | None, seed: int, budget: int | None,
              keep_transcript: bool = False) -> TrialResult:
    adv = make_adversary(mode, params, seed)
    alg = build_algorithm(alg_name, adv, params, M, seed)
    budget = budget if budget is not None else params.d ** 2
    res = run(alg, adv.oracle_answer, budget)
    if mode == "opt":
        ok = adv.final and bool(is_success_opt(adv, res.final_output, params.eta / (2 * math.sqrt(params.d))))
    else:
        ok = adv.final and membership(adv, res.final_output)
    text = transcript_text(mode, params, seed, adv) if keep_transcript else ""
    return TrialResult(seed, alg.M, bool(ok), res.queries_used, adv.periods_completed, text)


def transcript_text(mode: str, params, seed: int, adv) -> str:
    head = {"mode": mode, "seed": seed, "params": params.to_dict(), "end_reason": adv.end_reason}
    return json.dumps({"header": head}, sort_keys=True) + "\n" + adv.transcript.to_jsonl(full=True)


def _record(d, M, alg, trials: list[TrialResult], cfg: ExperimentConfig, seed0: int, runtime: float) -> TradeoffRecord:
    if not trials:
        return TradeoffRecord(d, M or 0, alg, 0, 0, float("nan"), float("nan"), float("nan"), cfg.c_H, seed0, runtime)
    qs = [t.queries for t in trials]
    return TradeoffRecord(d, trials[0].M, alg, len(trials), sum(t.success for t in trials),
                          float(statistics.fmean(qs)), float(statistics.median(qs)),
                          float(statistics.fmean(t.periods for t in trials)), cfg.c_H, seed0, runtime)


def cmd_run(cfg: ExperimentConfig, *, transcripts: dict | None = None, log=sys.stderr) -> list[TradeoffRecord]:
    """One record per (d, M, k, algorithm); trial i uses seed cfg.seed + i."""
    mode = cfg.mode
    if mode not in ("opt", "feas"):
        raise ValueError("run supports modes opt and feas")
    records = []
    Ms = cfg.Ms or [None]
    workers = thread_count()
    for d in cfg.ds:
        for k in cfg.ks:
            for M in Ms:
                for alg in cfg.algs:
                    t0 = time.perf_counter()
                    try:
                        params = make_params(mode, d, k, cfg)
                        seeds = [cfg.seed + i for i in range(cfg.trials)]
                        keep = transcripts is not None

                        def one(s):
                            return run_trial(mode, params, alg, M, s, cfg.budget, keep)

                        if workers > 1:
                            with ThreadPoolExecutor(workers) as ex:
                                trials = list(ex.map(one, seeds))
                        else:
                            trials = [one(s) for s in seeds]
                        if keep:
                            for t in trials:
                                transcripts[(d, t.M, k, alg, t.seed)] = t.transcript
                        rec = _record(d, M, alg, trials, cfg, cfg.seed, time.perf_counter() - t0)
                    except ParameterError as exc:
                        rec = TradeoffRecord(d, M or 0, alg, 0, 0, float("nan"), float("nan"), float("nan"),
                                             cfg.c_H, cfg.seed, note=f"infeasible: {exc}")
                        print(f"[memlb] d={d} k={k} M={M} alg={alg}: {rec.note}", file=log)
                    records.append(rec)
    return records


def run_csv(cfg: ExperimentConfig) -> str:
    return records_to_csv(cmd_run(cfg))


# ------------------------------------------------------------- replay

def replay_transcript(text: str) -> dict:
    """Re-executes a saved transcript against a fresh same-seed adversary and diffs."""
    lines = [json.loads(s) for s in text.splitlines() if s.strip()]
    head = lines[0]["header"]
    p = head["params"]
    mode = head["mode"]
    overrides = None if p["paper_exact"] else p["consts"]
    if mode == "opt":
        params = make_opt_params(p["d"], p["k"], paper_exact=p["paper_exact"], overrides=overrides, n=p["n"])
    else:
        params = make_feas_params(p["d"], p["k"], paper_exact=p["paper_exact"], overrides=overrides, n=p["n"],
                                  max_construction_queries=p["max_construction_queries"])
    adv = make_adversary(mode, params, head["seed"])
    diffs = []
    for rec in lines[1:]:
        x = np.array(rec["x"], dtype=np.float64)
        adv.respond(x)
        got = adv.transcript[-1].to_json(full=True)
        if got != rec:
            keys = sorted(k for k in set(got) | set(rec) if got.get(k) != rec.get(k))
            diffs.append({"t": rec["t"], "fields": keys})
    return {"entries": len(lines) - 1, "diffs": diffs, "equal": not diffs,
            "end_reason": adv.end_reason, "recorded_end_reason": head["end_reason"]}
