"""Verification suite: each check returns a PropertyResult with statistic, threshold and trials."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ..adversary_feas import FeasAdversary, certificate_xbar_feas, validate_cuts
from ..adversary_opt import (OptAdversary, check_consistency, certificate_xbar, corrupt_transcript)
from ..hard_instances import make_feas_params, make_opt_params
from ..harness import make_nullspace_descender, run
from ..ovg import (HintOracle, paper_exact_pmax_zero, play_strategy_feas, play_strategy_opt,
                   small_projection_frequency, symbolic_chains)
from ..sphere_geom import (discretize, fdot, fnorm, gram_schmidt, project_complement, robust_basis,
                           robust_basis_ratio_bound, sample_slab_sphere, sample_sphere)

DEFAULT_DS = (16, 32, 64)


@dataclass
class PropertyResult:
    name: str
    passed: bool
    statistic: float
    threshold: float
    trials: int
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"name": self.name, "status": "pass" if self.passed else "fail", "statistic": self.statistic,
                "threshold": self.threshold, "trials": self.trials, "detail": self.detail}


def mc_slack(p: float, n: int) -> float:
    """Three binomial standard deviations at rate p over n draws."""
    p = min(max(p, 0.0), 1.0)
    return 3.0 * math.sqrt(p * (1 - p) / n) if n else 0.0


# ------------------------------------------------------------- drivers

def descender_for(adv, seed: int, jitter: float = 0.0):
    prm = adv.params
    if isinstance(adv, OptAdversary):
        return make_nullspace_descender(adv.A.dense(), "opt", eta=prm.eta, gamma1=prm.gamma1, gamma2=prm.gamma2,
                                        capacity=2 + prm.k * prm.p_max, seed=seed, jitter=jitter)
    return make_nullspace_descender(adv.A.dense(), "feas", eta1=prm.eta1, capacity=2 + prm.k * prm.p_max,
                                    seed=seed, jitter=jitter)


def driven_opt(d: int, seed: int, k: int = 2, jitter: float = 0.0, overrides=None) -> OptAdversary:
    prm = make_opt_params(d, k, overrides=overrides)
    adv = OptAdversary(prm, seed)
    run(descender_for(adv, seed, jitter), adv.oracle_answer, d * d)
    return adv


def driven_feas(d: int, seed: int, k: int = 2, jitter: float = 0.0, overrides=None) -> FeasAdversary:
    prm = make_feas_params(d, k, overrides=overrides)
    adv = FeasAdversary(prm, seed)
    run(descender_for(adv, seed, jitter), adv.oracle_answer, d * d)
    return adv


def _jitter(i: int) -> float:
    return 0.0 if i % 2 == 0 else 1.0


# ------------------------------------------------------------- structural invariants

def family_violations(family, d: int, delta: float, tau: float) -> int:
    bad = 0
    items = [(None, family.v0, family.y0)] + [(k, v, family.ys.get(k)) for k, v in family.vecs.items()]
    for key, v, y in items:
        if y is None:
            bad += 1
            continue
        if fnorm(v.rep - y) > delta:
            bad += 1
        basis = family.bases.get(key) if key is not None else None
        if basis is not None and any(abs(fdot(b, y)) > tau for b in basis.vectors):
            bad += 1
    return bad


def check_structural(ds=DEFAULT_DS, runs_per_d: int = 100, seed: int = 0) -> PropertyResult:
    """l <= r <= k, lexicographic period monotonicity, slab constraints and discretization distance."""
    steps = viol = runs = vectors = 0
    for d in ds:
        tau = d ** -3.0
        for i in range(runs_per_d):
            s = seed + i
            adv = driven_opt(d, s, jitter=_jitter(i)) if i % 3 != 2 else driven_feas(d, s, jitter=_jitter(i))
            k = adv.params.k
            prev = None
            for entry in adv.invariant_log:
                steps += 1
                if isinstance(adv, OptAdversary):
                    p, l, r = entry
                    if not (l <= r <= k):
                        viol += 1
                else:
                    p, l = entry
                    if not 0 <= l <= k - 1:
                        viol += 1
                if prev is not None and (p, l) < prev[:2]:
                    viol += 1
                prev = entry
            vectors += 1 + len(adv.family)
            viol += family_violations(adv.family, d, adv.params.delta, tau)
            runs += 1
    return PropertyResult("structural_invariants", viol == 0, float(viol), 0.0, runs,
                          {"steps": steps, "vectors": vectors})


# ------------------------------------------------------------- consistency

def check_consistency_rate(d: int = 64, runs: int = 200, seed: int = 0, threshold: float = 0.05,
                           jitter: float = 1.0) -> PropertyResult:
    bad_runs = 0
    flagged = 0
    incomplete = 0
    for i in range(runs):
        adv = driven_opt(d, seed + i, jitter=jitter)
        if not adv.final:
            incomplete += 1
            bad_runs += 1
            continue
        rep = check_consistency(adv.transcript, adv)
        bad_runs += not rep.ok
        idx = (seed + i) % len(adv.transcript)
        flagged += not check_consistency(corrupt_transcript(adv.transcript, idx), adv).ok
    rate = bad_runs / runs if runs else 0.0
    passed = rate <= threshold and flagged == runs - incomplete
    return PropertyResult("oracle_consistency", passed, rate, threshold, runs,
                          {"fault_injection_flagged": flagged, "fault_injection_runs": runs - incomplete,
                           "incomplete": incomplete})


# ------------------------------------------------------------- certificates

def check_certificates(d: int = 64, runs: int = 200, seed: int = 0, threshold: float = 0.9) -> list[PropertyResult]:
    ok_opt = ok_feas = 0
    for i in range(runs):
        adv = driven_opt(d, seed + i, jitter=_jitter(i))
        ok_opt += adv.final and certificate_xbar(adv).ok
        fadv = driven_feas(d, seed + i, jitter=_jitter(i))
        ok_feas += fadv.final and certificate_xbar_feas(fadv).ok
    return [PropertyResult("certificate_opt", ok_opt / runs >= threshold, ok_opt / runs, threshold, runs),
            PropertyResult("certificate_feas", ok_feas / runs >= threshold, ok_feas / runs, threshold, runs)]


# ------------------------------------------------------------- cut validity

def check_cuts(ds=DEFAULT_DS, runs_per_d: int = 20, seed: int = 0, n_points: int = 1000) -> PropertyResult:
    invalid = cuts = pts = 0
    runs = 0
    for d in ds:
        for i in range(runs_per_d):
            adv = driven_feas(d, seed + i, jitter=_jitter(i))
            rep = validate_cuts(adv.transcript, adv, np.random.default_rng(seed + i), n_points)
            invalid += len(rep.violations)
            cuts += rep.cuts_checked
            pts += rep.points_tested
            runs += 1
    return PropertyResult("separation_validity", invalid == 0, float(invalid), 0.0, runs,
                          {"cuts": cuts, "points_tested": pts})


# ------------------------------------------------------------- reductions

def check_replay(ds=DEFAULT_DS, runs_per_d: int = 20, seed: int = 0, m: int = 40) -> PropertyResult:
    """Replay equality and check_win on every run where part 1 succeeds, both strategies."""
    ok = succ = attempts = 0
    reasons: dict[str, int] = {}
    for d in ds:
        for mode in ("opt", "feas"):
            for i in range(runs_per_d):
                s = seed + i
                oracle = HintOracle(d, 2, s)
                if mode == "opt":
                    prm = make_opt_params(d, 2)
                    alg = make_nullspace_descender(oracle.A.dense(), "opt", eta=prm.eta, gamma1=prm.gamma1,
                                                   gamma2=prm.gamma2, capacity=2 + 2 * prm.p_max, seed=s,
                                                   jitter=_jitter(i))
                    out = play_strategy_opt(alg, prm, m, s, budget=d * d)
                else:
                    prm = make_feas_params(d, 2)
                    alg = make_nullspace_descender(oracle.A.dense(), "feas", eta1=prm.eta1,
                                                   capacity=2 + 2 * prm.p_max, seed=s, jitter=_jitter(i))
                    out = play_strategy_feas(alg, prm, m, s, budget=d * d)
                attempts += 1
                if out.selected_period is None:
                    reasons[out.failure_reason or "?"] = reasons.get(out.failure_reason or "?", 0) + 1
                    continue
                succ += 1
                good = out.replay_equal and out.won
                ok += good
                if not good:
                    key = "replay mismatch" if not out.replay_equal else (out.failure_reason or "lost")
                    reasons[key] = reasons.get(key, 0) + 1
    rate = ok / succ if succ else 0.0
    return PropertyResult("reduction_replay", succ >= 100 and ok == succ, rate, 1.0, succ,
                          {"attempts": attempts, "part1_successes": succ, "failures": reasons})


# ------------------------------------------------------------- concentration and basis checks

def check_projection_tail(d: int, r: int, n: int = 10**5, ts=(0.1, 0.2, 0.3), seed: int = 0) -> PropertyResult:
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, d))
    x = g / np.linalg.norm(g, axis=1, keepdims=True)
    sq = np.sum(x[:, :r] ** 2, axis=1)
    worst = -math.inf
    detail = {}
    ok = True
    for t in ts:
        freq = float(np.mean(np.abs(sq - r / d) >= t))
        bound = 2 * math.exp(-d * t * t)
        lim = bound + mc_slack(min(bound, 1.0), n)
        detail[str(t)] = {"freq": freq, "bound": lim}
        ok = ok and freq <= lim
        worst = max(worst, freq - lim)
    return PropertyResult(f"projection_tail_d{d}", ok, worst, 0.0, n, detail)


def check_slab_tail(d: int, k: int, n: int = 10**5, ts=(4.0, 9.0), seed: int = 0) -> PropertyResult:
    """|x^T v| tail for v = phi(y), y uniform on the slab of k random directions."""
    rng = np.random.default_rng(seed)
    X = [sample_sphere(rng, d) for _ in range(k)]
    B = gram_schmidt(X)
    probe = sample_sphere(rng, d)
    delta = d ** -3.0
    vals = np.empty(n)
    for i in range(n):
        v = discretize(sample_slab_sphere(rng, B, d ** -3.0, d), delta)
        vals[i] = abs(float(v.rep @ probe))
    ok = True
    detail = {}
    worst = -math.inf
    for t in ts:
        thr = math.sqrt(t / d) + 1 / d**2 + delta
        freq = float(np.mean(vals >= thr))
        bound = 2 * math.sqrt(t) * math.exp(-t / 3)
        lim = bound + mc_slack(min(bound, 1.0), n)
        detail[str(t)] = {"freq": freq, "bound": lim}
        ok = ok and freq <= lim
        worst = max(worst, freq - lim)
    return PropertyResult(f"slab_tail_d{d}", ok, worst, 0.0, n, detail)


def margined_vectors(rng: np.random.Generator, d: int, r: int, delta: float) -> list[np.ndarray]:
    Y: list[np.ndarray] = []
    while len(Y) < r:
        y = sample_sphere(rng, d)
        if not Y or fnorm(project_complement(Y, y)) >= delta:
            Y.append(y)
    return Y


def check_robust_basis(instances: int = 50, seed: int = 0, probes: int = 100) -> PropertyResult:
    """Orthonormality, the sigma_{r'} lower bound and the sup-norm ratio bound on margined inputs."""
    rng = np.random.default_rng(seed)
    viol = sigma_viol = 0
    worst = worst_sharp = 0.0
    for _ in range(instances):
        d = int(rng.integers(8, 25))
        r = int(rng.integers(1, d // 2 + 1))
        s = int(rng.integers(2, 4))
        delta = float(rng.uniform(0.2, 0.6))
        Y = margined_vectors(rng, d, r, delta)
        Ym = np.array(Y)
        rp = -(-r // s)
        sig = np.linalg.svd(Ym.T, compute_uv=False)
        sigma_viol += sig[rp - 1] < delta ** (s / (s - 1)) / d ** (1 / (2 * s))
        Z = robust_basis(Y, s, delta)
        G = Z.vectors @ Z.vectors.T
        if Z.size != rp or np.max(np.abs(G - np.eye(Z.size))) > 1e-9:
            viol += 1
        bound = robust_basis_ratio_bound(d, s, delta)
        sharp = d ** (0.5 + 1 / (2 * s)) / delta ** (s / (s - 1))
        for j in range(probes):
            a = rng.choice([-1.0, 1.0], size=d) if j % 2 else rng.standard_normal(d)
            num = float(np.max(np.abs(Z.vectors @ a)))
            den = float(np.max(np.abs(Ym @ a)))
            ratio = num / den if den > 0 else 0.0
            worst = max(worst, ratio / bound)
            worst_sharp = max(worst_sharp, ratio / sharp)
            viol += ratio > bound
    return PropertyResult("robust_basis_inequality", viol == 0 and sigma_viol == 0, worst, 1.0, instances,
                          {"violations": int(viol), "sigma_violations": int(sigma_viol),
                           "worst_ratio_over_sharp_bound": worst_sharp})


def check_small_projection(d: int = 24, ks=(2, 4, 8), draws: int = 10**5, seed: int = 0) -> PropertyResult:
    f = small_projection_frequency(d, ks, draws, seed)
    vals = [f[k] for k in ks]
    mono = all(a > b for a, b in zip(vals, vals[1:]))
    return PropertyResult("small_projection_monotone", mono, vals[-1], vals[0], draws, {str(k): f[k] for k in ks})


def slab_mass(d: int, k: int, tau: float) -> float:
    """Lower bound on P(|z_i| <= tau, i <= k) for z uniform on the sphere.

    Given the first i coordinates, the next one rescaled by the remaining radius is a
    coordinate of a uniform point of a sphere of dimension d - i, and the rescaling only
    widens the window. The product of those one-dimensional masses (regularized incomplete
    beta functions) therefore bounds the slab mass from below.
    """
    mass = 1.0
    for i in range(k):
        a = (d - i - 3) / 2.0
        num = special.betainc(0.5, a + 1.0, tau * tau)
        mass *= float(num)
    return mass


def check_slab_mass(d: int = 8, k: int = 2) -> PropertyResult:
    tau = d ** -3.0
    mass = slab_mass(d, k, tau)
    bound = 1.0 / (math.exp(d ** -4.0) * d ** (3 * k))
    return PropertyResult("slab_mass_lower_bound", mass >= bound, mass, bound, 1)


# ------------------------------------------------------------- arithmetic

def check_arithmetic() -> list[PropertyResult]:
    ch = symbolic_chains()
    pz = paper_exact_pmax_zero(10**6)
    return [PropertyResult("opt_condition_chain", ch["opt_chain"], float(ch["opt_mid"]), 0.5, 1,
                           {"ratio": str(ch["opt_ratio"]), "mid": str(ch["opt_mid"])}),
            PropertyResult("feas_condition_chain", ch["feas_chain"], 0.5, 0.5, 1,
                           {"ratio": str(ch["feas_ratio"])}),
            PropertyResult("paper_exact_pmax_zero", pz["all_zero"], pz["max_c_d1_d"], 1.0, 10**6 - 3,
                           {"argmax_d": pz["argmax_d"]})]


# ------------------------------------------------------------- full suite

def default_suite(trials: int = 100, ds=DEFAULT_DS, seed: int = 0, quick: bool = False) -> list[PropertyResult]:
    n_mc = 10**4 if quick else 10**5
    out = [check_structural(ds, trials, seed)]
    big = max(ds)
    out.append(check_consistency_rate(big, 2 * trials, seed))
    out += check_certificates(big, 2 * trials, seed)
    out.append(check_cuts(ds, max(1, trials // 5), seed))
    out.append(check_replay(ds, max(1, trials // 5), seed))
    out.append(check_projection_tail(8, 2, n_mc, seed=seed))
    out.append(check_projection_tail(32, 8, n_mc, seed=seed))
    out.append(check_slab_tail(8, 1, n_mc // 10 if quick else n_mc, seed=seed))
    out.append(check_slab_tail(32, 2, n_mc // 10 if quick else n_mc, seed=seed))
    out.append(check_robust_basis(50, seed))
    out.append(check_small_projection(draws=n_mc, seed=seed))
    out.append(check_slab_mass())
    out += check_arithmetic()
    return out
