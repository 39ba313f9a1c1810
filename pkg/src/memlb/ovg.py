"""Orthogonal vector game with hints: oracle, win check, the two reduction strategies and
the parameter arithmetic of the memory/query trade-off."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .adversary_feas import FeasAdversary, SeparationResponse
from .adversary_opt import OptAdversary
from .harness import AlgorithmSpec, Memory, run
from .hard_instances import (PAPER_CONSTANTS, FeasParams, InstanceParams, Tag, WallMatrix, c_d1,
                             feas_p_max, opt_p_max, subgradient, wall_infnorm)
from .sphere_geom import (DiscretePoint, OrthonormalBasis, discretize, empty_basis, fdot, fnorm, gram_schmidt,
                          project_complement, sample_slab_sphere)

DEFAULT_C_H = 0.1
UNIT_TOL = 1e-9


class HintBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class GameParams:
    d: int
    k: int
    m: int
    M: int
    alpha: float
    beta: float
    c_H: float = DEFAULT_C_H

    def __post_init__(self):
        if not (0 < self.alpha <= 1 and 0 < self.beta <= 1):
            raise ValueError(f"alpha, beta must lie in (0, 1], got {self.alpha}, {self.beta}")

    @property
    def n(self) -> int:
        return self.d // 4

    def to_dict(self) -> dict:
        return {"d": self.d, "k": self.k, "m": self.m, "M": self.M, "alpha": self.alpha,
                "beta": self.beta, "c_H": self.c_H, "n": self.n}


class Message(Memory):
    """The M-bit message handed from the first to the second part of the game."""

    def __init__(self, nbits: int, data: bytes | None = None, *, M: int | None = None):
        if M is not None and nbits != M:
            raise ValueError(f"message must have exactly {M} bits, got {nbits}")
        super().__init__(nbits, data)

    @classmethod
    def of(cls, mem: Memory, M: int) -> "Message":
        return cls(mem.nbits, mem.data, M=M)


@dataclass
class HintRecord:
    submitted: list
    basis: OrthonormalBasis
    y: np.ndarray
    v: DiscretePoint


class HintOracle:
    """Samples A with floor(d/4) rows and answers at most d hint rounds.

    ``draw`` has the vector-source signature used by the adversaries, so a strategy can
    simulate a procedure whose vectors all come from hint queries.
    """

    def __init__(self, d: int, k: int, seed: int | None = 0, *, delta: float | None = None,
                 tau: float | None = None, A: WallMatrix | None = None):
        self.d, self.k = d, k
        self.rng = np.random.default_rng(seed)
        self.delta = d ** -3.0 if delta is None else delta
        self.tau = d ** -3.0 if tau is None else tau
        self.A = A if A is not None else WallMatrix.sample(self.rng, d // 4, d)
        self.log: list[HintRecord] = []
        self.g = None
        self.phase = "hints"

    @property
    def rounds(self) -> int:
        return len(self.log)

    def hint_query(self, X) -> DiscretePoint:
        return self.draw(X)[0]

    def draw(self, X):
        if self.phase != "hints":
            raise HintBudgetError("hint phase is over")
        if self.rounds >= self.d:
            raise HintBudgetError(f"all {self.d} hint rounds used")
        X = [np.asarray(x, dtype=np.float64) for x in X]
        if len(X) > self.k:
            raise ValueError(f"at most k={self.k} vectors per round, got {len(X)}")
        basis = gram_schmidt(X) if X else empty_basis(self.d)
        y = sample_slab_sphere(self.rng, basis, self.tau, self.d)
        v = discretize(y, self.delta)
        self.log.append(HintRecord(X, basis, y, v))
        return v, y, basis

    def pad(self) -> None:
        """Spends the remaining hint rounds on empty queries."""
        while self.rounds < self.d:
            self.draw([])

    def submit(self, g) -> None:
        self.phase = "queries"
        self.g = g

    def query(self, z: np.ndarray):
        if self.g is None:
            raise RuntimeError("no response function submitted")
        return self.g(np.asarray(z, dtype=np.float64))


@dataclass
class GameOutcome:
    won: bool
    vectors: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    failure_reason: str | None = None
    hint_count: int = 0  # informative hint queries made in part 1
    hint_rounds: int = 0  # all rounds including padding
    message_sha: str | None = None
    selected_period: int | None = None
    period_lengths: dict = field(default_factory=dict)
    replay_checked: int = 0
    replay_mismatch: int | None = None
    indices: list = field(default_factory=list)

    @property
    def replay_equal(self) -> bool:
        return self.replay_mismatch is None and self.replay_checked > 0

    def to_json(self, params: GameParams | None = None, seed: int | None = None) -> dict:
        return {
            "params": params.to_dict() if params else None, "seed": seed, "won": self.won,
            "failure_reason": self.failure_reason, "diagnostics": self.diagnostics,
            "hint_count": self.hint_count, "hint_rounds": self.hint_rounds, "message_bits_hash": self.message_sha,
            "selected_period": self.selected_period, "replay_checked": self.replay_checked,
            "replay_equal": self.replay_equal, "indices": self.indices,
        }


def check_win(A: WallMatrix, Y, alpha: float, beta: float) -> GameOutcome:
    """Unit norm, ||A y_i||_inf <= alpha and residual against earlier y_j >= beta, for all i."""
    Y = [np.asarray(y, dtype=np.float64) for y in Y]
    diags = []
    won = bool(Y)
    for i, y in enumerate(Y):
        nrm = fnorm(y)
        wall = wall_infnorm(A, y)[0] if A.n else 0.0
        res = fnorm(project_complement(Y[:i], y)) if i else nrm
        unit_ok = abs(nrm - 1.0) <= UNIT_TOL
        ok = unit_ok and wall <= alpha and res >= beta * (1 - UNIT_TOL)
        diags.append({"i": i + 1, "norm": nrm, "wall": wall, "residual": res, "ok": bool(ok)})
        won = won and ok
    reason = None if won else ("no vectors" if not Y else "win condition violated")
    return GameOutcome(won, Y, diags, reason)


# ------------------------------------------------------------- tag arithmetic

def opt_tag_code(tag: Tag, k: int) -> int:
    if tag.kind == "wall":
        return 1
    if tag.kind == "v0":
        return 2
    return 2 + (tag.a - 1) * k + tag.b


def opt_tag_decode(s: int, k: int) -> tuple[int, int]:
    """Inverse of the code for s >= 3: (p, l) with 1 <= l <= k."""
    q, r = divmod(s - 3, k)
    return q + 1, r + 1


def feas_tag_code(tag: Tag, p: int, k: int) -> int:
    if tag.kind == "wall":
        return 1
    if tag.kind == "v0":
        return 2
    pp, ll = tag.a, tag.b
    return 2 + ll * (pp == p) + k * (pp == p + 1 and ll == 1)


def _sign(x: float) -> float:
    return 1.0 if x >= 0 else -1.0


def _unit(z: np.ndarray) -> np.ndarray:
    n = fnorm(z)
    return z / n if n > 0 else z


def _compare_replay(part1: list, start: int, part2: list) -> tuple[int, int | None]:
    """Compares part-2 queries with part-1 queries from index ``start`` (0-based)."""
    checked = 0
    for i, z in enumerate(part2):
        j = start + i
        if j >= len(part1):
            break
        checked += 1
        if not np.array_equal(part1[j], z):
            return checked, i + 1
    return checked, None


def _select_period(starts: dict[int, int], p_max: int, m: int):
    """First period whose length i_{p+1,1} - i_{p,1} is at most m."""
    lengths = {p: starts[p + 1] - starts[p] for p in range(1, p_max + 1) if p in starts and p + 1 in starts}
    for p in sorted(lengths):
        if lengths[p] <= m:
            return p, lengths
    return None, lengths


# ------------------------------------------------------------- optimization strategy

def play_strategy_opt(alg: AlgorithmSpec, params: InstanceParams, m: int, seed: int,
                      budget: int | None = None, game: GameParams | None = None) -> GameOutcome:
    """Player strategy built from an optimization algorithm.

    Part 1 runs ``alg`` against the optimization procedure whose vectors come from hint
    queries and stores the memory at the start of the first period of length <= m.
    Part 2 replays that period from the message using only the submitted response
    function. Part 3 returns the normalized exploratory queries.
    """
    k, d = params.k, params.d
    game = game or GameParams(d, k, m, alg.M, min(1.0, 2 * params.eta / params.gamma1), params.gamma2 / 4)
    oracle = HintOracle(d, k, seed, delta=params.delta)
    adv = OptAdversary(params, seed, A=oracle.A, source=oracle)
    budget = budget if budget is not None else min(d * d, m * params.p_max + m + 1)
    res = run(alg, adv.oracle_answer, budget, record_memory=True)
    out = GameOutcome(False, hint_count=oracle.rounds)
    if adv.end_reason != "completed":
        out.failure_reason = f"period p_max not ended ({adv.periods_completed}/{params.p_max} periods)"
        return out
    oracle.pad()
    p, lengths = _select_period(adv.period_start, params.p_max, m)
    out.period_lengths = lengths
    if p is None:
        out.failure_reason = f"no period of length <= m={m} (lengths {lengths})"
        return out
    start = adv.period_start[p]
    message = Message.of(res.memories[start - 1], alg.M)
    out.selected_period, out.message_sha = p, message.sha()

    A, fam, prm = adv.A, adv.family, adv.params
    upto = (adv.P, adv.L)

    def g_fun(x):
        tag = subgradient(A, prm, fam, upto, x).tag
        if tag.kind == "wall":
            return A.row(tag.a), 1
        if tag.kind == "v0":
            return fam.v0.rep.copy(), 2
        return fam.vecs[(tag.a, tag.b)].rep.copy(), opt_tag_code(tag, k)

    oracle.submit(g_fun)
    eta, g1, g2 = prm.eta, prm.gamma1, prm.gamma2

    mem = message
    zs: list[np.ndarray] = []
    idx = [1]
    for i in range(1, m + 1):
        q = alg.query_map(mem)
        z = np.array(q.x, dtype=np.float64)
        zs.append(z)
        g, s = oracle.query(z)
        gz = fdot(g, z)
        if s == 1:
            val, gt = abs(gz) - eta, _sign(gz) * g
        elif s == 2:
            val, gt = eta * gz, eta * g
        else:
            pp, ll = opt_tag_decode(s, k)
            val, gt = eta * (gz - pp * g1 - ll * g2), eta * g
        if i > 1 and len(idx) < k and val <= -eta * g1 / 2:
            basis = [zs[j - 1] for j in idx]
            nz = fnorm(z)
            if nz > 0 and fnorm(project_complement(basis, z)) / nz >= g2 / 4:
                idx.append(i)
        if q.stop:
            break
        mem = alg.update_map(mem, z, val, gt)
    zs_pad = list(zs)
    if len(idx) < k:
        zs_pad.append(np.array(alg.query_map(mem).x, dtype=np.float64))
        idx.append(len(zs_pad))
    out.replay_checked, out.replay_mismatch = _compare_replay(res.queries, start - 1, zs_pad)
    out.indices = idx
    out.hint_rounds = oracle.rounds
    if len(idx) < k:
        out.failure_reason = f"only {len(idx)} exploratory queries found"
        return out
    Y = [_unit(zs_pad[j - 1]) for j in idx]
    win = check_win(oracle.A, Y, game.alpha, game.beta)
    out.won, out.vectors, out.diagnostics = win.won, win.vectors, win.diagnostics
    out.failure_reason = win.failure_reason
    return out


# ------------------------------------------------------------- feasibility strategy

SUCCESS_TAG_OFFSET = 3  # s = 3 + k marks a success answer


def play_strategy_feas(alg: AlgorithmSpec, params: FeasParams, m: int, seed: int,
                       budget: int | None = None, game: GameParams | None = None) -> GameOutcome:
    """Player strategy built from a feasibility algorithm (same three parts).

    The response function returns, for every query seen in part 1, the answer given
    there, coded by the period it belongs to. The query that ends the last period is
    coded 2 + k (cut) or 3 + k (success) so that part 3 finds it.
    """
    k, d = params.k, params.d
    game = game or GameParams(d, k, m, alg.M, min(1.0, params.eta0 / params.eta1), params.eta1 / 2)
    oracle = HintOracle(d, k, seed, delta=params.delta)
    adv = FeasAdversary(params, seed, A=oracle.A, source=oracle)
    budget = budget if budget is not None else min(d * d, m * params.p_max + m + 1)
    res = run(alg, adv.oracle_answer, budget, record_memory=True)
    out = GameOutcome(False, hint_count=oracle.rounds)
    if adv.end_reason != "completed":
        out.failure_reason = f"period p_max not ended ({adv.periods_completed}/{params.p_max} periods)"
        return out
    oracle.pad()
    starts = {p: ts[0] for p, ts in adv.exploratory.items()}
    starts[params.p_max + 1] = adv.exploratory[params.p_max][-1]
    p, lengths = _select_period(starts, params.p_max, m)
    out.period_lengths = lengths
    if p is None:
        out.failure_reason = f"no period of length <= m={m} (lengths {lengths})"
        return out
    start = starts[p]
    end_t = adv.exploratory[params.p_max][-1]
    message = Message.of(res.memories[start - 1], alg.M)
    out.selected_period, out.message_sha = p, message.sha()

    A = adv.A
    first: dict[bytes, tuple[int, SeparationResponse]] = {}
    for e in adv.transcript:
        first.setdefault(e.x.tobytes(), (e.t, e.response))

    def g_fun(x):
        hit = first.get(x.tobytes())
        if hit is None:
            return np.zeros(d), 1
        t, r = hit
        if t == end_t and p == params.p_max:
            if r.kind == "success":
                return np.zeros(d), SUCCESS_TAG_OFFSET + k
            return r.grad.copy(), 2 + k
        if r.kind == "success":
            return np.zeros(d), SUCCESS_TAG_OFFSET + k
        if r.tag.kind == "wall":
            return A.row(r.tag.a), 1
        return r.grad.copy(), feas_tag_code(r.tag, p, k)

    oracle.submit(g_fun)

    mem = message
    zs: list[np.ndarray] = []
    ss: list[int] = []
    for _ in range(m):
        q = alg.query_map(mem)
        z = np.array(q.x, dtype=np.float64)
        zs.append(z)
        g, s = oracle.query(z)
        ss.append(s)
        if s == SUCCESS_TAG_OFFSET + k:
            gt = None
        elif s >= 2:
            gt = g
        else:
            gt = _sign(fdot(g, z)) * g
        if q.stop:
            break
        mem = alg.update_map(mem, z, None, gt)
    idx = []
    for l in range(1, k + 1):
        want = (2 + l,) if l < k else (2 + k, SUCCESS_TAG_OFFSET + k)
        hit = next((i + 1 for i, s in enumerate(ss) if s in want), None)
        idx.append(hit)
    zs_pad = list(zs)
    if idx[-1] is None:
        zs_pad.append(np.array(alg.query_map(mem).x, dtype=np.float64))
        idx[-1] = len(zs_pad)
    out.replay_checked, out.replay_mismatch = _compare_replay(res.queries, start - 1, zs_pad)
    out.indices = idx
    out.hint_rounds = oracle.rounds
    if any(i is None for i in idx):
        out.failure_reason = f"exploratory index missing: {idx}"
        return out
    Y = [_unit(zs_pad[j - 1]) for j in idx]
    win = check_win(oracle.A, Y, game.alpha, game.beta)
    out.won, out.vectors, out.diagnostics = win.won, win.vectors, win.diagnostics
    out.failure_reason = win.failure_reason
    return out


# ------------------------------------------------------------- parameter arithmetic

def theorem_parameters(d: int, M: int, c_H: float = DEFAULT_C_H, mode: str = "opt", *,
                       consts: dict | None = None) -> dict:
    """k, p_max, alpha, beta, m_lower and the parameter condition alpha (sqrt d/beta)^(5/4) <= 1/2.

    ``consts`` defaults to the paper-exact constant set.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    if mode not in ("opt", "feas"):
        raise ValueError("mode must be 'opt' or 'feas'")
    consts = dict(PAPER_CONSTANTS if consts is None else consts)
    n = d // 4
    logd = math.log(d)
    k = math.ceil(20 * (M + 3 * d * math.log(2 * d) + 1) / (c_H * n)) if n else math.inf
    if mode == "opt":
        eta = 2.0 / d**3
        g1 = consts["c_gam"] * math.sqrt(logd / d)
        g2 = g1 / (4 * d)
        alpha, beta = 2 * eta / g1, g2 / 4
        p_max = opt_p_max(d, k, consts) if math.isfinite(k) else 0
        bound = ((4.0 / 3.0) ** 1.25 / 6.0) * eta * d**3
    else:
        eta0, eta1 = 1.0 / (24 * d * d), 1.0 / (2 * math.sqrt(d))
        alpha, beta = eta0 / eta1, eta1 / 2
        p_max = feas_p_max(d, k, consts) if math.isfinite(k) else 0
        bound = 12 * d * d * eta0
    lhs = alpha * (math.sqrt(d) / beta) ** 1.25
    m_lower = c_H * d / (8 * (30 * logd + c_H))
    notes = []
    if p_max == 0:
        notes.append(f"p_max = 0: c_d1*d = {c_d1(d, consts['c_wall']) * d:.4g}, the period budget is empty")
    return {"mode": mode, "d": d, "M": M, "c_H": c_H, "n": n, "k": k, "p_max": p_max,
            "alpha": alpha, "beta": beta, "condition_lhs": lhs, "condition_bound": bound,
            "condition": bool(lhs <= 0.5), "m_lower": m_lower, "notes": notes}


def symbolic_chains() -> dict:
    """Checks the two parameter-condition chains symbolically for every d >= 4.

    Optimization: (2 eta/g1)(4 sqrt d/g2)^(5/4) = ((4/3)^(5/4)/6) eta d^3 log(d)^(-9/8) and
    ((4/3)^(5/4)/6) eta d^3 <= 1/2. Feasibility: alpha (sqrt d/beta)^(5/4) <= 12 d^2 eta0 = 1/2.
    """
    d = sp.symbols("d", positive=True)
    L = sp.log(d)
    eta = 2 / d**3
    g1 = sp.Integer(int(PAPER_CONSTANTS["c_gam"])) * sp.sqrt(L / d)
    g2 = g1 / (4 * d)
    lhs = (2 * eta / g1) * (4 * sp.sqrt(d) / g2) ** sp.Rational(5, 4)
    mid = (sp.Rational(4, 3) ** sp.Rational(5, 4) / 6) * eta * d**3
    ratio = sp.simplify(sp.powsimp(sp.expand_power_base(lhs / mid, force=True), force=True))
    ratio_ok = sp.simplify(ratio - L ** sp.Rational(-9, 8)) == 0
    mid_s = sp.nsimplify(sp.simplify(mid))
    mid_ok = bool(sp.simplify(mid_s - sp.Rational(1, 2)) < 0)
    # log(d) >= log 4 > 1 on d >= 4, so log(d)^(-9/8) <= 1
    first_ok = bool(sp.log(4) > 1)

    eta0 = 1 / (24 * d**2)
    eta1 = 1 / (2 * sp.sqrt(d))
    f_lhs = (eta0 / eta1) * (sp.sqrt(d) / (eta1 / 2)) ** sp.Rational(5, 4)
    f_bound = 12 * d**2 * eta0
    f_ratio = sp.simplify(sp.powsimp(sp.expand_power_base(f_lhs / f_bound, force=True), force=True))
    f_eq = sp.simplify(f_bound - sp.Rational(1, 2)) == 0
    # the ratio is c d^(-1/4): decreasing, so d >= 4 reduces to d = 4
    f_dec = bool(sp.simplify(sp.diff(f_ratio, d)) < 0) if sp.diff(f_ratio, d) != 0 else True
    f_ok = bool(f_ratio.subs(d, 4) <= 1)
    return {
        "opt_ratio": ratio, "opt_ratio_is_log_power": bool(ratio_ok), "opt_mid": mid_s,
        "opt_mid_le_half": mid_ok, "opt_chain": bool(ratio_ok and first_ok and mid_ok),
        "feas_ratio": f_ratio, "feas_bound_is_half": bool(f_eq), "feas_ratio_decreasing": f_dec,
        "feas_chain": bool(f_eq and f_dec and f_ok),
    }


def paper_exact_pmax_zero(d_max: int = 10**6, d_min: int = 4) -> dict:
    """p_max = 0 in paper-exact mode for every d in [d_min, d_max], for both modes and any k >= 1.

    c_d1 * d = d/(8100 log^2 d) falls on (1, e^2) and rises after, so its maximum over the
    range sits at an endpoint; the full integer grid is also scanned.
    """
    c = PAPER_CONSTANTS["c_wall"]
    dd = np.arange(d_min, d_max + 1, dtype=np.float64)
    vals = dd / (c * np.log(dd) ** 2)
    endpoints = max(c_d1(d_min, c) * d_min, c_d1(d_max, c) * d_max)
    worst = int(dd[int(np.argmax(vals))])
    # opt: (c_d1 d - 1)/k < 0 for all k; feas: (c_d1 d - 1)/(k - 1) < 0 for all k >= 2
    spot = [opt_p_max(d, 2, PAPER_CONSTANTS) == 0 and feas_p_max(d, 2, PAPER_CONSTANTS) == 0
            for d in (d_min, 128, 1024, d_max)]
    return {"max_c_d1_d": float(vals.max()), "argmax_d": worst, "endpoint_max": endpoints,
            "all_zero": bool(vals.max() < 1.0 and all(spot))}


def small_projection_frequency(d: int = 24, ks=(2, 4, 8), draws: int = 10**5, seed: int = 0,
                               threshold: float = 0.5) -> dict[int, float]:
    """Frequency of ||Z^T h||_inf <= 1/2 for h uniform on {+-1}^d and Z with k random orthonormal columns."""
    rng = np.random.default_rng(seed)
    out = {}
    chunk = 10**4
    for k in ks:
        hits = 0
        done = 0
        while done < draws:
            b = min(chunk, draws - done)
            G = rng.standard_normal((b, d, k))
            Z, _ = np.linalg.qr(G)
            h = rng.choice(np.array([-1.0, 1.0]), size=(b, d))
            proj = np.einsum("bdk,bd->bk", Z, h)
            hits += int(np.sum(np.max(np.abs(proj), axis=1) <= threshold))
            done += b
        out[k] = hits / draws
    return out
