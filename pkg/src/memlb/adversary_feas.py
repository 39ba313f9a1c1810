"""Feasibility adversary: separation oracle built adaptively, the success set and its checkers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .adversary_opt import (PhaseError, RngVectorSource, Transcript, TranscriptEntry, certificate_vector,
                            check_query)
from .hard_instances import FeasParams, Tag, VectorFamily, WallMatrix, wall_infnorm
from .sphere_geom import fdot, fnorm

_TAG_RANK = {"wall": 0, "v0": 1, "nem": 2}


@dataclass(frozen=True)
class SeparationResponse:
    kind: str  # "success" or "cut"
    grad: np.ndarray | None = field(default=None, compare=False)
    tag: Tag | None = None

    @staticmethod
    def success() -> "SeparationResponse":
        return SeparationResponse("success")

    def same_as(self, other: "SeparationResponse") -> bool:
        if self.kind != other.kind or self.tag != other.tag:
            return False
        return self.grad is None and other.grad is None or np.array_equal(self.grad, other.grad)


class FeasAdversary:
    def __init__(self, params: FeasParams, seed: int | None = 0, *, A: WallMatrix | None = None,
                 source=None, check_params: bool = True):
        if check_params and (params.p_max < 1 or params.k < 2):
            raise ValueError(f"invalid parameters: p_max={params.p_max}, k={params.k}")
        self.params = params
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        d = params.d
        self.A = A if A is not None else WallMatrix.sample(self.rng, params.n, d)
        self.source = source if source is not None else RngVectorSource(self.rng, d, params.delta)
        v0, y0, _ = self.source.draw([])
        self.family = VectorFamily(v0, y0)
        self.p, self.l, self.t = 1, 0, 0
        self.exploratory: dict[int, list[int]] = {}
        self._expl_x: list[np.ndarray] = []
        self.cache: dict[bytes, SeparationResponse] = {}
        self.phase = "constructing"
        self.end_reason: str | None = None
        self.diagnostic: str | None = None
        self.transcript = Transcript()
        self.invariant_log: list[tuple[int, int]] = []

    @property
    def final(self) -> bool:
        return self.phase == "final"

    @property
    def completed(self) -> bool:
        return self.end_reason == "completed"

    def _wall_cut(self, x) -> SeparationResponse:
        _, i, s = wall_infnorm(self.A, x)
        return SeparationResponse("cut", s * self.A.row(i), Tag.wall(i, s))

    def _vec_cut(self, key) -> SeparationResponse:
        if key == (0, 0):
            return SeparationResponse("cut", self.family.v0.rep.copy(), Tag.v0())
        return SeparationResponse("cut", self.family.vecs[key].rep.copy(), Tag.nem(*key))

    def _log(self, t, x, resp, events):
        self.transcript.append(TranscriptEntry(t, x, resp, tuple(events)))
        self.invariant_log.append((self.p, self.l))
        return resp

    def respond(self, x) -> SeparationResponse:
        prm = self.params
        x = check_query(x, prm.d)
        self.t += 1
        t = self.t
        key = x.tobytes()
        if self.final:
            if key in self.cache:
                return self._log(t, x, self.cache[key], ["Final", "Duplicate"])
            resp = self.final_oracle(x)
            self.cache[key] = resp
            return self._log(t, x, resp, ["Final"])
        if t > prm.max_construction_queries:
            self.phase, self.end_reason = "final", "aborted"
            self.diagnostic = (f"construction stalled: {t - 1} queries without ending period {prm.p_max} "
                               f"(at p={self.p}, l={self.l})")
            return self.respond_final_after_abort(x, t, key)

        if wall_infnorm(self.A, x)[0] > prm.eta0:
            return self._store(t, x, key, self._wall_cut(x), ["WallCut"])
        if fdot(self.family.v0.rep, x) > -prm.eta1:
            return self._store(t, x, key, self._vec_cut((0, 0)), ["V0Cut"])
        if key in self.cache:
            return self._log(t, x, self.cache[key], ["Duplicate"])
        if self.l >= 1:
            dots = [fdot(self.family.vecs[(self.p, j)].rep, x) for j in range(1, self.l + 1)]
            best = max(dots)
            if best > -prm.eta1:
                j = dots.index(best) + 1
                return self._store(t, x, key, self._vec_cut((self.p, j)), ["PeriodCut"])
        if self.l < prm.k - 1:
            self.exploratory.setdefault(self.p, []).append(t)
            self._expl_x.append(x)
            v, y, basis = self.source.draw(list(self._expl_x))
            self.family.add(self.p, self.l + 1, v, y, basis, t)
            self.l += 1
            return self._store(t, x, key, self._vec_cut((self.p, self.l)), [f"NewVector({self.p},{self.l})"])
        if self.p + 1 <= prm.p_max:
            self.exploratory[self.p].append(t)
            self.family.l_per_period[self.p] = self.l
            v, y, basis = self.source.draw([x])
            old = self.p
            self.p, self.l = self.p + 1, 1
            self.exploratory[self.p] = [t]
            self._expl_x = [x]
            self.family.add(self.p, 1, v, y, basis, t)
            return self._store(t, x, key, self._vec_cut((self.p, 1)), [f"PeriodEnd({old})", f"NewVector({self.p},1)"])
        self.exploratory[self.p].append(t)
        self.family.l_per_period[self.p] = self.l
        self.phase, self.end_reason = "final", "completed"
        resp = self.final_oracle(x)
        self.cache[key] = resp
        return self._log(t, x, resp, [f"PeriodEnd({self.p})", "ConstructionEnd"])

    def respond_final_after_abort(self, x, t, key):
        resp = self.cache.get(key) or self.final_oracle(x)
        self.cache.setdefault(key, resp)
        return self._log(t, x, resp, ["Aborted"])

    def _store(self, t, x, key, resp, events):
        self.cache.setdefault(key, resp)
        return self._log(t, x, resp, events)

    # ------------------------------------------------------------- final phase
    def violations(self, x: np.ndarray) -> list[tuple[float, int, tuple, Tag]]:
        """Relative violations of each constraint of the success set, with sort keys."""
        prm = self.params
        out = []
        prods = self.A.products(x) if self.A.n else np.zeros(0)
        for i, pv in enumerate(prods):
            if abs(pv) > prm.eta0:
                out.append((abs(pv) / prm.eta0 - 1.0, 0, (i,), Tag.wall(i, 1 if pv >= 0 else -1)))
        vv = fdot(self.family.v0.rep, x)
        if vv > -prm.eta1:
            out.append((vv / prm.eta1 + 1.0, 1, (), Tag.v0()))
        for key, v in self.family.vecs.items():
            vv = fdot(v.rep, x)
            if vv > -prm.eta1:
                out.append((vv / prm.eta1 + 1.0, 2, key, Tag.nem(*key)))
        return out

    def final_oracle(self, x: np.ndarray) -> SeparationResponse:
        """Success on Q, else the most violated constraint (ties: wall < v0 < family order)."""
        viol = self.violations(x)
        if not viol:
            return SeparationResponse.success()
        best = max(v[0] for v in viol)
        _, _, idx, tag = min((v for v in viol if v[0] == best), key=lambda v: (v[1], v[2]))
        if tag.kind == "wall":
            return SeparationResponse("cut", tag.b * self.A.row(tag.a), tag)
        return self._vec_cut((0, 0) if tag.kind == "v0" else (tag.a, tag.b))

    def oracle_answer(self, x):
        r = self.respond(x)
        return None, (None if r.kind == "success" else r.grad)

    @property
    def periods_completed(self) -> int:
        return self.params.p_max if self.completed else self.p - 1


def new_feas_adversary(params: FeasParams, seed: int) -> FeasAdversary:
    return FeasAdversary(params, seed)


def respond_feas(state: FeasAdversary, x) -> SeparationResponse:
    return state.respond(x)


def membership(state: FeasAdversary, x) -> bool:
    if not state.final:
        raise PhaseError("the success set is fixed once the construction has ended")
    x = np.asarray(x, dtype=np.float64)
    return fnorm(x) <= 1.0 and not state.violations(x)


@dataclass
class FeasCertificate:
    xbar: np.ndarray
    wall: float
    max_v: float
    norm: float
    C_d: float
    threshold: float

    @property
    def margin_ok(self) -> bool:
        return self.max_v <= self.threshold

    @property
    def wall_ok(self) -> bool:
        return self.wall <= 1e-9

    @property
    def norm_ok(self) -> bool:
        return self.norm <= 1.0

    @property
    def ok(self) -> bool:
        return self.margin_ok and self.wall_ok and self.norm_ok


def certificate_xbar_feas(state: FeasAdversary) -> FeasCertificate:
    if not state.final:
        raise PhaseError("certificate needs the final phase")
    prm = state.params
    vecs = state.family.all_vectors()
    l_max = max(len(vecs) - 1, 1)
    C_d =math.sqrt(prm.consts["c_cert"] * l_max * math.log(prm.d))
    xbar = certificate_vector(state.A, vecs, C_d)
    max_v = max(fdot(v, xbar) for v in vecs)
    return FeasCertificate(xbar, wall_infnorm(state.A, xbar)[0], max_v, fnorm(xbar), C_d, -4 * prm.eta1)


def sample_inner_ball(state: FeasAdversary, cert: FeasCertificate, rng: np.random.Generator,
                      n_points: int) -> np.ndarray:
    """Uniform points of the ball B(xbar - eps xbar/|xbar|, eps)."""
    eps = state.params.eps_ball
    d = state.params.d
    center = cert.xbar - eps * cert.xbar / cert.norm
    g = rng.standard_normal((n_points, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    rad = eps * rng.random(n_points) ** (1.0 / d)
    return center + g * rad[:, None]


@dataclass
class CutReport:
    cuts_checked: int
    points_tested: int
    points_rejected: int
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_cuts(transcript, state: FeasAdversary, rng: np.random.Generator | None = None,
                  n_points: int = 1000) -> CutReport:
    """Checks g^T(x - q) > 0 for every emitted cut and sampled points q of the success set."""
    if not state.final:
        raise PhaseError("cut validity is checked once the construction has ended")
    rng = rng if rng is not None else np.random.default_rng(0)
    cert = certificate_xbar_feas(state)
    pts = sample_inner_ball(state, cert, rng, n_points)
    keep = np.array([membership(state, q) for q in pts], dtype=bool)
    Q = pts[keep]
    cuts = [(e.t, e.x, e.response) for e in transcript if e.response.kind == "cut"]
    viol = []
    for t, x, r in cuts:
        if Q.shape[0] == 0:
            break
        gap = fdot(r.grad, x) - Q @ r.grad
        bad = np.flatnonzero(gap <= 0)
        if bad.size:
            viol.append((t, str(r.tag), int(bad.size), float(gap.min())))
    return CutReport(len(cuts), int(Q.shape[0]), int((~keep).sum()), viol)
