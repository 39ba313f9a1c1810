"""Adaptive optimization adversary as a replayable state machine, with its checkers."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .hard_instances import (InstanceParams, SubgradientResponse, Tag, VectorFamily, WallMatrix,
                             eval_F, subgradient, wall_infnorm)
from .sphere_geom import (DiscretePoint, OrthonormalBasis, discretize, empty_basis, fnorm, gram_schmidt,
                          project_complement, sample_slab_sphere)

BALL_TOL = 1e-9
CONSISTENCY_TOL = 1e-9


class QueryError(ValueError):
    pass


class PhaseError(RuntimeError):
    pass


def check_query(x, d: int) -> np.ndarray:
    """Validates a query; norms in (1, 1 + 1e-9] are pulled back onto the sphere."""
    x = np.array(x, dtype=np.float64).reshape(-1)
    if x.shape != (d,):
        raise QueryError(f"query has shape {x.shape}, expected ({d},)")
    if not np.all(np.isfinite(x)):
        raise QueryError("query has non-finite entries")
    nrm = fnorm(x)
    if nrm > 1.0 + BALL_TOL:
        raise QueryError(f"query norm {nrm!r} exceeds the unit ball")
    if nrm > 1.0:
        x = x / nrm
    return x


def query_hash(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x, dtype="<f8").tobytes()).hexdigest()[:16]


class RngVectorSource:
    """Draws v = phi_delta(y) with y uniform on the sphere slab orthogonal to the given queries."""

    def __init__(self, rng: np.random.Generator, d: int, delta: float, tau: float | None = None):
        self.rng = rng
        self.d = d
        self.delta = delta
        self.tau = d ** -3.0 if tau is None else tau
        self.calls = 0

    def draw(self, X: list[np.ndarray]) -> tuple[DiscretePoint, np.ndarray, OrthonormalBasis]:
        self.calls += 1
        basis = gram_schmidt(X) if X else empty_basis(self.d)
        y = sample_slab_sphere(self.rng, basis, self.tau, self.d)
        return discretize(y, self.delta), y, basis


@dataclass
class TranscriptEntry:
    t: int
    x: np.ndarray
    response: object
    events: tuple[str, ...]

    def to_json(self, full: bool = False) -> dict:
        r = self.response
        rec = {"t": self.t, "query_hash": query_hash(self.x), "events": list(self.events)}
        if isinstance(r, SubgradientResponse):
            rec.update(tag=str(r.tag), value=r.value)
        else:
            rec.update(kind=r.kind, tag=(str(r.tag) if r.tag is not None else None))
        if full:
            rec["x"] = self.x.tolist()
        return rec


class Transcript(list):
    def to_jsonl(self, full: bool = False) -> str:
        return "".join(json.dumps(e.to_json(full), sort_keys=True) + "\n" for e in self)


class OptAdversary:
    """Procedure state: period p, vector count l, exploratory count r, phase and transcript."""

    def __init__(self, params: InstanceParams, seed: int | None = 0, *, A: WallMatrix | None = None,
                 source=None, check_params: bool = True):
        if check_params and (params.p_max < 1 or not 1 <= params.k):
            raise ValueError(f"invalid parameters: p_max={params.p_max}, k={params.k}")
        self.params = params
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        d = params.d
        self.A = A if A is not None else WallMatrix.sample(self.rng, params.n, d)
        self.source = source if source is not None else RngVectorSource(self.rng, d, params.delta)
        v0, y0, _ = self.source.draw([])
        self.family = VectorFamily(v0, y0)
        self.p, self.l, self.r, self.t = 1, 0, 0, 0
        self.exploratory: list[tuple[int, np.ndarray]] = []
        self.exploratory_log: dict[int, list[int]] = {}
        self.period_start: dict[int, int] = {}
        self.phase = "constructing"
        self.P: int | None = None
        self.L: int | None = None
        self.end_reason: str | None = None
        self.transcript = Transcript()
        self.invariant_log: list[tuple[int, int, int]] = []

    # ------------------------------------------------------------------ oracle
    @property
    def final(self) -> bool:
        return self.phase == "final"

    @property
    def upto(self) -> tuple[int, int]:
        return (self.P, self.L) if self.final else (self.p, self.l)

    def F(self, x, upto=None) -> float:
        return eval_F(self.A, self.params, self.family, upto or self.upto, np.asarray(x, dtype=np.float64))

    def F_A(self, x: np.ndarray) -> float:
        return eval_F(self.A, self.params, self.family, (1, 0), x)

    def _finish(self, P: int, L: int, reason: str) -> None:
        self.phase = "final"
        self.P, self.L = P, L
        self.end_reason = reason

    def respond(self, x) -> SubgradientResponse:
        prm = self.params
        x = check_query(x, prm.d)
        self.t += 1
        t = self.t
        events: list[str] = []
        if not self.final and t > prm.d ** 2:
            self._finish(self.p, self.l, "query_limit")
            events.append("QueryLimit")
        if self.final:
            resp = subgradient(self.A, prm, self.family, (self.P, self.L), x)
            events.append("Final")
            return self._log(t, x, resp, events)

        eta = prm.eta
        if self.F_A(x) > eta:
            wv, i, s = wall_infnorm(self.A, x)
            resp = SubgradientResponse(wv - eta, s * self.A.row(i), Tag.wall(i, s))
            return self._log(t, x, resp, ["NonInformative"])

        Fx = self.F(x, (self.p, self.l))
        nx = fnorm(x)
        if self.r <= prm.k - 1 and Fx <= -eta * prm.gamma1 / 2:
            ratio = fnorm(project_complement([e[1] for e in self.exploratory], x)) / nx if nx > 0 else 0.0
            if ratio >= prm.gamma2 / 4:
                self.exploratory.append((t, x))
                self.exploratory_log.setdefault(self.p, []).append(t)
                if self.r == 0 and self.p == 1:
                    self.period_start[1] = t
                self.r += 1
                events.append("Exploratory")
        guard = Fx < -eta * (self.p * prm.gamma1 + self.l * prm.gamma2 + prm.gamma2 / 2)
        if guard and self.r < prm.k:
            v, y, basis = self.source.draw([e[1] for e in self.exploratory])
            self.family.add(self.p, self.l + 1, v, y, basis, t)
            self.l += 1
            events.append(f"NewVector({self.p},{self.l})")
        elif guard and self.p + 1 <= prm.p_max:
            self.family.l_per_period[self.p] = self.l
            v, y, basis = self.source.draw([x])
            events.append(f"PeriodEnd({self.p})")
            self.p += 1
            self.period_start[self.p] = t
            self.family.add(self.p, 1, v, y, basis, t)
            self.l, self.r = 1, 1
            self.exploratory = [(t, x)]
            self.exploratory_log[self.p] = [t]
            events.append(f"NewVector({self.p},1)")
        elif guard:
            self.family.l_per_period[self.p] = self.l
            self.period_start[prm.p_max + 1] = t
            events += [f"PeriodEnd({self.p})", "ConstructionEnd"]
            self._finish(prm.p_max, self.l, "completed")
            resp = subgradient(self.A, prm, self.family, (self.P, self.L), x)
            return self._log(t, x, resp, events)
        if not events:
            events.append("Informative")
        resp = subgradient(self.A, prm, self.family, (self.p, self.l), x)
        return self._log(t, x, resp, events)

    def _log(self, t, x, resp, events) -> SubgradientResponse:
        self.transcript.append(TranscriptEntry(t, x, resp, tuple(events)))
        self.invariant_log.append((self.p, self.l, self.r))
        return resp

    def oracle_answer(self, x):
        """Plain (value, gradient) pair, the only thing an algorithm may see."""
        r = self.respond(x)
        return r.value, r.grad

    @property
    def periods_completed(self) -> int:
        if self.final and self.end_reason == "completed":
            return self.params.p_max
        return self.p - 1


def new_opt_adversary(params: InstanceParams, seed: int) -> OptAdversary:
    return OptAdversary(params, seed)


def respond_opt(state: OptAdversary, x) -> SubgradientResponse:
    return state.respond(x)


# ---------------------------------------------------------------- checkers

@dataclass
class ConsistencyReport:
    violations: list = field(default_factory=list)
    checked: int = 0

    @property
    def rate(self) -> float:
        return len(self.violations) / self.checked if self.checked else 0.0

    @property
    def ok(self) -> bool:
        return not self.violations


def check_consistency(transcript, state: OptAdversary) -> ConsistencyReport:
    """Re-evaluates every recorded response against the final function."""
    if not state.final:
        raise PhaseError("consistency is defined once the construction has ended")
    rep = ConsistencyReport()
    for e in transcript:
        ref = subgradient(state.A, state.params, state.family, (state.P, state.L), e.x)
        rep.checked += 1
        if abs(ref.value - e.response.value) > CONSISTENCY_TOL or ref.tag != e.response.tag:
            rep.violations.append((e.t, str(e.response.tag), str(ref.tag), e.response.value, ref.value))
    return rep


def corrupt_transcript(transcript, index: int, scale: float = 2.0) -> Transcript:
    """Copy of the transcript with one response value and tag altered (fault injection)."""
    out = Transcript(copy.copy(e) for e in transcript)
    e = out[index]
    r = e.response
    bogus = Tag.nem(99, 99) if r.tag.kind != "nem" else Tag.v0()
    out[index] = TranscriptEntry(e.t, e.x, SubgradientResponse(r.value * scale + 1.0, r.grad, bogus), e.events)
    return out


def null_projector_basis(A: WallMatrix) -> OrthonormalBasis | None:
    if A.n == 0:
        return None
    return gram_schmidt([A.row(i) for i in range(A.n)])


def project_null(A: WallMatrix, v: np.ndarray, basis: OrthonormalBasis | None = None) -> np.ndarray:
    basis = basis if basis is not None else null_projector_basis(A)
    return v.copy() if basis is None else project_complement(basis, v)


@dataclass
class Certificate:
    xbar: np.ndarray
    value: float
    bound: float
    norm: float
    wall: float
    C_d: float

    @property
    def norm_ok(self) -> bool:
        return self.norm <= 1.0

    @property
    def wall_ok(self) -> bool:
        return self.wall <= 1e-9

    @property
    def bound_ok(self) -> bool:
        return self.value <= self.bound

    @property
    def ok(self) -> bool:
        return self.norm_ok and self.wall_ok and self.bound_ok


def certificate_vector(A: WallMatrix, vectors: list[np.ndarray], C_d: float) -> np.ndarray:
    basis = null_projector_basis(A)
    acc = np.zeros(A.d)
    for v in vectors:
        acc = acc + project_null(A, v, basis)
    return -acc / C_d


def certificate_xbar(state: OptAdversary) -> Certificate:
    if not state.final:
        raise PhaseError("certificate needs the final phase")
    prm = state.params
    vecs = state.family.all_vectors()
    l_max = len(vecs) - 1
    logd = math.log(prm.d)
    C_d = math.sqrt(prm.c_cert * (l_max + 1) * logd)
    xbar = certificate_vector(state.A, vecs, C_d)
    value = state.F(xbar)
    bound = -prm.eta / (prm.c_cert * math.sqrt((prm.k * prm.p_max + 1) * logd))
    return Certificate(xbar, value, bound, fnorm(xbar), wall_infnorm(state.A, xbar)[0], C_d)


def proxy_min(state: OptAdversary) -> float:
    vals = [certificate_xbar(state).value]
    vals += [state.F(e.x) for e in state.transcript]
    return min(vals)


def is_success_opt(state: OptAdversary, x_star, eps: float) -> bool:
    """Conservative success: the proxy minimum upper-bounds the true minimum."""
    if not state.final:
        raise PhaseError("success is judged in the final phase")
    x = check_query(x_star, state.params.d)
    return state.F(x) <= proxy_min(state) + eps
