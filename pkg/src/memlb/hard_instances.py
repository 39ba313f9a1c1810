"""Hard convex function family: wall matrix, adaptive vectors, values and subgradients."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .sphere_geom import DiscretePoint, OrthonormalBasis, cell_from_ints, fdot

# Relaxed constant sets used unless paper-exact mode is requested. The
# multipliers replace, in order, the 90^2 in c_{d,1}, the 12 in gamma_1,
# the 81 in c_{d,2} and the 40 in the certificate scale.
PAPER_CONSTANTS = {"c_wall": 90.0**2, "c_gam": 12.0, "c_cube": 81.0, "c_cert": 40.0}
RELAXED_OPT = {"c_wall": 0.5, "c_gam": 1.0, "c_cube": 0.4, "c_cert": 40.0}
RELAXED_FEAS = {"c_wall": 1.0, "c_gam": 12.0, "c_cube": 81.0, "c_cert": 0.5}


class ParameterError(ValueError):
    pass


def _resolve(base: dict, overrides: dict | None) -> dict:
    out = dict(base)
    for key, val in (overrides or {}).items():
        if key not in out:
            raise ParameterError(f"unknown constant override {key!r}; known: {sorted(out)}")
        out[key] = float(val)
    return out


def c_d1(d: int, c_wall: float) -> float:
    return 1.0 / (c_wall * math.log(d) ** 2)


def c_d2(d: int, c_cube: float) -> float:
    return 1.0 / (c_cube * math.log(d) ** (2.0 / 3.0))


def opt_p_max(d: int, k: int, consts: dict) -> int:
    """Largest integer p with p <= min{(c_{d,1} d - 1)/k, c_{d,2}(d/k)^(1/3) - 1}, floored at 0."""
    a = (c_d1(d, consts["c_wall"]) * d - 1.0) / k
    b = c_d2(d, consts["c_cube"]) * (d / k) ** (1.0 / 3.0) - 1.0
    return max(0, math.floor(min(a, b)))


def feas_p_max(d: int, k: int, consts: dict) -> int:
    if k < 2:
        return 0
    return max(0, math.floor((c_d1(d, consts["c_wall"]) * d - 1.0) / (k - 1)))


@dataclass(frozen=True)
class InstanceParams:
    d: int
    k: int
    n: int
    eta: float
    gamma1: float
    gamma2: float
    delta: float
    p_max: int
    consts: dict = field(compare=False)
    paper_exact: bool = False

    @property
    def c_cert(self) -> float:
        return self.consts["c_cert"]

    def to_dict(self) -> dict:
        return {
            "d": self.d, "k": self.k, "n": self.n, "eta": self.eta, "gamma1": self.gamma1,
            "gamma2": self.gamma2, "delta": self.delta, "p_max": self.p_max,
            "consts": self.consts, "paper_exact": self.paper_exact,
        }


def make_opt_params(d: int, k: int, *, paper_exact: bool = False, overrides: dict | None = None,
                    n: int | None = None, validate: bool = True) -> InstanceParams:
    if d < 2:
        raise ParameterError("d must be >= 2")
    consts = _resolve(PAPER_CONSTANTS if paper_exact else RELAXED_OPT, None if paper_exact else overrides)
    eta = 2.0 / d**3
    gamma1 = consts["c_gam"] * math.sqrt(math.log(d) / d)
    gamma2 = gamma1 / (4 * d)
    p_max = opt_p_max(d, k, consts)
    params = InstanceParams(d, k, math.ceil(d / 4) if n is None else n, eta, gamma1, gamma2,
                            1.0 / d**3, p_max, consts, paper_exact)
    if validate:
        if not 1 <= k <= d / 3 - 1:
            raise ParameterError(f"need 1 <= k <= d/3 - 1, got k={k}, d={d}")
        if p_max < 1:
            raise ParameterError(
                f"p_max = {p_max} at d={d}, k={k} ({'paper-exact' if paper_exact else 'relaxed'} constants): "
                f"c_d1*d = {c_d1(d, consts['c_wall']) * d:.4g}; the period budget is empty. "
                "Use relaxed constants or larger d.")
        if not paper_exact and gamma1 >= 1:
            raise ParameterError(f"gamma1 = {gamma1:.4g} must be < 1")
    return params


@dataclass(frozen=True)
class FeasParams:
    d: int
    k: int
    n: int
    eta0: float
    eta1: float
    delta: float
    p_max: int
    consts: dict = field(compare=False)
    paper_exact: bool = False
    max_construction_queries: int = 0

    @property
    def l_max(self) -> int:
        return self.p_max * (self.k - 1)

    @property
    def eps_ball(self) -> float:
        return min(self.eta0 / math.sqrt(self.d), self.eta1) / 2

    def to_dict(self) -> dict:
        return {
            "d": self.d, "k": self.k, "n": self.n, "eta0": self.eta0, "eta1": self.eta1,
            "delta": self.delta, "p_max": self.p_max, "consts": self.consts,
            "paper_exact": self.paper_exact, "max_construction_queries": self.max_construction_queries,
        }


def make_feas_params(d: int, k: int, *, paper_exact: bool = False, overrides: dict | None = None,
                     n: int | None = None, max_construction_queries: int | None = None,
                     validate: bool = True) -> FeasParams:
    if d < 2:
        raise ParameterError("d must be >= 2")
    consts = _resolve(PAPER_CONSTANTS if paper_exact else RELAXED_FEAS, None if paper_exact else overrides)
    nn = math.ceil(d / 4) if n is None else n
    p_max = feas_p_max(d, k, consts)
    mcq = max_construction_queries if max_construction_queries is not None else 10 * d * max(p_max, 1) * k
    params = FeasParams(d, k, nn, 1.0 / (24 * d**2), 1.0 / (2 * math.sqrt(d)), 1.0 / d**3, p_max,
                        consts, paper_exact, mcq)
    if validate:
        upper = d / 3 - nn if paper_exact else d / 3 - 1
        if not 2 <= k <= upper:
            raise ParameterError(f"need 2 <= k <= {upper:.4g}, got k={k}, d={d}")
        if p_max < 1:
            raise ParameterError(
                f"p_max = {p_max} at d={d}, k={k}: c_d1*d = {c_d1(d, consts['c_wall']) * d:.4g} < k; "
                "the period budget is empty.")
    return params


class WallMatrix:
    """Bit-packed sign matrix; bit 1 stands for entry +1."""

    def __init__(self, bits: np.ndarray, n: int, d: int):
        self.n = int(n)
        self.d = int(d)
        self.bits = np.asarray(bits, dtype=np.uint8).reshape(self.n, (self.d + 7) // 8 if self.n else 0)
        self.bits.setflags(write=False)
        unpacked = np.unpackbits(self.bits, axis=1, count=self.d) if self.n else np.zeros((0, self.d), np.uint8)
        self._signs = np.where(unpacked == 1, 1.0, -1.0)
        self._signs.setflags(write=False)

    @classmethod
    def sample(cls, rng: np.random.Generator, n: int, d: int) -> "WallMatrix":
        raw = rng.integers(0, 2, size=(n, d), dtype=np.uint8)
        return cls(np.packbits(raw, axis=1), n, d)

    @classmethod
    def from_dense(cls, A: np.ndarray) -> "WallMatrix":
        A = np.asarray(A)
        n, d = A.shape
        if n and not np.all(np.abs(A) == 1):
            raise ValueError("entries must be +-1")
        raw = (A > 0).astype(np.uint8)
        return cls(np.packbits(raw, axis=1) if n else np.zeros((0, 0), np.uint8), n, d)

    def dense(self) -> np.ndarray:
        return self._signs.copy()

    def row(self, i: int) -> np.ndarray:
        return self._signs[i].copy()

    def products(self, x: np.ndarray) -> np.ndarray:
        """A x with each row sum correctly rounded (the +-1 products are exact)."""
        return np.array([math.fsum((s * x).tolist()) for s in self._signs])

    def __eq__(self, other) -> bool:
        return (isinstance(other, WallMatrix) and self.n == other.n and self.d == other.d
                and np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.n, self.d, self.bits.tobytes()))


def wall_infnorm(A: WallMatrix, x: np.ndarray) -> tuple[float, int, int]:
    """(||Ax||_inf, smallest maximizing row (0-based), sign of that product with sign(0)=+1)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.d,):
        raise ValueError(f"dimension mismatch: {x.shape} vs d={A.d}")
    if A.n == 0:
        return 0.0, -1, 1
    prods = A.products(x)
    mags = np.abs(prods)
    i = int(np.argmax(mags))
    return float(mags[i]), i, (1 if prods[i] >= 0 else -1)


@dataclass(frozen=True)
class Tag:
    kind: str  # "wall", "v0", "nem"
    a: int = 0
    b: int = 0

    @staticmethod
    def wall(i: int, sign: int) -> "Tag":
        return Tag("wall", i, sign)

    @staticmethod
    def v0() -> "Tag":
        return Tag("v0")

    @staticmethod
    def nem(p: int, l: int) -> "Tag":
        return Tag("nem", p, l)

    def __str__(self) -> str:
        if self.kind == "wall":
            return f"WallRow({self.a},{'+' if self.b > 0 else '-'}1)"
        if self.kind == "v0":
            return "V0"
        return f"Nemirovski({self.a},{self.b})"

    @staticmethod
    def parse(s: str) -> "Tag":
        if s == "V0":
            return Tag.v0()
        name, rest = s.rstrip(")").split("(")
        u, v = rest.split(",")
        if name == "WallRow":
            return Tag.wall(int(u), 1 if v.startswith("+") else -1)
        return Tag.nem(int(u), int(v))


@dataclass(frozen=True)
class SubgradientResponse:
    value: float
    grad: np.ndarray = field(compare=False)
    tag: Tag

    def same_as(self, other: "SubgradientResponse") -> bool:
        return (self.value == other.value and self.tag == other.tag
                and np.array_equal(self.grad, other.grad))


class VectorFamily:
    """v0 plus the adaptively built v_{p,l}, kept in lexicographic (construction) order."""

    def __init__(self, v0: DiscretePoint, y0: np.ndarray | None = None):
        self.v0 = v0
        self.y0 = y0
        self.vecs: dict[tuple[int, int], DiscretePoint] = {}
        self.ys: dict[tuple[int, int], np.ndarray] = {}
        self.bases: dict[tuple[int, int], OrthonormalBasis] = {}
        self.birth_time: dict[tuple[int, int], int] = {}
        self.l_per_period: dict[int, int] = {}

    def keys(self) -> list[tuple[int, int]]:
        return list(self.vecs)

    def add(self, p: int, l: int, v: DiscretePoint, y: np.ndarray | None = None,
            basis: OrthonormalBasis | None = None, t: int = 0) -> None:
        if self.vecs:
            last = next(reversed(self.vecs))
            if (p, l) <= last:
                raise ValueError(f"vector ({p},{l}) breaks the lexicographic order after {last}")
        self.vecs[(p, l)] = v
        if y is not None:
            self.ys[(p, l)] = y
        if basis is not None:
            self.bases[(p, l)] = basis
        self.birth_time[(p, l)] = t
        self.l_per_period[p] = max(self.l_per_period.get(p, 0), l)

    def prefix(self, upto: tuple[int, int]) -> list[tuple[int, int]]:
        if upto != (1, 0) and upto not in self.vecs:
            raise KeyError(f"{upto} is beyond the constructed prefix")
        return [key for key in self.vecs if key <= upto]

    def last_key(self) -> tuple[int, int]:
        return next(reversed(self.vecs)) if self.vecs else (1, 0)

    def all_vectors(self) -> list[np.ndarray]:
        return [self.v0.rep] + [v.rep for v in self.vecs.values()]

    def __len__(self) -> int:
        return len(self.vecs)


def nemirovski_term(eta: float, dot: float, p: int, l: int, gamma1: float, gamma2: float) -> float:
    return eta * (dot - p * gamma1 - l * gamma2)


def _terms(A: WallMatrix, params: InstanceParams, family: VectorFamily, upto, x: np.ndarray):
    wv, i, s = wall_infnorm(A, x)
    terms = [(wv - params.eta, Tag.wall(i, s)), (params.eta * fdot(family.v0.rep, x), Tag.v0())]
    for (p, l) in family.prefix(upto):
        dot = fdot(family.vecs[(p, l)].rep, x)
        terms.append((nemirovski_term(params.eta, dot, p, l, params.gamma1, params.gamma2), Tag.nem(p, l)))
    return terms


def eval_F(A: WallMatrix, params: InstanceParams, family: VectorFamily, upto, x: np.ndarray) -> float:
    return max(v for v, _ in _terms(A, params, family, upto, np.asarray(x, dtype=np.float64)))


def grad_for_tag(A: WallMatrix, params: InstanceParams, family: VectorFamily, tag: Tag) -> np.ndarray:
    if tag.kind == "wall":
        return tag.b * A.row(tag.a) if A.n else np.zeros(A.d)
    if tag.kind == "v0":
        return params.eta * family.v0.rep
    return params.eta * family.vecs[(tag.a, tag.b)].rep


def subgradient(A: WallMatrix, params: InstanceParams, family: VectorFamily, upto, x: np.ndarray) -> SubgradientResponse:
    """Priority: wall term, then v0, then the lexicographically smallest maximizing v_{p,l}."""
    terms = _terms(A, params, family, upto, np.asarray(x, dtype=np.float64))
    best = max(v for v, _ in terms)
    for v, tag in terms:
        if v == best:
            return SubgradientResponse(best, grad_for_tag(A, params, family, tag), tag)
    raise AssertionError("unreachable")


def lipschitz_bound(params) -> float:
    return math.sqrt(params.d)


# ---------------------------------------------------------------- serialization

_MAGIC = b"MEMLBIN1"


def _pack_blob(b: bytes) -> bytes:
    return struct.pack("<Q", len(b)) + b


def _unpack_blob(buf: memoryview, off: int) -> tuple[bytes, int]:
    (ln,) = struct.unpack_from("<Q", buf, off)
    off += 8
    return bytes(buf[off:off + ln]), off + ln


def _pack_point(key: tuple[int, int], pt: DiscretePoint, y: np.ndarray | None, t: int) -> bytes:
    yy = np.full(pt.d, np.nan) if y is None else np.asarray(y, dtype="<f8")
    return (struct.pack("<iiq", key[0], key[1], t) + _pack_blob(pt.cell_id)
            + _pack_blob(pt.rep.astype("<f8").tobytes()) + _pack_blob(yy.astype("<f8").tobytes()))


def instance_to_bytes(A: WallMatrix, params, family: VectorFamily, seed: int) -> bytes:
    """Binary container: header, packed A bits and the family as (cell_id, coords) records."""
    kind = b"O" if isinstance(params, InstanceParams) else b"F"
    out = [_MAGIC, kind, struct.pack("<IIIq", A.d, A.n, params.k, seed)]
    out.append(_pack_blob(json.dumps(params.to_dict(), sort_keys=True).encode()))
    out.append(_pack_blob(A.bits.tobytes()))
    out.append(_pack_point((0, 0), family.v0, family.y0, 0))
    out.append(struct.pack("<I", len(family.vecs)))
    for key, pt in family.vecs.items():
        out.append(_pack_point(key, pt, family.ys.get(key), family.birth_time.get(key, 0)))
    return b"".join(out)


def _unpack_point(buf: memoryview, off: int):
    p, l, t = struct.unpack_from("<iiq", buf, off)
    off += 16
    cell, off = _unpack_blob(buf, off)
    rep, off = _unpack_blob(buf, off)
    yb, off = _unpack_blob(buf, off)
    pt = DiscretePoint(cell, np.frombuffer(rep, dtype="<f8").astype(np.float64))
    y = np.frombuffer(yb, dtype="<f8").astype(np.float64)
    return (p, l), pt, (None if np.all(np.isnan(y)) else y), t, off


def instance_from_bytes(data: bytes):
    """Inverse of :func:`instance_to_bytes`; returns (A, params, family, seed)."""
    buf = memoryview(data)
    if bytes(buf[:8]) != _MAGIC:
        raise ValueError("not a memlb instance container")
    kind = bytes(buf[8:9])
    d, n, k, seed = struct.unpack_from("<IIIq", buf, 9)
    off = 9 + struct.calcsize("<IIIq")
    pj, off = _unpack_blob(buf, off)
    pd = json.loads(pj)
    bits, off = _unpack_blob(buf, off)
    A = WallMatrix(np.frombuffer(bits, dtype=np.uint8).copy(), n, d)
    if kind == b"O":
        params = InstanceParams(pd["d"], pd["k"], pd["n"], pd["eta"], pd["gamma1"], pd["gamma2"],
                                pd["delta"], pd["p_max"], pd["consts"], pd["paper_exact"])
    else:
        params = FeasParams(pd["d"], pd["k"], pd["n"], pd["eta0"], pd["eta1"], pd["delta"], pd["p_max"],
                            pd["consts"], pd["paper_exact"], pd["max_construction_queries"])
    _, v0, y0, _, off = _unpack_point(buf, off)
    family = VectorFamily(v0, y0)
    (cnt,) = struct.unpack_from("<I", buf, off)
    off += 4
    for _ in range(cnt):
        key, pt, y, t, off = _unpack_point(buf, off)
        family.add(key[0], key[1], pt, y, None, t)
    if off != len(buf):
        raise ValueError("trailing bytes in instance container")
    return A, params, family, seed


def point_from_ints(z) -> DiscretePoint:
    return cell_from_ints(np.asarray(z, dtype=np.int64))
