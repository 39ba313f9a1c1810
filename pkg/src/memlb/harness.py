"""M-bit memory-constrained deterministic algorithms, baselines and the run loop."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class Memory:
    """Immutable bit string of exact length M (stored packed, padding bits zero)."""

    __slots__ = ("nbits", "data")

    def __init__(self, nbits: int, data: bytes | None = None):
        nbytes = (nbits + 7) // 8
        if data is None:
            data = bytes(nbytes)
        if len(data) != nbytes:
            raise ValueError(f"memory needs {nbytes} bytes for {nbits} bits, got {len(data)}")
        if nbits % 8 and data[-1] & (0xFF >> (nbits % 8)):
            raise ValueError("padding bits beyond M must be zero")
        self.nbits = int(nbits)
        self.data = bytes(data)

    @classmethod
    def zeros(cls, nbits: int) -> "Memory":
        return cls(nbits)

    @classmethod
    def from_bits(cls, bits: np.ndarray) -> "Memory":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(bits.size, np.packbits(bits).tobytes())

    def bits(self) -> np.ndarray:
        return np.unpackbits(np.frombuffer(self.data, dtype=np.uint8), count=self.nbits)

    def sha(self) -> str:
        return hashlib.sha256(struct.pack("<Q", self.nbits) + self.data).hexdigest()[:16]

    def __eq__(self, other) -> bool:
        return isinstance(other, Memory) and self.nbits == other.nbits and self.data == other.data

    def __hash__(self):
        return hash((self.nbits, self.data))

    def __repr__(self) -> str:
        return f"Memory(M={self.nbits}, sha={self.sha()})"


@dataclass(frozen=True)
class Query:
    x: np.ndarray
    stop: bool = False


@dataclass(frozen=True)
class AlgorithmSpec:
    """query_map(mem) -> Query; update_map(mem, x, value, grad) -> mem.

    ``value`` is None for separation oracles; ``grad`` is None when the oracle reports success.
    """

    M: int
    query_map: Callable[[Memory], Query]
    update_map: Callable[[Memory, np.ndarray, float | None, np.ndarray | None], Memory]
    name: str = "alg"
    d: int | None = None


@dataclass
class RunResult:
    queries_used: int
    final_output: np.ndarray | None
    stopped: bool
    budget_exhausted: bool
    queries: list = field(default_factory=list)
    memories: list = field(default_factory=list)
    success: dict = field(default_factory=dict)


def run(alg: AlgorithmSpec, oracle: Callable, budget: int, *, record_memory: bool = False,
        start: Memory | None = None) -> RunResult:
    """Iterates query -> response -> update. Only the M-bit string survives between steps."""
    mem = start if start is not None else Memory.zeros(alg.M)
    res = RunResult(0, None, False, False)
    while res.queries_used < budget:
        if mem.nbits != alg.M:
            raise AssertionError(f"{alg.name}: memory has {mem.nbits} bits, declared {alg.M}")
        if record_memory:
            res.memories.append(mem)
        q = alg.query_map(mem)
        x = np.array(q.x, dtype=np.float64)
        value, grad = oracle(x)
        res.queries_used += 1
        res.queries.append(x)
        res.final_output = x
        if q.stop:
            res.stopped = True
            return res
        mem = alg.update_map(mem, x, value, grad)
    res.budget_exhausted = True
    return res


# ------------------------------------------------------------- fixed point codec

def fx_encode(x: np.ndarray, b: int, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    levels = (1 << b) - 1
    u = (np.clip(np.asarray(x, dtype=np.float64), lo, hi) - lo) / (hi - lo)
    return np.rint(u * levels).astype(np.uint64)


def fx_decode(q: np.ndarray, b: int, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    levels = (1 << b) - 1
    return lo + (hi - lo) * (np.asarray(q, dtype=np.float64) / levels)


def _ints_to_bits(vals: np.ndarray, b: int) -> np.ndarray:
    vals = np.asarray(vals, dtype=np.uint64)
    shifts = np.arange(b - 1, -1, -1, dtype=np.uint64)
    return ((vals[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8).reshape(-1)


def _bits_to_ints(bits: np.ndarray, b: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint64).reshape(-1, b)
    shifts = np.arange(b - 1, -1, -1, dtype=np.uint64)
    return (bits << shifts[None, :]).sum(axis=1, dtype=np.uint64)


class BitLayout:
    """Named fixed-width unsigned fields laid out in one bit string."""

    def __init__(self, fields: list[tuple[str, int, int]]):
        self.fields = {}
        off = 0
        for name, count, width in fields:
            self.fields[name] = (off, count, width)
            off += count * width
        self.M = off

    def unpack(self, mem: Memory) -> dict[str, np.ndarray]:
        bits = mem.bits()
        out = {}
        for name, (off, count, width) in self.fields.items():
            out[name] = _bits_to_ints(bits[off:off + count * width], width) if count else np.zeros(0, np.uint64)
        return out

    def pack(self, vals: dict[str, np.ndarray]) -> Memory:
        parts = []
        for name, (_, count, width) in self.fields.items():
            v = np.asarray(vals[name], dtype=np.uint64).reshape(-1)
            if v.size != count:
                raise ValueError(f"field {name} expects {count} values")
            if width < 64 and np.any(v >> np.uint64(width)):
                raise ValueError(f"field {name} overflows {width} bits")
            parts.append(_ints_to_bits(v, width))
        return Memory.from_bits(np.concatenate(parts) if parts else np.zeros(0, np.uint8))


def float_bits(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype="<f8").view("<u8").astype(np.uint64)


def bits_float(v: np.ndarray) -> np.ndarray:
    return np.asarray(v, dtype=np.uint64).astype("<u8").view("<f8").astype(np.float64)


def _unit_ball(x: np.ndarray, radius: float = 1.0) -> np.ndarray:
    n = float(np.linalg.norm(x))
    return x if n <= radius else x * (radius / n)


# ------------------------------------------------------------- baselines

DONE_BIT = np.uint64(1) << np.uint64(63)


def make_subgradient_descent(d: int, b: int, step: Callable[[int], float] | None = None,
                             x0: np.ndarray | None = None, max_steps: int | None = None) -> AlgorithmSpec:
    """Normalized subgradient steps on a b-bit fixed-point iterate; M = d*b + 64.

    The 64-bit word holds the step counter; its top bit marks a reported success.
    """
    if b < 2:
        raise ValueError("bits per coordinate must be >= 2")
    step = step or (lambda t: 1.0 / math.sqrt(t))
    layout = BitLayout([("x", d, b), ("ctr", 1, 64)])
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64)
    x0_code = fx_encode(x0, b)

    def decode(mem):
        f = layout.unpack(mem)
        ctr = int(f["ctr"][0])
        x = fx_decode(f["x"], b)
        if ctr == 0:
            x = fx_decode(x0_code, b)
        return x, ctr

    def query_map(mem):
        x, ctr = decode(mem)
        done = bool(ctr & int(DONE_BIT))
        steps = ctr & ~int(DONE_BIT)
        stop = done or (max_steps is not None and steps >= max_steps)
        return Query(_unit_ball(x), stop)

    def update_map(mem, x, value, grad):
        _, ctr = decode(mem)
        t = (ctr & ~int(DONE_BIT)) + 1
        if grad is None:
            return layout.pack({"x": fx_encode(x, b), "ctr": [t | int(DONE_BIT)]})
        g = np.asarray(grad, dtype=np.float64)
        gn = float(np.linalg.norm(g))
        xn = x if gn == 0 else _unit_ball(x - step(t) * g / gn)
        return layout.pack({"x": fx_encode(xn, b), "ctr": [t]})

    return AlgorithmSpec(layout.M, query_map, update_map, f"sgd-b{b}", d)


def make_ellipsoid(d: int, b: int, radius: float = 1.0) -> AlgorithmSpec:
    """Central-cut ellipsoid with quantized center and shape; M = (d + d(d+1)/2) b + 64.

    The shape P is stored through its lower Cholesky factor L = 2^-e Q with Q fixed-point
    in [-2, 2], which keeps P positive definite after rounding. The 64-bit word packs a
    32-bit step counter, a 16-bit exponent e and a success flag.
    """
    if b < 8:
        raise ValueError("bits per entry must be >= 8")
    ntri = d * (d + 1) // 2
    layout = BitLayout([("c", d, b), ("P", ntri, b), ("ctr", 1, 64)])
    il = np.tril_indices(d)
    c_lo, c_hi = -1.5, 1.5

    def decode_factor(mem):
        f = layout.unpack(mem)
        w = int(f["ctr"][0])
        t, e, done = w & 0xFFFFFFFF, (w >> 32) & 0xFFFF, bool(w >> 63)
        if t == 0 and not done:
            return np.zeros(d), radius * np.eye(d), 0, False
        c = fx_decode(f["c"], b, c_lo, c_hi)
        L = np.zeros((d, d))
        L[il] = fx_decode(f["P"], b, -2.0, 2.0)
        return c, L * 2.0 ** (-e), t, done

    def encode(c, L, t, done):
        c = _unit_ball(np.asarray(c), 1.5)
        m = float(np.max(np.abs(L)))
        e = 0 if m <= 0 else max(0, min(0xFFFF, int(math.floor(-math.log2(m)))))
        Q = L * 2.0**e
        w = (t & 0xFFFFFFFF) | (e << 32) | (int(done) << 63)
        return layout.pack({"c": fx_encode(c, b, c_lo, c_hi), "P": fx_encode(Q[il], b, -2.0, 2.0),
                            "ctr": [w]})

    def query_map(mem):
        c, _, _, done = decode_factor(mem)
        return Query(_unit_ball(c), done)

    def update_map(mem, x, value, grad):
        c, L, t, _ = decode_factor(mem)
        if grad is None:
            return encode(c, L, t + 1, True)
        g = np.asarray(grad, dtype=np.float64)
        P = L @ L.T
        Pg = P @ g
        gPg = float(g @ Pg)
        if gPg <= 0:
            return encode(c, L, t + 1, False)
        gt = Pg / math.sqrt(gPg)
        c_new = c - gt / (d + 1)
        P_new = (d * d / (d * d - 1.0)) * (P - (2.0 / (d + 1)) * np.outer(gt, gt))
        P_new = (P_new + P_new.T) / 2
        try:
            L_new = np.linalg.cholesky(P_new)
        except np.linalg.LinAlgError:
            lam, V = np.linalg.eigh(P_new)
            L_new = np.linalg.cholesky((V * np.maximum(lam, 1e-300)) @ V.T + 1e-300 * np.eye(d))
        return encode(c_new, L_new, t + 1, False)

    M = (d + ntri) * b + 64
    assert layout.M == M
    return AlgorithmSpec(M, query_map, update_map, f"ellipsoid-b{b}", d)


def ellipsoid_state(alg: AlgorithmSpec, mem: Memory):
    """(center, shape matrix) decoded from an ellipsoid memory, for diagnostics."""
    d = alg.d
    b = (alg.M - 64) // (d + d * (d + 1) // 2)
    layout = BitLayout([("c", d, b), ("P", d * (d + 1) // 2, b), ("ctr", 1, 64)])
    f = layout.unpack(mem)
    w = int(f["ctr"][0])
    if w & 0xFFFFFFFF == 0 and not w >> 63:
        return np.zeros(d), np.eye(d)
    L = np.zeros((d, d))
    L[np.tril_indices(d)] = fx_decode(f["P"], b, -2.0, 2.0)
    L = L * 2.0 ** (-((w >> 32) & 0xFFFF))
    return fx_decode(f["c"], b, -1.5, 1.5), L @ L.T


def make_scripted(queries: list) -> AlgorithmSpec:
    """Emits a fixed list of queries then stops; memory is a 64-bit index."""
    if not queries:
        raise ValueError("script must be nonempty")
    Q = [np.array(q, dtype=np.float64) for q in queries]
    layout = BitLayout([("i", 1, 64)])

    def query_map(mem):
        i = int(layout.unpack(mem)["i"][0])
        i = min(i, len(Q) - 1)
        return Query(Q[i], i == len(Q) - 1)

    def update_map(mem, x, value, grad):
        i = int(layout.unpack(mem)["i"][0])
        return layout.pack({"i": [i + 1]})

    return AlgorithmSpec(64, query_map, update_map, "scripted", Q[0].shape[0])


# ------------------------------------------------------------- null-space drivers

def null_space_basis(A_dense: np.ndarray, d: int) -> np.ndarray:
    """Orthonormal columns spanning null(A)."""
    if A_dense.shape[0] == 0:
        return np.eye(d)
    _, s, vt = np.linalg.svd(A_dense, full_matrices=True)
    rank = int(np.sum(s > 1e-10 * s[0]))
    return vt[rank:].T.copy()


def make_nullspace_descender(A_dense: np.ndarray, mode: str, *, eta: float = 0.0, gamma1: float = 0.0,
                             gamma2: float = 0.0, eta1: float = 0.0, capacity: int = 32, seed: int = 0,
                             noise: float = 0.05, jitter: float = 0.0, radius: float = 0.999,
                             stall_stop: int = 3, max_steps: int = 100000, delay: int = 0) -> AlgorithmSpec:
    """An algorithm that knows A and learns the adversary's vectors from its answers.

    Each query lies in null(A) and puts every learned vector at the same depth
    (vector offsets included), plus a small random component so the query is new.
    Learned vectors and offsets are stored as raw float64 bits; the header word
    packs a step counter, the vector count, a stall counter, a wait counter and a done flag.
    ``jitter`` in [0, 1] randomizes the depth and noise level (random-walk variant).
    ``delay`` wastes that many queries at the origin once two vectors are known, which
    stretches the first period.
    """
    if mode not in ("opt", "feas"):
        raise ValueError("mode must be 'opt' or 'feas'")
    if not 0 <= delay <= 0x7F:
        raise ValueError("delay must lie in [0, 127]")
    A_dense = np.asarray(A_dense, dtype=np.float64)
    d = A_dense.shape[1]
    N = null_space_basis(A_dense, d)
    layout = BitLayout([("hdr", 1, 64), ("u", capacity * d, 64), ("off", capacity, 64)])

    def decode(mem):
        f = layout.unpack(mem)
        w = int(f["hdr"][0])
        ctr, cnt, stall, done = w & 0xFFFFFFFF, (w >> 32) & 0xFFFF, (w >> 48) & 0xFF, bool(w >> 63)
        U = bits_float(f["u"]).reshape(capacity, d)[:cnt]
        off = bits_float(f["off"])[:cnt]
        return ctr, cnt, stall, done, U, off, f

    def encode(f, ctr, cnt, stall, done, U=None, off=None, waited=None):
        vals = dict(f)
        w = (int(f["hdr"][0]) >> 56) & 0x7F if waited is None else waited
        vals["hdr"] = [(ctr & 0xFFFFFFFF) | (cnt << 32) | (min(stall, 255) << 48) | (w << 56) | (int(done) << 63)]
        if U is not None:
            uu = np.zeros((capacity, d))
            uu[:U.shape[0]] = U
            oo = np.zeros(capacity)
            oo[:off.shape[0]] = off
            vals["u"] = float_bits(uu.reshape(-1))
            vals["off"] = float_bits(oo)
        return layout.pack(vals)

    def equalizer(U, off):
        W = N.T @ U.T
        pinv = np.linalg.pinv(W.T)
        a = N @ (pinv @ (-np.ones(U.shape[0])))
        b = N @ (pinv @ off)
        return a, b

    def t_max(a, b, rho):
        qa, qb, qc = a @ a, 2 * a @ b, b @ b - rho * rho
        if qa <= 0:
            return 0.0
        disc = qb * qb - 4 * qa * qc
        return (-qb + math.sqrt(max(disc, 0.0))) / (2 * qa)

    def point(ctr, stall, U, off, with_noise=True):
        if U.shape[0] == 0:
            return np.zeros(d)
        a, b = equalizer(U, off)
        rng = np.random.default_rng([seed, ctr])
        hi = t_max(a, b, radius)
        if mode == "opt":
            base = float(np.max(off[1:])) if U.shape[0] > 1 else 0.0
            T = base + 2 * gamma2 + stall * gamma1
        else:
            T = 2 * eta1
        if not with_noise:
            T = hi
        elif jitter > 0 and hi > T:
            T = T + jitter * rng.random() * (hi - T)
        x = T * a + b
        if with_noise:
            nu = noise + (jitter * 0.3 * rng.random() if jitter > 0 else 0.0)
            xi = N @ rng.standard_normal(N.shape[1])
            W = N.T @ U.T
            Qw, _ = np.linalg.qr(N @ W) if W.size else (np.zeros((d, 0)), None)
            xi = xi - Qw @ (Qw.T @ xi)
            nx = float(np.linalg.norm(x))
            xi_n = float(np.linalg.norm(xi))
            if xi_n > 0:
                x = x + xi * (nu * max(nx, 1e-3) / xi_n)
        return _unit_ball(x, radius)

    def query_map(mem):
        ctr, cnt, stall, done, U, off, _ = decode(mem)
        if done:
            return Query(point(ctr, stall, U, off, with_noise=(mode == "feas")), True)
        if ctr >= max_steps or (mode == "opt" and stall >= stall_stop):
            return Query(point(ctr, stall, U, off, with_noise=False), True)
        if cnt == 2 and wait(mem) < delay:
            return Query(np.zeros(d), False)
        return Query(point(ctr, stall, U, off), False)

    def wait(mem):
        return (int(layout.unpack(mem)["hdr"][0]) >> 56) & 0x7F

    def learn(U, off, u, o):
        for j in range(U.shape[0]):
            if np.max(np.abs(U[j] - u)) < 1e-9:
                return U, off, False
        if U.shape[0] >= capacity:
            return U, off, False
        return np.vstack([U, u[None, :]]), np.append(off, o), True

    def update_map(mem, x, value, grad):
        ctr, cnt, stall, done, U, off, f = decode(mem)
        if grad is None:
            return encode(f, ctr, cnt, stall, True)
        if cnt == 2 and wait(mem) < delay:
            return encode(f, ctr + 1, cnt, stall, False, waited=wait(mem) + 1)
        g = np.asarray(grad, dtype=np.float64)
        gn = float(np.linalg.norm(g))
        new = False
        if mode == "opt":
            if gn < 0.5:
                u = g / eta
                o = float(u @ x - value / eta)
                U, off, new = learn(U, off, u, o)
        elif gn < 1.5:
            U, off, new = learn(U, off, g, 0.0)
        stall = 0 if new else stall + 1
        return encode(f, ctr + 1, U.shape[0], stall, False, U, off)

    M = layout.M
    return AlgorithmSpec(M, query_map, update_map, f"descender-{mode}" + ("-walk" if jitter else ""), d)
