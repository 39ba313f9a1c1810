"""Sphere discretization, constrained sphere sampling, Gram-Schmidt and robust bases."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

UNIT_TOL = 1e-12
GS_SKIP_TOL = 1e-10
ORTHO_TOL = 1e-9


def fdot(u: np.ndarray, x: np.ndarray) -> float:
    """Correctly rounded inner product.

    Order-independent, so every module that recomputes a value gets the same bits.
    """
    return math.fsum(np.multiply(u, x).tolist())


def fnorm(x: np.ndarray) -> float:
    return math.sqrt(math.fsum(np.multiply(x, x).tolist()))


@dataclass(frozen=True)
class DiscretePoint:
    """Cell of the sphere discretization and its unit representative."""

    cell_id: bytes
    rep: np.ndarray = field(compare=False, repr=False)

    @property
    def d(self) -> int:
        return int(self.rep.shape[0])

    def cell_ints(self) -> np.ndarray:
        return np.frombuffer(self.cell_id, dtype="<i8").copy()


@dataclass(frozen=True)
class OrthonormalBasis:
    """Rows of ``vectors`` are orthonormal. ``skipped`` lists dependent input indices."""

    vectors: np.ndarray
    skipped: tuple[int, ...] = ()

    @property
    def size(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def d(self) -> int:
        return int(self.vectors.shape[1])

    def coords(self, x: np.ndarray) -> np.ndarray:
        return np.array([fdot(b, x) for b in self.vectors])


def empty_basis(d: int) -> OrthonormalBasis:
    return OrthonormalBasis(np.zeros((0, d)))


def _check_unit(y: np.ndarray, tol: float = 1e-9) -> None:
    if abs(fnorm(y) - 1.0) > tol:
        raise ValueError(f"expected a unit vector, got norm {fnorm(y)!r}")


def grid_scale(d: int, delta: float) -> int:
    return int(math.ceil(2.0 * math.sqrt(d) / delta))


def cell_from_ints(z: np.ndarray) -> DiscretePoint:
    z = np.asarray(z, dtype=np.int64)
    zf = z.astype(np.float64)
    rep = zf / fnorm(zf)
    return DiscretePoint(z.astype("<i8").tobytes(), rep)


def discretize(y: np.ndarray, delta: float, *, d: int | None = None) -> DiscretePoint:
    """Grid rounding on the surface of the cube, then radial projection.

    With q = ceil(2 sqrt(d)/delta) the cell of y is round(q y / ||y||_inf). The cube
    face coordinate stays exactly +-q, which makes the map idempotent on representatives.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError("y must be a vector")
    if d is not None and y.shape[0] != d:
        raise ValueError(f"dimension mismatch: {y.shape[0]} != {d}")
    if not (0.0 < delta < math.pi / 2):
        raise ValueError(f"delta must lie in (0, pi/2), got {delta!r}")
    _check_unit(y)
    q = grid_scale(y.shape[0], delta)
    j = int(np.argmax(np.abs(y)))
    u = y / abs(y[j])
    z = np.rint(q * u).astype(np.int64)
    z[j] = q if y[j] > 0 else -q
    return cell_from_ints(z)


def sample_sphere(rng: np.random.Generator, d: int) -> np.ndarray:
    if d < 1:
        raise ValueError("d must be >= 1")
    while True:
        g = rng.standard_normal(d)
        nrm = fnorm(g)
        if nrm > 0:
            return g / nrm


def gram_schmidt(X) -> OrthonormalBasis:
    """Modified Gram-Schmidt with one re-orthogonalization pass."""
    X = [np.asarray(x, dtype=np.float64) for x in X]
    if not X:
        raise ValueError("gram_schmidt needs at least one vector")
    d = X[0].shape[0]
    if any(x.shape != (d,) for x in X):
        raise ValueError("all vectors must share one dimension")
    basis: list[np.ndarray] = []
    skipped: list[int] = []
    for i, x in enumerate(X):
        w = x.copy()
        for _ in range(2):
            for b in basis:
                w = w - fdot(b, w) * b
        nrm = fnorm(w)
        if nrm < GS_SKIP_TOL:
            skipped.append(i)
            continue
        basis.append(w / nrm)
    if not basis:
        raise ValueError("all input vectors are numerically zero")
    return OrthonormalBasis(np.array(basis), tuple(skipped))


def project_complement(S, x: np.ndarray) -> np.ndarray:
    """Projection of x onto the orthogonal complement of span(S)."""
    x = np.asarray(x, dtype=np.float64)
    if isinstance(S, OrthonormalBasis):
        B = S.vectors
    else:
        S = [np.asarray(s, dtype=np.float64) for s in S]
        if not S or all(fnorm(s) < GS_SKIP_TOL for s in S):
            return x.copy()
        if any(s.shape != x.shape for s in S):
            raise ValueError("dimension mismatch")
        B = gram_schmidt(S).vectors
    w = x.copy()
    for _ in range(2):
        for b in B:
            w = w - fdot(b, w) * b
    return w


def _complement_direction(rng: np.random.Generator, B: np.ndarray, d: int) -> np.ndarray:
    while True:
        w = project_complement(OrthonormalBasis(B), sample_sphere(rng, d)) if B.shape[0] else sample_sphere(rng, d)
        nrm = fnorm(w)
        if nrm > 1e-6:
            return w / nrm


def _truncated_marginal(rng: np.random.Generator, a: float, t: float, size: int) -> np.ndarray:
    """Draws from density proportional to (1 - u^2)^a on [-t, t] by inverting the CDF.

    u^2 is Beta(1/2, a + 1) distributed, so |u| = sqrt(I^{-1}(w I_{t^2})).
    """
    t = min(t, 1.0)
    top = special.betainc(0.5, a + 1.0, t * t)
    w = rng.random(size) * top
    mag = np.sqrt(special.betaincinv(0.5, a + 1.0, w))
    mag = np.minimum(mag, t)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return sign * mag


def sample_slab_sphere(rng: np.random.Generator, B: OrthonormalBasis, tau: float, d: int | None = None) -> np.ndarray:
    """Uniform sample of the sphere intersected with {|b^T z| <= tau for b in B}.

    The coordinates along B have joint density proportional to (1 - |alpha|^2)^((d-r-2)/2) on
    the box. They are proposed coordinate-wise from the truncated one-dimensional
    marginals (inverse CDF) and accepted with the exact density ratio, so the result
    is exactly uniform. The remainder is uniform on the sphere of span(B)^perp.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if d is None:
        d = B.d
    r = B.size
    if r == 0:
        return sample_sphere(rng, d)
    if r >= d:
        raise ValueError(f"basis size {r} must be below the dimension {d}")
    a = (d - r - 2) / 2.0
    t = min(tau, 1.0)
    if a >= 0:
        log_env = 0.0
    else:
        if r * t * t >= 1.0:
            raise ValueError("slab too wide for a negative exponent")
        log_env = a * math.log1p(-r * t * t)
    while True:
        alpha = _truncated_marginal(rng, a, t, r)
        s = float(np.sum(alpha * alpha))
        if s >= 1.0:
            continue
        if r > 1 and a != 0.0:
            log_ratio = a * (math.log1p(-s) - float(np.sum(np.log1p(-alpha * alpha))))
            if math.log(rng.random()) > log_ratio - log_env:
                continue
        w = _complement_direction(rng, B.vectors, d)
        z = alpha @ B.vectors + math.sqrt(1.0 - s) * w
        z = z / fnorm(z)
        if all(abs(fdot(b, z)) <= tau for b in B.vectors):
            return z


def robust_basis(Y, s: int, delta: float) -> OrthonormalBasis:
    """Top ceil(r/s) left singular vectors of the matrix whose columns are Y."""
    Y = [np.asarray(y, dtype=np.float64) for y in Y]
    r = len(Y)
    if r == 0:
        raise ValueError("robust_basis needs r >= 1")
    if s < 2:
        raise ValueError("s must be >= 2")
    d = Y[0].shape[0]
    for i, y in enumerate(Y):
        _check_unit(y)
        res = fnorm(project_complement(Y[:i], y)) if i else 1.0
        if res < delta:
            raise ValueError(f"margin violated at index {i}: residual {res:.3e} < {delta}")
    M = np.column_stack(Y)
    U, sig, _ = np.linalg.svd(M, full_matrices=False)
    rp = -(-r // s)
    bound = delta ** (s / (s - 1)) / d ** (1 / (2 * s))
    if sig[rp - 1] < bound * (1 - 1e-12):
        raise AssertionError(f"singular value {sig[rp - 1]:.3e} below {bound:.3e}")
    Z = U[:, :rp].T.copy()
    # re-orthonormalize for the 1e-9 contract
    return gram_schmidt(list(Z))


def robust_basis_ratio_bound(d: int, s: int, delta: float) -> float:
    return (math.sqrt(d) / delta) ** (s / (s - 1))
