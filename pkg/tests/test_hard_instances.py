import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memlb.hard_instances import (ParameterError, Tag, VectorFamily, WallMatrix, _terms, c_d1, eval_F,
                                  instance_from_bytes, instance_to_bytes, lipschitz_bound, make_feas_params,
                                  make_opt_params, subgradient, wall_infnorm)
from memlb.sphere_geom import discretize, empty_basis, sample_slab_sphere

seeds = st.integers(0, 2**32 - 1)


def unit(rng, d):
    g = rng.standard_normal(d)
    return g / np.linalg.norm(g)


def random_instance(seed, d=32, k=2, L=3):
    """Wall matrix and a family with v0 plus L vectors in period 1 (drawn directly, no adversary)."""
    rng = np.random.default_rng(seed)
    params = make_opt_params(d, k, validate=False)
    A = WallMatrix.sample(rng, params.n, d)
    fam = VectorFamily(discretize(unit(rng, d), params.delta))
    for l in range(1, L + 1):
        fam.add(1, l, discretize(unit(rng, d), params.delta))
    return A, params, fam


def brute_F(A, params, fam, upto, x):
    """Term-by-term maximum in plain Python arithmetic."""
    dense = A.dense()
    best = max(abs(sum(float(a) * float(b) for a, b in zip(row, x))) for row in dense) - params.eta
    best = max(best, params.eta * sum(float(a) * float(b) for a, b in zip(fam.v0.rep, x)))
    for (p, l), v in fam.vecs.items():
        if (p, l) <= upto:
            dot = sum(float(a) * float(b) for a, b in zip(v.rep, x))
            best = max(best, params.eta * (dot - p * params.gamma1 - l * params.gamma2))
    return best


def ball_point(rng, d, scale=1.0):
    return unit(rng, d) * rng.random() ** (1 / d) * scale


# ------------------------------------------------------------- wall kernel

def test_wall_zero_query():
    A = WallMatrix.sample(np.random.default_rng(0), 3, 8)
    assert wall_infnorm(A, np.zeros(8)) == (0.0, 0, 1)


def test_wall_single_row():
    A = WallMatrix.from_dense(np.ones((1, 4)))
    assert wall_infnorm(A, np.eye(4)[0]) == (1.0, 0, 1)


def test_wall_matches_dense_d64():
    rng = np.random.default_rng(3)
    for _ in range(50):
        A = WallMatrix.sample(rng, 16, 64)
        x = ball_point(rng, 64)
        prods = A.dense() @ x
        i = int(np.argmax(np.abs(prods)))
        val, row, s = wall_infnorm(A, x)
        assert abs(val - abs(prods[i])) <= 1e-9
        assert row == i and s == (1 if prods[i] >= 0 else -1)


def test_wall_bit_roundtrip():
    rng = np.random.default_rng(1)
    D = rng.choice([-1.0, 1.0], size=(5, 13))
    assert np.array_equal(WallMatrix.from_dense(D).dense(), D)


def test_wall_dimension_mismatch():
    A = WallMatrix.sample(np.random.default_rng(0), 2, 5)
    with pytest.raises(ValueError):
        wall_infnorm(A, np.zeros(4))


# ------------------------------------------------------------- F and its subgradient

def test_F_zero_is_zero():
    A, params, fam = random_instance(0)
    assert eval_F(A, params, fam, (1, 3), np.zeros(32)) == 0.0


def test_F_wall_dominates():
    A, params, fam = random_instance(1)
    x = np.zeros(32)
    x[0] = 3 * params.eta
    assert wall_infnorm(A, x)[0] == pytest.approx(3 * params.eta)
    assert eval_F(A, params, fam, (1, 0), x) == pytest.approx(2 * params.eta, rel=1e-12)


def test_F_beyond_prefix():
    A, params, fam = random_instance(0)
    with pytest.raises(KeyError):
        eval_F(A, params, fam, (2, 1), np.zeros(32))


def test_F_matches_brute_force_d32():
    A, params, fam = random_instance(5)
    rng = np.random.default_rng(6)
    for _ in range(100):
        x = ball_point(rng, 32, scale=params.eta * 5) if rng.random() < 0.5 else ball_point(rng, 32)
        for upto in [(1, 0), (1, 2), (1, 3)]:
            assert eval_F(A, params, fam, upto, x) == pytest.approx(brute_F(A, params, fam, upto, x), abs=1e-15)


def test_subgradient_zero_is_v0():
    A, params, fam = random_instance(2)
    r = subgradient(A, params, fam, (1, 3), np.zeros(32))
    assert r.tag == Tag.v0() and r.value == 0.0
    assert np.array_equal(r.grad, params.eta * fam.v0.rep)


def test_subgradient_wall_priority():
    A, params, fam = random_instance(2)
    x = 0.5 * A.row(3) / np.linalg.norm(A.row(3))
    r = subgradient(A, params, fam, (1, 3), x)
    _, i, s = wall_infnorm(A, x)
    assert r.tag == Tag.wall(i, s)
    assert np.array_equal(r.grad, s * A.row(i))


def test_subgradient_tie_goes_to_smaller_index():
    d = 16
    # dyadic offsets make the tie exact in floating point
    params = replace(make_opt_params(d, 2, validate=False), gamma1=0.25, gamma2=2.0**-8)
    A = WallMatrix(np.zeros(0, dtype=np.uint8), 0, d)
    e = np.eye(d)
    fam = VectorFamily(discretize(-e[0], params.delta))
    fam.add(1, 1, discretize(e[1], params.delta))
    fam.add(1, 2, discretize(e[2], params.delta))
    assert fam.vecs[(1, 1)].rep[1] == 1.0 and fam.vecs[(1, 2)].rep[2] == 1.0
    x = 0.5 * e[1] + (0.5 + params.gamma2) * e[2]
    vals = {tag: v for v, tag in _terms(A, params, fam, (1, 2), x)}
    assert vals[Tag.nem(1, 1)] == vals[Tag.nem(1, 2)] > vals[Tag.v0()]
    r = subgradient(A, params, fam, (1, 2), x)
    assert r.tag == Tag.nem(1, 1)
    assert np.array_equal(r.grad, params.eta * fam.vecs[(1, 1)].rep)


@given(seeds)
@settings(max_examples=40, deadline=None)
def test_subgradient_value_equals_F(seed):
    A, params, fam = random_instance(seed % 97)
    rng = np.random.default_rng(seed)
    x = ball_point(rng, 32)
    r = subgradient(A, params, fam, (1, 3), x)
    assert r.value == eval_F(A, params, fam, (1, 3), x)


def test_convexity_and_subgradient_inequality():
    A, params, fam = random_instance(9, d=16)
    rng = np.random.default_rng(10)
    for _ in range(10**4):
        s = params.eta * 4 if rng.random() < 0.7 else 1.0
        x, y = ball_point(rng, 16, s), ball_point(rng, 16, s)
        lam = rng.random()
        f = lambda z: eval_F(A, params, fam, (1, 3), z)
        assert f(lam * x + (1 - lam) * y) <= lam * f(x) + (1 - lam) * f(y) + 1e-9
        g = subgradient(A, params, fam, (1, 3), x).grad
        assert f(y) >= f(x) + g @ (y - x) - 1e-9


def test_lipschitz_bound_values():
    assert lipschitz_bound(make_opt_params(16, 2, validate=False)) == 4.0
    assert lipschitz_bound(make_opt_params(2, 1, validate=False)) == pytest.approx(math.sqrt(2))


def test_lipschitz_probe_d8():
    A, params, fam = random_instance(4, d=8)
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(10**4):
        x, y = ball_point(rng, 8), ball_point(rng, 8)
        fx, fy = eval_F(A, params, fam, (1, 3), x), eval_F(A, params, fam, (1, 3), y)
        worst = max(worst, abs(fx - fy) / np.linalg.norm(x - y))
    assert worst <= math.sqrt(8)


# ------------------------------------------------------------- parameters

def test_opt_params_d32():
    p = make_opt_params(32, 2)
    assert p.n == 8 and p.eta == 2 / 32**3 and p.delta == 32.0**-3
    assert p.gamma2 == pytest.approx(p.gamma1 / 128)


def test_opt_params_paper_exact_errors():
    with pytest.raises(ParameterError, match="p_max = 0"):
        make_opt_params(128, 2, paper_exact=True)


def test_unknown_override():
    with pytest.raises(ParameterError):
        make_opt_params(32, 2, overrides={"nope": 1.0})


def test_feas_eta1_d48():
    assert make_feas_params(48, 2).eta1 == 1 / (2 * math.sqrt(48))


def test_feas_pmax_d128_k3():
    p = make_feas_params(128, 3, overrides={"c_wall": 1.0})
    expected = math.floor((128 / math.log(128) ** 2 - 1) / 2)
    assert expected == 2
    assert p.p_max == expected


def test_c_d1_paper_exact_value():
    assert c_d1(128, 8100.0) * 128 == pytest.approx(128 / (8100 * math.log(128) ** 2))


# ------------------------------------------------------------- serialization

@pytest.mark.parametrize("mode", ["opt", "feas"])
def test_serialization_roundtrip(mode):
    rng = np.random.default_rng(2)
    d = 16
    params = make_opt_params(d, 2) if mode == "opt" else make_feas_params(d, 2)
    A = WallMatrix.sample(rng, params.n, d)
    y0 = unit(rng, d)
    fam = VectorFamily(discretize(y0, params.delta), y0)
    for l in (1, 2):
        y = sample_slab_sphere(rng, empty_basis(d), d**-3.0, d)
        fam.add(1, l, discretize(y, params.delta), y, None, 3 * l)
    blob = instance_to_bytes(A, params, fam, 77)
    A2, params2, fam2, seed = instance_from_bytes(blob)
    assert seed == 77 and A2 == A and params2 == params
    assert fam2.v0.cell_id == fam.v0.cell_id and np.array_equal(fam2.y0, y0)
    for key in fam.vecs:
        assert fam2.vecs[key].cell_id == fam.vecs[key].cell_id
        assert np.array_equal(fam2.vecs[key].rep, fam.vecs[key].rep)
        assert fam2.birth_time[key] == fam.birth_time[key]
    assert instance_to_bytes(A2, params2, fam2, seed) == blob


def test_serialization_rejects_garbage():
    with pytest.raises(ValueError):
        instance_from_bytes(b"notaninstance")


def test_tag_strings_roundtrip():
    for tag in [Tag.wall(0, 1), Tag.wall(7, -1), Tag.v0(), Tag.nem(2, 3)]:
        assert Tag.parse(str(tag)) == tag


def test_family_order_enforced():
    fam = VectorFamily(discretize(np.eye(3)[0], 0.1))
    fam.add(1, 1, discretize(np.eye(3)[1], 0.1))
    with pytest.raises(ValueError):
        fam.add(1, 1, discretize(np.eye(3)[2], 0.1))
