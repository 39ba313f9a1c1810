import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from memlb.adversary_feas import (FeasAdversary, SeparationResponse, certificate_xbar_feas, membership,
                                  new_feas_adversary, respond_feas, sample_inner_ball, validate_cuts)
from memlb.adversary_opt import PhaseError
from memlb.experiments.suite import driven_feas
from memlb.hard_instances import Tag, WallMatrix, make_feas_params
from memlb.harness import null_space_basis
from memlb.sphere_geom import discretize, empty_basis


class FixedSource:
    def __init__(self, v0):
        self.v0 = v0

    def draw(self, X):
        return self.v0, self.v0.rep.copy(), empty_basis(self.v0.d)


def informative_point(adv, scale=0.9):
    """Point of null(A) pointing away from v0."""
    N = null_space_basis(adv.A.dense(), adv.params.d)
    w = -N @ (N.T @ adv.family.v0.rep)
    return scale * w / np.linalg.norm(w)


# ------------------------------------------------------------- construction

def test_same_seed_same_instance():
    p = make_feas_params(32, 2)
    a, b = new_feas_adversary(p, 9), new_feas_adversary(p, 9)
    assert a.A == b.A and a.family.v0.cell_id == b.family.v0.cell_id


def test_invalid_k_rejected():
    p = make_feas_params(32, 1, validate=False)
    with pytest.raises(ValueError):
        FeasAdversary(p, 0)


def test_zero_query_cuts_v0():
    adv = new_feas_adversary(make_feas_params(32, 2), 0)
    r = respond_feas(adv, np.zeros(32))
    assert r.kind == "cut" and r.tag == Tag.v0()
    assert np.array_equal(r.grad, adv.family.v0.rep)


def test_wall_cut_first():
    adv = new_feas_adversary(make_feas_params(32, 2), 0)
    x = 0.5 * adv.A.row(0) / np.linalg.norm(adv.A.row(0))
    r = adv.respond(x)
    assert r.tag.kind == "wall"
    assert r.grad @ x > adv.params.eta0


def test_duplicate_query_cached():
    adv = new_feas_adversary(make_feas_params(32, 2), 0)
    x = informative_point(adv)
    r1 = adv.respond(x)
    assert adv.transcript[-1].events == ("NewVector(1,1)",)
    r2 = adv.respond(x.copy())
    assert r1.same_as(r2)
    assert adv.transcript[-1].events == ("Duplicate",)


def test_period_cut_picks_most_violated():
    adv = new_feas_adversary(make_feas_params(64, 3), 1)
    x = informative_point(adv)
    adv.respond(x)
    v11 = adv.family.vecs[(1, 1)].rep
    # a point aligned with v11 but still in null(A) and away from v0
    N = null_space_basis(adv.A.dense(), 64)
    y = N @ (N.T @ (x + 0.3 * v11))
    y *= 0.9 / np.linalg.norm(y)
    assert adv.family.v0.rep @ y <= -adv.params.eta1 and v11 @ y > -adv.params.eta1
    r = adv.respond(y)
    assert r.tag == Tag.nem(1, 1) and adv.transcript[-1].events == ("PeriodCut",)


# ------------------------------------------------------------- driven runs

def test_driven_d64_k3_cuts_valid_at_emission():
    adv = driven_feas(64, 2, k=3)
    eta1 = adv.params.eta1
    news = [e for e in adv.transcript if any(ev.startswith("NewVector") for ev in e.events)]
    assert len(news) == adv.params.p_max * (adv.params.k - 1)
    for e in news:
        assert e.response.grad @ e.x > -eta1
        assert e.response.grad @ e.x >= -1 / (64**2 * 8) - 64.0**-3


@given(st.integers(0, 10**6), st.sampled_from([16, 32, 64]), st.sampled_from([2, 3]), st.sampled_from([0.0, 1.0]))
@settings(max_examples=20, deadline=None)
def test_driven_run_structure(seed, d, k, jitter):
    if make_feas_params(d, k, validate=False).p_max < 1:
        k = 2
    adv = driven_feas(d, seed, k=k, jitter=jitter)
    prm = adv.params
    assert adv.completed
    for p in range(1, prm.p_max + 1):
        assert adv.family.l_per_period[p] == prm.k - 1
        assert len(adv.exploratory[p]) == prm.k
    for p in range(1, prm.p_max):
        assert adv.exploratory[p][-1] == adv.exploratory[p + 1][0]
    assert all(0 <= l <= prm.k - 1 for _, l in adv.invariant_log)
    # every cut in the transcript separates the query from the success set witnesses
    assert validate_cuts(adv.transcript, adv, np.random.default_rng(seed), 200).ok


def test_stalling_algorithm_aborts():
    p = make_feas_params(16, 2, max_construction_queries=25)
    adv = FeasAdversary(p, 0)
    for _ in range(30):
        adv.respond(np.zeros(16))
    assert adv.final and adv.end_reason == "aborted"
    assert "25 queries" in adv.diagnostic


# ------------------------------------------------------------- success set

def test_membership_requires_final():
    adv = new_feas_adversary(make_feas_params(16, 2), 0)
    with pytest.raises(PhaseError):
        membership(adv, np.zeros(16))
    with pytest.raises(PhaseError):
        certificate_xbar_feas(adv)


def test_membership_examples():
    adv = driven_feas(32, 4)
    assert not membership(adv, np.zeros(32))
    cert = certificate_xbar_feas(adv)
    assert cert.ok
    assert cert.max_v <= -4 * adv.params.eta1
    assert membership(adv, cert.xbar)
    rng = np.random.default_rng(0)
    eps = adv.params.eps_ball
    assert eps == min(adv.params.eta0 / math.sqrt(32), adv.params.eta1) / 2
    for _ in range(200):
        u = rng.standard_normal(32)
        assert membership(adv, cert.xbar + 0.99 * eps * u / np.linalg.norm(u))


def test_final_oracle_matches_membership():
    adv = driven_feas(32, 5)
    cert = certificate_xbar_feas(adv)
    rng = np.random.default_rng(1)
    pts = list(sample_inner_ball(adv, cert, rng, 100))
    pts += [cert.xbar + 10 * adv.params.eps_ball * rng.standard_normal(32) for _ in range(100)]
    for q in pts:
        q = q / max(1.0, np.linalg.norm(q))
        r = adv.respond(q)
        assert (r.kind == "success") == membership(adv, q)
        if r.kind == "cut":
            assert r.grad @ (q - cert.xbar) > 0


def test_final_phase_consistent_with_cache():
    adv = driven_feas(32, 6)
    for e in list(adv.transcript):
        again = adv.respond(e.x)
        assert again.same_as(e.response)


def test_certificate_single_vector_wall_zero():
    d = 16
    rng = np.random.default_rng(0)
    D = rng.choice([-1.0, 1.0], size=(d // 4, d))
    D[:, 1] = D[:, 0]
    A = WallMatrix.from_dense(D)
    v0 = discretize((np.eye(d)[0] - np.eye(d)[1]) / math.sqrt(2), d**-3.0)
    p = make_feas_params(d, 2, max_construction_queries=1)
    adv = FeasAdversary(p, 0, A=A, source=FixedSource(v0))
    adv.respond(np.zeros(d))
    adv.respond(np.zeros(d))
    assert adv.end_reason == "aborted"
    cert = certificate_xbar_feas(adv)
    assert cert.wall == 0.0
    assert np.allclose(cert.xbar, -v0.rep / cert.C_d, atol=1e-15)


def test_success_response_helpers():
    s = SeparationResponse.success()
    assert s.kind == "success" and s.grad is None
    assert s.same_as(SeparationResponse.success())


def test_validate_cuts_d32_no_violations():
    adv = driven_feas(32, 8, jitter=1.0)
    rep = validate_cuts(adv.transcript, adv, np.random.default_rng(3), 1000)
    assert rep.ok and rep.points_tested > 0 and rep.cuts_checked > 0
