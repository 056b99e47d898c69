import numpy as np
import pytest
from hypothesis import given, strategies as st

from stoqlattice.gadgets import (
    CROSS, FORK, GEO_SUBDIVISION, GadgetError, RhoEdge, apply_parallel, certify, closed_form,
    compose_error, cross_gadget, delta_sweep, edge_from_product, fork_compatible, fork_gadget,
    geo_subdivision, klocal_subdivision, reduce_locality, schrieffer_wolff_2, schrieffer_wolff_3,
    three_to_two, three_to_two_target, triangle_gadget,
)
from stoqlattice.hamiltonian import PAULI, RHO, Hamiltonian, LocalTerm, is_stoquastic

import _oracles as oracle

X, Z = PAULI["X"], PAULI["Z"]

mu_st = st.integers(0, 3)
weight_st = st.floats(0.1, 2.0)


def sw2_oracle(sysm):
    """Second-order effective operator from dense matrices: P V P - P V Q H0^-1 Q V P."""
    n = sysm.num_qubits
    H0 = oracle.dense(sysm.penalty)
    V = oracle.dense(sysm.v_main) * sysm.main_weight + oracle.dense(sysm.v_extra)
    d = np.real(np.diag(H0))
    lo = np.flatnonzero(np.abs(d) < 1e-9)
    hi = np.flatnonzero(np.abs(d) >= 1e-9)
    return V[np.ix_(lo, lo)] - V[np.ix_(lo, hi)] @ np.diag(1 / d[hi]) @ V[np.ix_(hi, lo)], lo


def rel_err(a, b, scale):
    return np.abs(a - b).max() / max(1.0, scale)


# --------------------------------------------------------------------------
# rho-edges

def test_rho_edge_operator_and_term():
    e = RhoEdge(0, 1, 2, 1, 0.5)
    blk = np.kron(RHO[2], RHO[1])
    assert np.array_equal(e.operator_block(), 0.5 * (blk + blk.T))
    assert np.array_equal(e.term().block, -0.5 * (blk + blk.T))
    d = RhoEdge(0, 1, 3, 3, 2.0)
    assert d.self_adjoint and d.product_scale == 1.0
    assert np.array_equal(edge_from_product(0, 3, 1, 3, 1.0).operator_block(), 2.0 * np.kron(RHO[3], RHO[3]))
    with pytest.raises(GadgetError):
        RhoEdge(0, 0, 1, 1, 1.0)
    with pytest.raises(GadgetError):
        RhoEdge(0, 1, 1, 1, -1.0)


@given(mu_st, mu_st, weight_st)
def test_flipped_and_oriented_same_operator(mu_u, mu_v, w):
    e = RhoEdge(0, 1, mu_u, mu_v, w)
    ref = oracle.embed(e.operator_block(), [0, 1], 2)
    f = e.oriented(1)
    assert np.allclose(oracle.embed(f.operator_block(), [1, 0], 2), ref)
    assert np.allclose(oracle.embed(e.flipped().operator_block(), [0, 1], 2), ref)


# --------------------------------------------------------------------------
# second order versus closed forms

@given(mu_st, mu_st, weight_st)
def test_subdivision_second_order_exact(mu_u, mu_v, w):
    e = RhoEdge(0, 1, mu_u, mu_v, w)
    sysm, app = geo_subdivision(e, delta=1e5)
    sysm.check()
    eff = schrieffer_wolff_2(sysm)
    ref, lo = sw2_oracle(sysm)
    assert np.array_equal(eff.low_indices, lo)
    assert rel_err(eff.matrix, ref, 1e5) <= 1e-12
    assert np.abs(eff.matrix - closed_form(app).matrix).max() <= 1e-12 * max(1.0, w)


@given(mu_st, mu_st, mu_st, mu_st, weight_st, weight_st)
def test_cross_second_order_exact(a, b, c, d, w1, w2):
    e1, e2 = RhoEdge(0, 1, a, b, w1), RhoEdge(2, 3, c, d, w2)
    sysm, app = cross_gadget(e1, e2, delta=1e5)
    sysm.check()
    eff = schrieffer_wolff_2(sysm)
    assert np.abs(eff.matrix - closed_form(app).matrix).max() <= 1e-12 * 10
    ref, _ = sw2_oracle(sysm)
    assert rel_err(eff.matrix, ref, 1e5) <= 1e-12
    assert len(app.added_edges) == 4


@given(mu_st, mu_st, mu_st, weight_st, weight_st)
def test_fork_second_order_exact(a, m, c, w1, w2):
    e1, e2 = RhoEdge(0, 1, a, m, w1), RhoEdge(1, 2, m, c, w2)
    sysm, app = fork_gadget(e1, e2, delta=1e5)
    sysm.check()
    eff = schrieffer_wolff_2(sysm)
    assert np.abs(eff.matrix - closed_form(app).matrix).max() <= 1e-11
    assert len(app.added_edges) == 1
    assert app.added_edges[0].qubits == (0, 2)


def test_fork_adjoint_alignment_and_illegal_pair():
    # rho^1 and its adjoint rho^2 at the shared vertex: legal after rewriting
    v, e2 = fork_compatible(RhoEdge(0, 1, 0, 1, 1.0), RhoEdge(1, 2, 2, 3, 1.0))
    assert v == 1 and e2.mu_at(1) == 1
    with pytest.raises(GadgetError, match="fork illegal"):
        fork_gadget(RhoEdge(0, 1, 0, 1, 1.0), RhoEdge(1, 2, 3, 1, 1.0))
    with pytest.raises(GadgetError):
        cross_gadget(RhoEdge(0, 1, 1, 1, 1.0), RhoEdge(1, 2, 1, 1, 1.0))


def test_fork_q_scale_shrinks_extra_edge():
    e1, e2 = RhoEdge(0, 1, 1, 2, 1.0), RhoEdge(1, 2, 2, 1, 1.0)
    _, a = fork_gadget(e1, e2, q_scale=2.0, build_system=False)
    assert a.added_edges[0].weight == pytest.approx(1.0 / 4.0)


# --------------------------------------------------------------------------
# simulation error

def test_subdivision_sweep_frozen_values():
    # epsilon of the rho^2 rho^1 subdivision falls by 100x per two decades of Delta
    e = RhoEdge(0, 1, 2, 1, 1.0)
    tgt = Hamiltonian(2, [e.term()])
    rows = delta_sweep(lambda d: geo_subdivision(e, delta=d)[0], tgt, [1e4, 1e6], 4)
    assert rows[0][1] == pytest.approx(2.0e-4, rel=0.01)
    assert rows[1][1] == pytest.approx(2.0e-6, rel=0.01)
    # eta ~ sqrt(2) / sqrt(Delta): admixture of the excited mediator
    assert rows[0][2] == pytest.approx(np.sqrt(2) * 1e-2, rel=0.01)


def test_certify_reports_code_leakage_and_eigen_error():
    e = RhoEdge(0, 1, 1, 1, 1.0)
    sysm, _ = geo_subdivision(e, delta=1e6)
    c = certify(Hamiltonian(2, [e.term()]), sysm)
    assert c.epsilon < 1e-4 and c.eta < 1e-2
    assert c.delta_used == 1e6
    assert len(c.per_eigenvalue_diffs) == 4


def test_compose_error_chain():
    comp = compose_error([(0.1, 0.01, 100.0, 2.0), (0.2, 0.02, 1e4, 3.0)])
    assert comp.eta == pytest.approx(0.1 + 0.2 + 0.02 / 100)
    assert comp.epsilon == pytest.approx(0.01 + 0.02 + 0.02 * 2.0 / 100)
    assert comp.steps == 2
    assert comp.budget(0.1) == pytest.approx(0.025)
    assert compose_error([]).steps == 0


def test_triangle_gadget_no_extra_edge_on_system():
    e1, e2 = RhoEdge(0, 1, 2, 1, 1.0), RhoEdge(1, 2, 2, 1, 1.0)
    s3, app = triangle_gadget(e1, e2, delta_inner=1e2, delta_outer=1e8)
    assert all(set(e.qubits) <= set(app.mediators) for e in app.added_edges)
    assert is_stoquastic(s3.hamiltonian(), termwise=True)[0]
    # both measured steps are small; the inner one dominates
    s1, s2 = app.step_certificates
    assert s1.epsilon < 0.1 and s2.epsilon < 0.1
    assert app.certificate.epsilon < 0.2


# --------------------------------------------------------------------------
# k-local subdivision

def _random_stoq_term(support, rng, pairs=2, diag=2):
    """Stoquastic term with a few off-diagonal pairs and a few lowered
    diagonal entries, so it splits into a handful of rho-strings."""
    k = len(support)
    d = 2 ** k
    A = np.zeros((d, d))
    for _ in range(pairs):
        r, c = rng.choice(d, 2, replace=False)
        A[r, c] = A[c, r] = -rng.uniform(0.2, 1.5)
    for r in rng.choice(d, diag, replace=False):
        A[r, r] = -rng.uniform(0.2, 1.5)
    return LocalTerm(support, A + rng.normal() * np.eye(d))


@pytest.mark.parametrize("seed", range(3))
def test_klocal_subdivision_identity(seed):
    rng = np.random.default_rng(seed)
    H = Hamiltonian(4, [_random_stoq_term((0, 1, 2, 3), rng), _random_stoq_term((1, 2), rng)])
    sysm, app = klocal_subdivision(H, delta=1e6)
    sysm.check()
    # the split strings reassemble the original operator exactly
    M = len(app.mediators)
    lo = closed_form(app)
    target = oracle.dense(H)
    full = np.kron(target, np.eye(2 ** M))
    sel = lo.low_indices
    assert np.abs(lo.matrix - full[np.ix_(sel, sel)]).max() <= 1e-12
    # and the Schrieffer-Wolff series reproduces it at second order
    eff = schrieffer_wolff_2(sysm)
    assert np.abs(eff.matrix - lo.matrix).max() <= 1e-12 * 10


def test_reduce_locality_reaches_three():
    rng = np.random.default_rng(1)
    H = Hamiltonian(5, [_random_stoq_term((0, 1, 2, 3, 4), rng)])
    out, apps = reduce_locality(H)
    assert out.merged().locality <= 3
    assert is_stoquastic(out, termwise=True)[0]
    with pytest.raises(GadgetError):
        klocal_subdivision(Hamiltonian(3, [_random_stoq_term((0, 1, 2), rng)]))


# --------------------------------------------------------------------------
# parallel application

def test_parallel_additivity():
    e1, e2 = RhoEdge(0, 1, 2, 1, 0.8), RhoEdge(2, 3, 1, 3, 1.3)
    s1, _ = geo_subdivision(e1, delta=1e4, mediator=4, num_qubits=6)
    s2, _ = geo_subdivision(e2, delta=1e4, mediator=5, num_qubits=6)
    comb, report = apply_parallel([s1, s2])
    eff = schrieffer_wolff_2(comb)
    lo = eff.low_indices
    parts = []
    for s in (s1, s2):
        e = schrieffer_wolff_2(s)
        pos = {int(i): k for k, i in enumerate(e.low_indices)}
        idx = [pos[int(i)] for i in lo]
        parts.append(e.matrix[np.ix_(idx, idx)])
    assert np.abs(eff.matrix - (parts[0] + parts[1])).max() <= 1e-12
    assert all(v <= 1e-12 for v in report.values())


def test_parallel_rejects_shared_mediator():
    s1, _ = geo_subdivision(RhoEdge(0, 1, 1, 1, 1.0), mediator=4, num_qubits=5)
    s2, _ = geo_subdivision(RhoEdge(2, 3, 1, 1, 1.0), mediator=4, num_qubits=5)
    with pytest.raises(GadgetError):
        apply_parallel([s1, s2])


# --------------------------------------------------------------------------
# 3-local to 2-local

def test_three_to_two_third_order_matches_target():
    ops = [(q, X / 6 ** (1 / 3)) for q in range(3)]
    for d in (1e3, 1e5):
        s, a = three_to_two(ops, delta=d)
        s.check()
        W = s.code_isometry().toarray()
        proj = W.T @ schrieffer_wolff_3(s).full() @ W
        tgt = three_to_two_target(a)
        assert np.abs(proj - tgt.dense()).max() <= 1e-12 * d


def test_three_to_two_input_checks():
    with pytest.raises(GadgetError):
        three_to_two([(0, X), (1, X)])
    with pytest.raises(GadgetError):
        three_to_two([(0, Z), (1, X), (2, X)])
    with pytest.raises(GadgetError):
        three_to_two([(0, -X), (1, X), (2, X)])
