import numpy as np
import pytest
from hypothesis import given, strategies as st

from stoqlattice.hamiltonian import PAULI, Hamiltonian, LocalTerm, is_stoquastic
from stoqlattice.pauli import (
    FAMILIES, MINUS_XX_PLUS_ZZ, NEITHER, PAULI_TERMWISE_STOQ, SIGN_RESTRICTED, TERMWISE_STOQ,
    XX_PLUS_ZZ, GroupedParams, ParentXZParams, PauliError, build_grouped, build_parent, classify,
    degrees_of_freedom, format_params, normalise_signs, parent_edge_block, parent_params,
    parse_params, transverse_field_ising,
)

import _oracles as oracle

X, Y, Z, I2 = PAULI["X"], PAULI["Y"], PAULI["Z"], PAULI["I"]


def random_params(n, rng, density=0.6):
    edges = {}
    for u in range(n):
        for v in range(u + 1, n):
            if rng.random() < density:
                edges[(u, v)] = (-rng.uniform(0, 2), rng.uniform(-2, 2))
    verts = {u: (-rng.uniform(0, 2), rng.uniform(-2, 2)) for u in range(n)}
    return ParentXZParams(n, edges, verts)


def test_single_edge_minus_xx():
    H = build_parent(ParentXZParams(2, {(0, 1): (-1.0, 0.0)}))
    assert np.array_equal(oracle.dense(H), -np.kron(X, X))
    assert is_stoquastic(H)[0]


def test_edge_template_entrywise():
    J, L, fu, hu, fv, hv = -0.7, 0.3, -0.2, 1.1, -0.4, -0.9
    ref = J * np.kron(X, X) + L * np.kron(Z, Z) + fu * np.kron(X, I2) + hu * np.kron(Z, I2) \
        + fv * np.kron(I2, X) + hv * np.kron(I2, Z)
    blk = parent_edge_block(J, L, fu, hu, fv, hv)
    assert np.array_equal(blk, ref.real)
    # corner entry h_u + L + h_v
    assert blk[0, 0] == hu + L + hv


@pytest.mark.parametrize("edges,verts", [({(0, 1): (1.0, 0.0)}, {}), ({}, {0: (0.5, 0.0)})])
def test_sign_constraints(edges, verts):
    with pytest.raises(PauliError):
        ParentXZParams(2, edges, verts)


@given(st.integers(0, 10_000))
def test_parent_always_stoquastic(seed):
    rng = np.random.default_rng(seed)
    P = random_params(int(rng.integers(2, 6)), rng)
    H = build_parent(P)
    assert oracle.max_offdiag(oracle.dense(H)) <= 1e-12
    assert classify(H) == PAULI_TERMWISE_STOQ


def test_parent_params_roundtrip():
    rng = np.random.default_rng(2)
    P = random_params(4, rng)
    Q = parent_params(build_parent(P))
    for k, (J, L) in P.edges.items():
        assert Q.edges[k] == pytest.approx((J, L), abs=1e-14)
    for u, (f, h) in P.vertices.items():
        assert Q.vertices[u] == pytest.approx((f, h), abs=1e-14)
    with pytest.raises(PauliError):
        parent_params(Hamiltonian(2, [LocalTerm((0, 1), np.kron(X, Z) + np.kron(Z, X))]))


def test_classify_worked_examples():
    tfim = transverse_field_ising(4, [(0, 1), (1, 2), (2, 3)], J=1.0, g=0.7)
    assert classify(tfim) == PAULI_TERMWISE_STOQ
    hop = Hamiltonian(2, [LocalTerm((0, 1), -(np.kron(X, X) + np.kron(Y, Y)))])
    assert classify(hop) == TERMWISE_STOQ
    xz = Hamiltonian(2, [LocalTerm((0, 1), np.kron(X, Z))])
    assert classify(xz) == NEITHER


@given(st.integers(0, 10_000))
def test_classify_monotone(seed):
    # a random stoquastic 2-local term: PAULI_TERMWISE implies TERMWISE implies stoquastic terms
    rng = np.random.default_rng(seed)
    A = -np.abs(rng.standard_normal((4, 4)))
    A = (A + A.T) / 2
    A[np.diag_indices(4)] = rng.standard_normal(4)
    if rng.random() < 0.5:
        A = A * (np.abs(A) > 1.0)
    H = Hamiltonian(2, [LocalTerm((0, 1), A)])
    label = classify(H)
    assert label in (PAULI_TERMWISE_STOQ, TERMWISE_STOQ)
    if label == PAULI_TERMWISE_STOQ:
        coeffs = {k: v for k, v in oracle.pauli_coefficients(A).items() if abs(v) > 1e-12 and k != "II"}
        assert len(coeffs) <= 1
        for lab, c in coeffs.items():
            assert lab in ("XI", "IX", "ZI", "IZ", "ZZ", "XX")
            if "X" in lab:
                assert c.real < 0


def test_normalise_two_vertex_example():
    P = ParentXZParams(2, {(0, 1): (-0.5, 0.8)}, {0: (-0.3, -1.0), 1: (-0.2, 2.0)})
    H = build_parent(P)
    H2, rec = normalise_signs(H)
    assert rec.x_qubits == [0]
    assert rec.flipped_zz == [(0, 1)]
    Q = parent_params(H2)
    assert Q.vertices[0] == pytest.approx((-0.3, 1.0))
    assert Q.vertices[1] == pytest.approx((-0.2, 2.0))
    # XX and X fields keep their signs; ZZ flips because only one end is conjugated
    assert Q.edges[(0, 1)] == pytest.approx((-0.5, -0.8))
    a = np.linalg.eigvalsh(oracle.dense(H))
    b = np.linalg.eigvalsh(oracle.dense(H2))
    assert np.abs(a - b).max() <= 1e-12
    U = rec.unitary(2)
    assert np.abs(U @ oracle.dense(H) @ U.conj().T - oracle.dense(H2)).max() <= 1e-14


def test_normalise_identity_when_fields_positive():
    P = ParentXZParams(2, {(0, 1): (-1.0, -1.0)}, {0: (-1.0, 0.5), 1: (0.0, 0.0)})
    H2, rec = normalise_signs(P)
    assert rec.is_identity and not rec.flipped_zz


@given(st.integers(0, 10_000), st.sampled_from(["h", "f"]))
def test_normalise_preserves_spectrum(seed, target):
    rng = np.random.default_rng(seed)
    P = random_params(int(rng.integers(2, 6)), rng)
    H = build_parent(P)
    H2, rec = normalise_signs(H, target)
    a = np.linalg.eigvalsh(oracle.dense(H))
    b = np.linalg.eigvalsh(oracle.dense(H2))
    assert np.abs(a - b).max() <= 1e-12
    Q = parent_params(H2)
    if target == "h":
        assert all(h >= 0 for _, h in Q.vertices.values())
        assert is_stoquastic(H2)[0]
    else:
        assert all(f >= 0 for f, _ in Q.vertices.values())
    U = rec.unitary(P.num_qubits)
    assert np.abs(U @ oracle.dense(H) @ U.conj().T - oracle.dense(H2)).max() <= 1e-12


def test_grouped_examples():
    edges = {(0, 1): 1.0, (1, 2): 0.5}
    H = build_grouped(MINUS_XX_PLUS_ZZ, GroupedParams(3, edges, alpha=1.0, gamma=-1.0))
    assert oracle.max_offdiag(oracle.dense(H)) <= 0
    assert len(H.terms) == 2
    H = build_grouped(XX_PLUS_ZZ, GroupedParams(3, {(0, 1): -1.0}, alpha=1.0, gamma=3.7))
    assert oracle.max_offdiag(oracle.dense(H)) <= 0
    with pytest.raises(PauliError):
        build_grouped(XX_PLUS_ZZ, GroupedParams(2, {(0, 1): -1.0}, alpha=-1.0))
    with pytest.raises(PauliError):
        build_grouped(MINUS_XX_PLUS_ZZ, GroupedParams(2, {(0, 1): -1.0}))
    with pytest.raises(PauliError):
        build_grouped(XX_PLUS_ZZ, GroupedParams(2, {(0, 1): 1.0}))


@given(st.integers(0, 10_000), st.sampled_from(FAMILIES))
def test_grouped_families_stoquastic(seed, family):
    rng = np.random.default_rng(seed)
    n = 3
    s = int(rng.choice([-1, 1]))
    if family == SIGN_RESTRICTED:
        P = random_params(n, rng)
        P = ParentXZParams(n, {k: (J, s * abs(L)) for k, (J, L) in P.edges.items()},
                           {u: (f, s * abs(h)) for u, (f, h) in P.vertices.items()})
        params = GroupedParams(n, parent=P, s=s)
    else:
        sign = 1 if family == MINUS_XX_PLUS_ZZ else -1
        edges = {(0, 1): sign * rng.uniform(0, 2), (1, 2): sign * rng.uniform(0, 2)}
        params = GroupedParams(n, edges, alpha=rng.uniform(0, 2), gamma=rng.uniform(-2, 2))
    H = build_grouped(family, params)
    assert oracle.max_offdiag(oracle.dense(H)) <= 1e-12


def test_sign_restricted_rejects_wrong_sign():
    P = ParentXZParams(2, {(0, 1): (-1.0, -1.0)}, {})
    with pytest.raises(PauliError):
        build_grouped(SIGN_RESTRICTED, GroupedParams(2, parent=P, s=1))


def test_degrees_of_freedom():
    assert degrees_of_freedom() == (10, 6)


def test_params_text_roundtrip():
    rng = np.random.default_rng(9)
    P = random_params(4, rng)
    Q = parse_params(format_params(P))
    assert Q.edges == P.edges and Q.vertices == P.vertices
    with pytest.raises(PauliError):
        parse_params("edge 0 1 -1\n")
    with pytest.raises(PauliError):
        parse_params("edge 0 1 1 0\n")
