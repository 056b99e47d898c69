import numpy as np
import pytest
from hypothesis import given, strategies as st

from stoqlattice.hamiltonian import (
    ADJOINT_MU, PAULI, RHO, Hamiltonian, HamiltonianFormatError, LocalTerm, format_hamiltonian,
    interaction_graph, is_stoquastic, parse_hamiltonian, pauli_decompose, rho_decompose,
    rho_reassemble, spectrum,
)

import _oracles as oracle


def random_hermitian(k, rng, stoquastic=False):
    d = 2 ** k
    A = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    A = A + A.conj().T
    if stoquastic:
        A = -np.abs(A.real)
        A = (A + A.T) / 2
        A[np.diag_indices(d)] = rng.standard_normal(d)
    return A


def random_hamiltonian(n, rng, count=4, stoquastic=False, max_k=3):
    H = Hamiltonian(n, offset=float(rng.standard_normal()))
    for _ in range(count):
        k = int(rng.integers(1, min(max_k, n) + 1))
        support = rng.permutation(n)[:k]
        H.add(LocalTerm(support, random_hermitian(k, rng, stoquastic)))
    return H


def test_rho_matrices_and_adjoints():
    assert np.array_equal(RHO[1], np.array([[0, 1], [0, 0]]))
    assert np.array_equal(RHO[0] + RHO[3], np.eye(2))
    for mu in range(4):
        assert np.array_equal(RHO[mu].T, RHO[ADJOINT_MU[mu]])


def test_local_term_reorders_support():
    blk = np.kron(PAULI["Z"], PAULI["X"])
    t = LocalTerm((3, 1), blk)
    assert t.support == (1, 3)
    assert np.array_equal(t.block, np.kron(PAULI["X"], PAULI["Z"]))
    with pytest.raises(ValueError):
        LocalTerm((0,), np.array([[0, 1], [0, 0]]))
    with pytest.raises(ValueError):
        LocalTerm((0, 0), np.eye(4))


@given(st.integers(0, 10_000))
def test_dense_matches_loop_embedding(seed):
    rng = np.random.default_rng(seed)
    H = random_hamiltonian(4, rng)
    assert np.abs(H.dense() - oracle.dense(H)).max() <= 1e-12
    v = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    assert np.abs(H.apply(v) - oracle.dense(H) @ v).max() <= 1e-11


@given(st.integers(0, 10_000))
def test_pauli_decompose_against_traces(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 4))
    A = random_hermitian(k, rng)
    ref = oracle.pauli_coefficients(A)
    got = dict((lab, c) for c, lab in pauli_decompose(A))
    for lab, c in ref.items():
        assert abs(got.get(lab, 0.0) - c) <= 1e-12
    assert all(isinstance(c, float) for c in got.values())


def test_pauli_decompose_zz():
    assert pauli_decompose(np.kron(PAULI["Z"], PAULI["Z"])) == [(1.0, "ZZ")]


def test_stoquastic_termwise_versus_sum():
    # +X and -2X on the same qubit: each term alone is not stoquastic for the
    # first, the sum is
    H = Hamiltonian(1, [LocalTerm((0,), PAULI["X"]), LocalTerm((0,), -2 * PAULI["X"])])
    ok, _ = is_stoquastic(H)
    assert ok
    ok, w = is_stoquastic(H, termwise=True)
    assert not ok and w[:3] == (0, 0, 1)


def test_stoquastic_rejects_imaginary_entries():
    ok, w = is_stoquastic(Hamiltonian(1, [LocalTerm((0,), PAULI["Y"])]))
    assert not ok


@given(st.integers(0, 10_000))
def test_stoquastic_agrees_with_brute_force(seed):
    rng = np.random.default_rng(seed)
    H = random_hamiltonian(3, rng, count=3, stoquastic=bool(rng.integers(2)))
    ok, _ = is_stoquastic(H)
    assert ok == (oracle.max_offdiag(oracle.dense(H)) <= 1e-12)


@given(st.integers(0, 10_000))
def test_rho_decomposition_reassembles(seed):
    rng = np.random.default_rng(seed)
    H = random_hamiltonian(4, rng, count=4, stoquastic=True)
    K, strings = rho_decompose(H)
    assert all(s.coefficient >= 0 for s in strings)
    assert np.abs(rho_reassemble(K, strings, 4) - oracle.dense(H)).max() <= 1e-10


def test_rho_decompose_rejects_sign_problem():
    with pytest.raises(ValueError):
        rho_decompose(Hamiltonian(1, [LocalTerm((0,), PAULI["X"])]))


def test_zz_spectrum():
    H = Hamiltonian(2, [LocalTerm((0, 1), np.kron(PAULI["Z"], PAULI["Z"]))])
    assert list(spectrum(H, 2).eigenvalues) == [-1.0, -1.0]


def test_iterative_matches_dense():
    rng = np.random.default_rng(3)
    H = random_hamiltonian(8, rng, count=10, max_k=2)
    a = spectrum(H, 3, "dense").eigenvalues
    b = spectrum(H, 3, "iterative", seed=1).eigenvalues
    assert np.abs(a - b).max() <= 1e-8
    assert np.abs(a - np.linalg.eigvalsh(oracle.dense(H))[:3]).max() <= 1e-9


def test_dense_limit_enforced():
    with pytest.raises(ValueError):
        spectrum(Hamiltonian(5), 1, "dense", max_dense_qubits=4)


@given(st.integers(0, 10_000))
def test_format_roundtrip_is_lossless(seed):
    rng = np.random.default_rng(seed)
    H = random_hamiltonian(4, rng)
    text = format_hamiltonian(H)
    again = parse_hamiltonian(text)
    assert again.offset == H.offset
    assert [t.support for t in again.terms] == [t.support for t in H.terms]
    for a, b in zip(again.terms, H.terms):
        assert np.array_equal(a.block, b.block)
    assert format_hamiltonian(again) == text


def test_parse_errors():
    with pytest.raises(HamiltonianFormatError):
        parse_hamiltonian("term 0\nentry 0 0 1\n")
    with pytest.raises(HamiltonianFormatError):
        parse_hamiltonian("qubits 1\nentry 0 0 1\n")
    with pytest.raises(HamiltonianFormatError):
        parse_hamiltonian("qubits 1\nterm 0\nentry 0 1 1 0\n")


def test_interaction_graph_hyperedges():
    H = Hamiltonian(4, [LocalTerm((0, 1), np.eye(4)), LocalTerm((1, 2, 3), np.eye(8))])
    g = interaction_graph(H)
    assert sorted(g.edges) == [(0, 1)]
    assert g.graph["hyperedges"] == [(1, 2, 3)]


@given(st.integers(0, 10_000))
def test_iterative_finds_degenerate_copies(seed):
    # qubits outside every support make each level exactly 2^free-fold degenerate
    rng = np.random.default_rng(seed)
    H = random_hamiltonian(7, rng, count=3, max_k=2)
    k = 5
    ref = np.linalg.eigvalsh(H.dense())[:k]
    got = spectrum(H, k, "iterative", seed=seed).eigenvalues
    assert np.abs(ref - got).max() <= 1e-8
