from fractions import Fraction

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from stoqlattice.circuit import RegisterLayout, random_circuit, to_spatially_sparse
from stoqlattice.gadgets import RhoEdge
from stoqlattice.geometry import (
    PATTERNS, RHO_EDGE_CLASSES, SQUARE, TRIANGULAR, DeltaPolicy, DrawnGraph, GeometryError,
    LatticeEmbedding, RhoGraph, certify_rounds, check_spatially_sparse, decompose_parent_edge,
    edge_class, embed_lattice, fork_loop, format_embedding, layout_drawing, layout_pair_hamiltonian,
    localise_vertex, parse_embedding, planarise, reduce_crossings, reduce_degree, segment_relation,
)
from stoqlattice.hamiltonian import PAULI, RHO, Hamiltonian, LocalTerm, is_stoquastic

import _oracles as oracle

X, Z = PAULI["X"], PAULI["Z"]
FIXED = DeltaPolicy("fixed", value=1e4)
HOP = np.kron(RHO[1], RHO[2])


def hop_term(a, b, w=1.0, zz=0.3):
    return LocalTerm((a, b), -w * (HOP + HOP.T) - zz * np.kron(RHO[3], RHO[3]))


def hamiltonian_on(n, pairs, **kw):
    return Hamiltonian(n, [hop_term(a, b, **kw) for a, b in pairs])


# --------------------------------------------------------------------------
# rho-edge classes and parent-edge decomposition

def test_pattern_classes_cover_all_sixteen():
    assert len(PATTERNS) == 10
    assert sorted(len(c.member_patterns) for c in RHO_EDGE_CLASSES) == [1, 3, 3, 3]
    # every ordered pair maps to a class, and a pattern and its adjoint agree
    for a in range(4):
        for b in range(4):
            e = RhoEdge(0, 1, a, b, 1.0)
            assert edge_class(e) == edge_class(e.flipped())


def test_decompose_minus_xx_minus_half_zz():
    t = LocalTerm((0, 1), -np.kron(X, X) - 0.5 * np.kron(Z, Z))
    off, edges = decompose_parent_edge(t)
    assert len(edges) == 4
    rebuilt = off * np.eye(4) - sum(e.operator_block() for e in edges)
    assert np.abs(rebuilt - t.block).max() == 0


@given(st.integers(0, 10_000))
def test_decompose_reassembles_random_term(seed):
    rng = np.random.default_rng(seed)
    A = -np.abs(rng.standard_normal((4, 4))) * (rng.random((4, 4)) < 0.6)
    A = A + A.T
    A[np.diag_indices(4)] = rng.standard_normal(4)
    t = LocalTerm((2, 5), A)
    off, edges = decompose_parent_edge(t)
    assert off >= 0 and all(e.weight > 0 for e in edges)
    assert len(edges) <= 10
    rebuilt = off * np.eye(4) - sum((e.operator_block() for e in edges), np.zeros((4, 4)))
    assert np.abs(rebuilt - A).max() <= 1e-12


def test_decompose_errors():
    with pytest.raises(GeometryError):
        decompose_parent_edge(LocalTerm((0, 1), np.kron(X, Z)))
    with pytest.raises(GeometryError):
        decompose_parent_edge(LocalTerm((0,), Z))


# --------------------------------------------------------------------------
# exact segment tests

def _relation_oracle(a, b, c, d):
    """Parametric intersection of two closed segments with exact fractions."""
    a, b, c, d = [tuple(map(Fraction, p)) for p in (a, b, c, d)]
    r = (b[0] - a[0], b[1] - a[1])
    s = (d[0] - c[0], d[1] - c[1])
    den = r[0] * s[1] - r[1] * s[0]
    qp = (c[0] - a[0], c[1] - a[1])
    if den != 0:
        t = (qp[0] * s[1] - qp[1] * s[0]) / den
        u = (qp[0] * r[1] - qp[1] * r[0]) / den
        if 0 < t < 1 and 0 < u < 1:
            return "proper"
        if 0 <= t <= 1 and 0 <= u <= 1:
            return "touch"
        return None
    if qp[0] * r[1] - qp[1] * r[0] != 0:
        return None
    # collinear: compare projections on r
    rr = r[0] * r[0] + r[1] * r[1]
    t0 = (qp[0] * r[0] + qp[1] * r[1]) / rr
    t1 = t0 + (s[0] * r[0] + s[1] * r[1]) / rr
    lo, hi = min(t0, t1), max(t0, t1)
    return "touch" if hi >= 0 and lo <= 1 else None


pt = st.tuples(st.integers(-4, 4), st.integers(-4, 4))


@given(pt, pt, pt, pt)
def test_segment_relation_matches_parametric_oracle(a, b, c, d):
    if a == b or c == d:
        return
    assert segment_relation(a, b, c, d) == _relation_oracle(a, b, c, d)


def test_drawn_graph_crossings_and_sparsity():
    d = DrawnGraph({0: (0, 0), 1: (2, 2), 2: (0, 2), 3: (2, 0), 4: (1, 0)},
                   [(0, 1), (2, 3), (0, 3), (2, 4)])
    kinds = sorted(k for _, _, k in d.crossings())
    # the diagonals cross properly; 2-4 meets the diagonal 0-1 at (1,1)
    assert kinds.count("proper") == 2
    ok, viol = check_spatially_sparse(d, degree_cap=2, overlap_cap=1, length_cap=2)
    assert not ok
    assert {v[0] for v in viol} == {"overlap", "length"}
    assert check_spatially_sparse(d, 3, 3, 3)[0]


def test_shared_endpoint_overlap_is_touch():
    d = DrawnGraph({0: (0, 0), 1: (2, 0), 2: (4, 0)}, [(0, 1), (0, 2)])
    assert d.crossings() == [(0, 1, "touch")]


# --------------------------------------------------------------------------
# rho graphs

def test_rho_graph_roundtrip_dense():
    rng = np.random.default_rng(0)
    H = Hamiltonian(3, [hop_term(0, 1), hop_term(1, 2, 0.4), LocalTerm((2,), np.diag([0.3, -0.2]))],
                    offset=0.25)
    g = RhoGraph.from_hamiltonian(H, {0: (0, 0), 1: (1, 0), 2: (2, 1)})
    assert np.abs(oracle.dense(g.hamiltonian()) - oracle.dense(H)).max() <= 1e-14
    with pytest.raises(GeometryError):
        RhoGraph.from_hamiltonian(H, {0: (0, 0)})
    with pytest.raises(GeometryError):
        RhoGraph.from_hamiltonian(Hamiltonian(3, [LocalTerm((0, 1, 2), np.eye(8))]), {})


def star(n_leaves, radius=4):
    pts = [(0, 0)] + [(int(round(radius * np.cos(2 * np.pi * k / n_leaves))),
                       int(round(radius * np.sin(2 * np.pi * k / n_leaves)))) for k in range(n_leaves)]
    H = hamiltonian_on(n_leaves + 1, [(0, k) for k in range(1, n_leaves + 1)], zz=0.0)
    return H, dict(enumerate(pts))


def test_localise_moves_neighbours_to_mediators():
    H, pos = star(3)
    g0 = RhoGraph.from_hamiltonian(H, pos)
    g, apps = localise_vertex(g0, 0, FIXED)
    assert len(apps) == 3
    assert all(x in g.mediators for e in g.edges.values() if 0 in e.qubits for x in e.qubits if x != 0)
    single = RhoGraph.from_hamiltonian(hamiltonian_on(2, [(0, 1)], zz=0.0), {0: (0, 0), 1: (1, 0)})
    g1, apps1 = localise_vertex(single, 0)
    assert apps1 == []


def test_reduce_degree_star_certified():
    H, pos = star(5)
    g = RhoGraph.from_hamiltonian(H, pos).keep_snapshots()
    out = reduce_degree(g, cap=4, policy=DeltaPolicy("scaled", factor=1000))
    assert out.max_degree <= 4
    assert is_stoquastic(out.hamiltonian(), termwise=True)[0]
    assert not out.crossings()
    steps, comp, total = certify_rounds(out)
    assert len(steps) == len(out.rounds)
    assert total.epsilon <= comp.epsilon
    assert total.epsilon < 0.05


def test_fork_loop_and_illegal_loop():
    H = Hamiltonian(2, [LocalTerm((0, 1), -(HOP + HOP.T) - 0.6 * (np.kron(RHO[1], RHO[1]) + np.kron(RHO[2], RHO[2])))])
    g = RhoGraph.from_hamiltonian(H, {0: (0, 0), 1: (3, 0)})
    ids = sorted(g.edges)
    assert len(ids) == 2
    out, apps = fork_loop(g, ids, FIXED)
    assert out.degree(0) == 1 and out.degree(1) == 1
    assert is_stoquastic(out.hamiltonian(), termwise=True)[0]
    with pytest.raises(GeometryError, match="not a loop"):
        fork_loop(g, ids[:1], FIXED)
    bad = RhoGraph(2, {0: (0, 0), 1: (3, 0)}, [RhoEdge(0, 1, 1, 2, 1.0), RhoEdge(0, 1, 3, 3, 1.0)])
    with pytest.raises(GeometryError, match="fork illegal"):
        fork_loop(bad, sorted(bad.edges), FIXED)


def crossing_square(zz=0.0):
    # the two diagonals of a square cross once
    H = hamiltonian_on(4, [(0, 1), (2, 3), (0, 2), (1, 3)], zz=zz)
    pos = {0: (0, 0), 1: (4, 4), 2: (0, 4), 3: (4, 0)}
    return RhoGraph.from_hamiltonian(H, pos)


def test_reduce_crossings_single_crossing():
    g = crossing_square().keep_snapshots()
    assert len(g.crossings()) == 1
    out, history = reduce_crossings(g, DeltaPolicy("scaled", factor=100))
    assert history == [1, 0]
    assert out.crossings() == []
    assert [r.kind for r in out.rounds] == ["subdivide", "subdivide", "cross"]
    # each round simulates the previous graph plus its extra edges; the
    # cross round's extra edges stay, so only per-round errors are small
    steps, comp, total = certify_rounds(out, max_qubits=12)
    assert all(s.epsilon < 0.05 for s in steps)
    assert comp.epsilon >= sum(s.epsilon for s in steps)


def test_reduce_crossings_batches_shrink_fast():
    # k parallel horizontal edges crossing one vertical edge
    k = 8
    pairs = [(0, 1)] + [(2 + 2 * i, 3 + 2 * i) for i in range(k)]
    pos = {0: (0, -1), 1: (0, 2 * k)}
    for i in range(k):
        pos[2 + 2 * i] = (-3, 2 * i)
        pos[3 + 2 * i] = (3, 2 * i)
    g = RhoGraph.from_hamiltonian(hamiltonian_on(2 + 2 * k, pairs, zz=0.0), pos)
    out, history = reduce_crossings(g, FIXED)
    assert history[0] == k and history[-1] == 0
    assert len(history) <= 6
    assert all(a > b for a, b in zip(history, history[1:]))


def test_reduce_crossings_parallel_copies():
    # each diagonal carries two rho-edges drawn on the same segment
    g = crossing_square(zz=0.3)
    assert len(g.crossings()) == 4
    out, history = reduce_crossings(g, FIXED)
    assert history[-1] == 0
    assert out.crossings() == []
    assert is_stoquastic(out.hamiltonian(), termwise=True)[0]


def k5_graph():
    pairs = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 3), (0, 4), (4, 2), (1, 4)]
    pos = {q: (Fraction(q), Fraction(q * q)) for q in range(5)}
    return RhoGraph.from_hamiltonian(hamiltonian_on(5, pairs), pos)


def test_planarise_dense_graph():
    res = planarise(k5_graph(), cap=4, policy=FIXED)
    a = res.audit
    assert a["crossings_exact"] == 0 and a["crossings_drawing"] == 0 and a["planar"]
    assert a["max_degree"] <= 4 and a["stoquastic"]
    assert nx.check_planarity(res.graph.simple_graph())[0]
    assert res.drawing.is_integral()


def test_planarise_small_certificate():
    H, pos = star(5)
    res = planarise(RhoGraph.from_hamiltonian(H, pos), policy=DeltaPolicy("scaled", factor=1000))
    assert res.audit["qubits"] <= 12 and res.audit["planar"]
    assert res.certificate is not None
    assert res.certificate.epsilon < 0.05
    assert res.audit["epsilon"] == res.certificate.epsilon


def test_scaled_policy_overflow_is_reported():
    p = DeltaPolicy("scaled", factor=100, limit=1e10)
    with pytest.raises(GeometryError, match="fixed policy"):
        p.delta(1e5)
    with pytest.raises(GeometryError):
        DeltaPolicy("bogus").delta(1.0)
    assert FIXED.delta(1e9) == 1e4


# --------------------------------------------------------------------------
# lattice embedding

@pytest.mark.parametrize("lattice", [SQUARE, TRIANGULAR])
def test_embed_planarised_graph(lattice):
    res = planarise(k5_graph(), policy=FIXED)
    er = embed_lattice(res.graph, lattice, policy=FIXED)
    a = er.audit
    assert a["valid"], a["problems"][:3]
    assert a["stoquastic"]
    emb = er.embedding
    assert emb.audit() == []
    # every rho-edge of the subdivided graph joins adjacent lattice sites
    g = er.graph
    for e in g.edges.values():
        p, q = er.site_of_qubit[e.u], er.site_of_qubit[e.v]
        d = (q[0] - p[0], q[1] - p[1])
        allowed = {(1, 0), (-1, 0), (0, 1), (0, -1)}
        if lattice == TRIANGULAR:
            allowed |= {(-1, 1), (1, -1)}
        assert d in allowed
    # paths are pairwise edge-disjoint and internally vertex-disjoint
    used = set()
    for path in emb.path_of.values():
        for st_ in zip(path, path[1:]):
            key = frozenset(st_)
            assert key not in used
            used.add(key)


def test_embed_degree_six_needs_triangular():
    dirs = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)]
    pos = {0: (0, 0), **{k + 1: (3 * d[0], 3 * d[1]) for k, d in enumerate(dirs)}}
    g = RhoGraph.from_hamiltonian(hamiltonian_on(7, [(0, k) for k in range(1, 7)], zz=0.0), pos)
    with pytest.raises(GeometryError):
        embed_lattice(g, SQUARE, policy=FIXED)
    er = embed_lattice(g, TRIANGULAR, policy=FIXED)
    assert er.audit["method"] == "geometric"
    assert er.audit["valid"]


def test_embed_rejects_crossings():
    with pytest.raises(GeometryError):
        embed_lattice(crossing_square(), SQUARE, policy=FIXED)


def test_embedding_text_roundtrip_and_audit():
    res = planarise(crossing_square(), policy=FIXED)
    emb = embed_lattice(res.graph, SQUARE, policy=FIXED).embedding
    again = parse_embedding(format_embedding(emb))
    assert again.site_of == emb.site_of
    assert sorted(again.path_of.values()) == sorted(emb.path_of.values())
    assert again.audit() == []
    # two paths through one site are reported
    bad = LatticeEmbedding(SQUARE, {0: (0, 0), 1: (2, 0), 2: (1, -1), 3: (1, 1)},
                           {(0, 0, 1): [(0, 0), (1, 0), (2, 0)], (1, 2, 3): [(1, -1), (1, 0), (1, 1)]}, 1)
    assert any("share site" in p for p in bad.audit())
    with pytest.raises(GeometryError):
        parse_embedding("V 0 -> (0,0)\n")


# --------------------------------------------------------------------------
# fixtures from circuit layouts

def test_layout_fixture_is_stoquastic_and_sparse():
    rng = np.random.default_rng(4)
    c = random_circuit(RegisterLayout(1, 1, 1, 0), 3, rng, nearest_neighbour=True)
    sp, _ = to_spatially_sparse(c)
    d = layout_drawing(sp)
    assert check_spatially_sparse(d, degree_cap=8, overlap_cap=8, length_cap=3)[0]
    H, pos = layout_pair_hamiltonian(sp, seed=1)
    assert is_stoquastic(H, termwise=True)[0]
    g = RhoGraph.from_hamiltonian(H, pos)
    assert not [c for c in g.crossings() if c[2] == "touch"]
