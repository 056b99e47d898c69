"""Interaction-graph rewriting and lattice embedding.

A 2-local stoquastic Hamiltonian is held as a RhoGraph: vertices are qubits
with exact rational positions, edges are rho-edges (see gadgets.RhoEdge),
plus single-qubit fields and a constant. Every rewrite is a gadget
application, so the graph's Hamiltonian stays term-wise stoquastic.

Pipeline: decompose parent edges, localise and fork high-degree vertices,
remove crossings (subdivide, subdivide, cross), audit planarity, then route
each rho-edge along a lattice path realised by chained subdivisions.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import networkx as nx
import numpy as np

from .gadgets import (ADJOINT_MU, GadgetApplication, RhoEdge, compose_error, cross_gadget,
                      fork_compatible, fork_gadget, geo_subdivision, certify)
from .hamiltonian import Hamiltonian, LocalTerm, is_stoquastic

__all__ = [
    "GeometryError", "RhoEdgeClass", "RHO_EDGE_CLASSES", "PATTERNS", "canonical_pattern",
    "edge_class", "decompose_parent_edge", "DrawnGraph", "RhoGraph", "DeltaPolicy",
    "segment_relation", "check_spatially_sparse", "localise_vertex", "fork_loop",
    "reduce_degree", "reduce_crossings", "planarise", "PlanariseResult", "LatticeEmbedding",
    "EmbedResult", "embed_lattice", "layout_drawing", "layout_pair_hamiltonian",
    "format_embedding", "parse_embedding", "certify_rounds", "RoundRecord", "SQUARE", "TRIANGULAR",
]

SQUARE = "SQUARE"
TRIANGULAR = "TRIANGULAR"


class GeometryError(ValueError):
    pass


# --------------------------------------------------------------------------
# rho-edge patterns

def canonical_pattern(mu_u, mu_v):
    """Representative of {s, s^dag} for s = rho^mu_u rho^mu_v."""
    return min((mu_u, mu_v), (ADJOINT_MU[mu_u], ADJOINT_MU[mu_v]))


# the ten patterns in four groups, by the factor on the first vertex and,
# for off-diagonal first factors, whether the pair is a hop or a double flip
_GROUPS = {
    1: [(0, 0), (0, 3), (0, 1)],
    2: [(3, 0), (3, 3), (3, 1)],
    3: [(1, 0), (1, 2), (1, 3)],
    4: [(1, 1)],
}
PATTERNS = tuple(canonical_pattern(*p) for g in sorted(_GROUPS) for p in _GROUPS[g])
_CLASS_OF = {canonical_pattern(*p): g for g, ps in _GROUPS.items() for p in ps}


@dataclass(frozen=True)
class RhoEdgeClass:
    class_id: int
    member_patterns: tuple


RHO_EDGE_CLASSES = tuple(RhoEdgeClass(g, tuple(canonical_pattern(*p) for p in _GROUPS[g]))
                         for g in sorted(_GROUPS))


def edge_class(edge, at=None):
    """Class (1..4) of a rho-edge read with `at` (default edge.u) first."""
    e = edge if at is None else edge.oriented(at)
    return _CLASS_OF[canonical_pattern(e.mu_u, e.mu_v)]


def _compat_key(edge, v):
    """Edges with equal keys at v can be forked there."""
    mu = edge.mu_at(v)
    return "off" if mu in (1, 2) else mu


def decompose_parent_edge(term, tol=1e-12):
    """Split a stoquastic 2-local term into rho-edges.

    Returns (offset, edges) with term = offset * I - sum(edge operators).
    The offset is max(0, largest diagonal entry), so a term with a
    non-positive diagonal needs no shift.
    """
    if term.k != 2:
        raise GeometryError(f"parent edge must be 2-local, got support {term.support}")
    ok, w = is_stoquastic(term, tol)
    if not ok:
        raise GeometryError(f"term on {term.support} is not stoquastic: {w}")
    u, v = term.support
    B = np.real(term.block)
    scale = max(1.0, float(np.max(np.abs(B))))
    diag = np.diag(B)
    offset = max(0.0, float(np.max(diag)))
    edges = []
    for idx in range(4):
        h = offset - diag[idx]
        if h > tol * scale:
            a, b = idx >> 1, idx & 1
            edges.append(RhoEdge(u, v, 3 * a, 3 * b, float(h)))
    for r in range(4):
        for c in range(r + 1, 4):
            h = -B[r, c]
            if h > tol * scale:
                mu_u = 2 * (r >> 1) + (c >> 1)
                mu_v = 2 * (r & 1) + (c & 1)
                edges.append(RhoEdge(u, v, mu_u, mu_v, float(h)))
    return offset, edges


# --------------------------------------------------------------------------
# exact segment geometry

def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _sgn(x):
    return (x > 0) - (x < 0)


def _within(a, b, p):
    return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])


def segment_relation(a, b, c, d):
    """'proper' for an interior X-crossing, 'touch' for any other contact of
    the two closed segments, None if disjoint."""
    d1, d2 = _sgn(_cross(c, d, a)), _sgn(_cross(c, d, b))
    d3, d4 = _sgn(_cross(a, b, c)), _sgn(_cross(a, b, d))
    if d1 * d2 < 0 and d3 * d4 < 0:
        return "proper"
    if (d1 == 0 and _within(c, d, a)) or (d2 == 0 and _within(c, d, b)) \
            or (d3 == 0 and _within(a, b, c)) or (d4 == 0 and _within(a, b, d)):
        return "touch"
    return None


def _intersection(a, b, c, d):
    den = (b[0] - a[0]) * (d[1] - c[1]) - (b[1] - a[1]) * (d[0] - c[0])
    lam = Fraction((c[0] - a[0]) * (d[1] - c[1]) - (c[1] - a[1]) * (d[0] - c[0])) / den
    return lam, (a[0] + lam * (b[0] - a[0]), a[1] + lam * (b[1] - a[1]))


def _shared_overlap(p, a, b):
    """Segments p-a and p-b share p; True if they overlap beyond p."""
    return _cross(p, a, b) == 0 and ((a[0] - p[0]) * (b[0] - p[0]) + (a[1] - p[1]) * (b[1] - p[1])) > 0


# --------------------------------------------------------------------------
# drawings

@dataclass
class DrawnGraph:
    """Vertices at integer points and edges as straight segments (multi-edges allowed)."""
    vertices: dict
    edges: list
    labels: list = None

    def degree(self, v):
        return sum((a == v) + (b == v) for a, b in self.edges)

    def degrees(self):
        return {v: self.degree(v) for v in self.vertices}

    def crossings(self):
        """(i, j, kind) for every pair of edges whose segments meet other than
        at a shared endpoint; parallel copies of one segment are ignored."""
        out = []
        P = self.vertices
        seg = [(P[a], P[b]) for a, b in self.edges]
        box = [(min(p[0], q[0]), max(p[0], q[0]), min(p[1], q[1]), max(p[1], q[1])) for p, q in seg]
        for i, j in itertools.combinations(range(len(self.edges)), 2):
            (a, b), (c, d) = self.edges[i], self.edges[j]
            if {a, b} == {c, d}:
                continue
            bi, bj = box[i], box[j]
            if bi[1] < bj[0] or bj[1] < bi[0] or bi[3] < bj[2] or bj[3] < bi[2]:
                continue
            shared = {a, b} & {c, d}
            if shared:
                p = shared.pop()
                x = b if a == p else a
                y = d if c == p else c
                if _shared_overlap(P[p], P[x], P[y]):
                    out.append((i, j, "touch"))
                continue
            kind = segment_relation(P[a], P[b], P[c], P[d])
            if kind:
                out.append((i, j, kind))
        return out

    def edge_length2(self, i):
        a, b = self.edges[i]
        p, q = self.vertices[a], self.vertices[b]
        return (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2

    def is_integral(self):
        return all(isinstance(c, int) or (isinstance(c, Fraction) and c.denominator == 1)
                   for p in self.vertices.values() for c in p)


def check_spatially_sparse(graph, degree_cap, overlap_cap, length_cap):
    """True iff degrees, per-edge crossing counts and edge lengths are within caps.

    Returns (ok, violations) with violations as (kind, item, value) tuples.
    """
    viol = []
    for v, d in sorted(graph.degrees().items()):
        if d > degree_cap:
            viol.append(("degree", v, d))
    counts = [0] * len(graph.edges)
    for i, j, _ in graph.crossings():
        counts[i] += 1
        counts[j] += 1
    for i, c in enumerate(counts):
        if c > overlap_cap:
            viol.append(("overlap", tuple(graph.edges[i]), c))
    for i in range(len(graph.edges)):
        L2 = graph.edge_length2(i)
        if L2 > length_cap ** 2:
            viol.append(("length", tuple(graph.edges[i]), math.sqrt(L2)))
    return not viol, viol


# --------------------------------------------------------------------------
# rho-edge graphs

@dataclass
class DeltaPolicy:
    """Penalty strength per gadget round.

    'scaled': Delta = factor * scale^2 with scale the largest edge weight or
    field entry of the graph before the round. 'fixed': Delta = value for
    every round (structural runs; the simulation error is then not small).
    """
    mode: str = "scaled"
    factor: float = 100.0
    value: float = 1e4
    limit: float = 1e150

    def delta(self, scale, rounds_done=0):
        if self.mode == "fixed":
            return float(self.value)
        if self.mode != "scaled":
            raise GeometryError(f"unknown delta policy {self.mode!r}")
        d = self.factor * max(1.0, scale) ** 2
        if not math.isfinite(d) or d > self.limit:
            raise GeometryError(
                f"scaled Delta exceeds {self.limit:g} after {rounds_done} rounds; use a fixed policy")
        return d


@dataclass
class RoundRecord:
    kind: str
    delta: float
    count: int
    first_app: int = 0


class RhoGraph:
    """Rho-edges, single-qubit fields and a constant on positioned qubits."""

    def __init__(self, num_qubits, pos, edges=(), fields=None, offset=0.0, mediators=()):
        self.num_qubits = int(num_qubits)
        self.pos = {q: (Fraction(p[0]), Fraction(p[1])) for q, p in pos.items()}
        self.edges = {}
        self._next_id = 0
        for e in edges:
            self.add_edge(e)
        self.fields = {q: np.array(m, dtype=complex) for q, m in (fields or {}).items()}
        self.offset = float(offset)
        self.mediators = set(mediators)
        self.applications = []
        self.rounds = []
        self.snapshots = None

    def keep_snapshots(self):
        """Record the Hamiltonian after every gadget round from now on."""
        self.snapshots = [self.hamiltonian()]
        return self

    # construction ---------------------------------------------------------
    @classmethod
    def from_hamiltonian(cls, H, pos, tol=1e-12):
        if H.locality > 2:
            raise GeometryError(f"needs a 2-local Hamiltonian, got locality {H.locality}")
        Hm = H.merged()
        g = cls(H.num_qubits, pos, offset=Hm.offset)
        missing = [q for q in range(H.num_qubits) if q not in g.pos]
        if missing:
            raise GeometryError(f"no position for qubits {missing}")
        for t in Hm.terms:
            if t.k == 1:
                g.add_field(t.support[0], t.block)
            elif t.k == 2:
                off, edges = decompose_parent_edge(t, tol)
                g.offset += off
                for e in edges:
                    g.add_edge(e)
            else:
                g.offset += float(np.real(t.block[0, 0]))
        return g

    def copy(self):
        g = RhoGraph(self.num_qubits, self.pos, (), {q: m.copy() for q, m in self.fields.items()},
                     self.offset, self.mediators)
        g.edges = dict(self.edges)
        g._next_id = self._next_id
        g.applications = list(self.applications)
        g.rounds = list(self.rounds)
        g.snapshots = None if self.snapshots is None else list(self.snapshots)
        return g

    def add_edge(self, e):
        eid = self._next_id
        self.edges[eid] = e
        self._next_id += 1
        return eid

    def remove_edge(self, eid):
        return self.edges.pop(eid)

    def add_field(self, q, m):
        self.fields[q] = self.fields.get(q, 0) + np.asarray(m, dtype=complex)

    def add_vertex(self, p, mediator=True):
        q = self.num_qubits
        self.num_qubits += 1
        self.pos[q] = (Fraction(p[0]), Fraction(p[1]))
        if mediator:
            self.mediators.add(q)
        return q

    # queries ---------------------------------------------------------------
    def incident(self, v):
        return [i for i, e in sorted(self.edges.items()) if v in e.qubits]

    def degree(self, v):
        return sum(1 for e in self.edges.values() if v in e.qubits)

    def degrees(self):
        d = {q: 0 for q in range(self.num_qubits)}
        for e in self.edges.values():
            d[e.u] += 1
            d[e.v] += 1
        return d

    @property
    def max_degree(self):
        return max(self.degrees().values(), default=0)

    def scale(self):
        s = [e.weight for e in self.edges.values()]
        s += [float(np.max(np.abs(m))) for m in self.fields.values()]
        return max(s + [1.0])

    def hamiltonian(self):
        H = Hamiltonian(self.num_qubits, offset=self.offset)
        for _, e in sorted(self.edges.items()):
            H.add(e.term(-1.0))
        for q in sorted(self.fields):
            if np.any(self.fields[q]):
                H.add(LocalTerm((q,), self.fields[q]))
        return H

    def drawn(self, integral=True):
        """DrawnGraph of the current positions, scaled to integers if asked."""
        ids = sorted(self.edges)
        verts = dict(self.pos)
        if integral:
            den = 1
            for p in verts.values():
                den = math.lcm(den, p[0].denominator, p[1].denominator)
            verts = {q: (int(p[0] * den), int(p[1] * den)) for q, p in verts.items()}
        return DrawnGraph(verts, [self.edges[i].qubits for i in ids], ids)

    def crossings(self):
        """[(edge id, edge id, kind)] on the exact rational drawing."""
        d = self.drawn(integral=False)
        return [(d.labels[i], d.labels[j], k) for i, j, k in d.crossings()]

    def simple_graph(self):
        G = nx.Graph()
        G.add_nodes_from(range(self.num_qubits))
        G.add_edges_from(e.qubits for e in self.edges.values())
        return G


# --------------------------------------------------------------------------
# gadget moves on graphs

def _apply(graph, app, removed):
    for eid in removed:
        graph.remove_edge(eid)
    new = [graph.add_edge(e) for e in app.simulator_edges]
    for q, m in app.fields.items():
        graph.add_field(q, m)
    graph.applications.append(app)
    return new


def _subdivide(graph, eid, point, delta, first=None, place=True):
    """Subdivide edge `eid` with a new mediator at `point`. Returns (mediator,
    {endpoint: new edge id})."""
    e = graph.edges[eid]
    if first is not None:
        e = e.oriented(first)
    if place:
        point = _place(graph, point, [e.u, e.v], [eid])
    c = graph.add_vertex(point)
    _, app = geo_subdivision(e, None, delta, c, c + 1, build_system=False)
    new = _apply(graph, app, [eid])
    ends = {}
    for nid in new:
        ne = graph.edges[nid]
        ends[ne.other(c)] = nid
    return c, ends


def _lerp(p, q, t):
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def _perp_offset(p, q, k, eps):
    dx, dy = q[0] - p[0], q[1] - p[1]
    return (-dy * k * eps, dx * k * eps)


def _mediator_point(graph, v, x, t, slot):
    """Point at fraction t from v toward x, shifted sideways for parallel copies."""
    p, q = graph.pos[v], graph.pos[x]
    base = _lerp(p, q, t)
    k = (slot + 1) // 2 * (1 if slot % 2 else -1)
    off = _perp_offset(p, q, k, Fraction(1, 16))
    return (base[0] + off[0], base[1] + off[1])


def _touches(g, p, anchors, ignore):
    """True if a vertex at p with segments to `anchors` would meet an existing
    vertex or edge other than at shared endpoints (proper crossings allowed)."""
    if any(q == p for q in g.pos.values()):
        return True
    for eid, e in g.edges.items():
        if eid in ignore:
            continue
        a, b = g.pos[e.u], g.pos[e.v]
        if _cross(a, b, p) == 0 and _within(a, b, p):
            return True
        for x in anchors:
            px = g.pos[x]
            if x in e.qubits:
                y = g.pos[e.other(x)]
                if _shared_overlap(px, p, y):
                    return True
            elif segment_relation(p, px, a, b) == "touch":
                return True
    return False


def _place(g, p, anchors, ignore=(), ref=None):
    """p, or the nearest of a few small sideways shifts of it, such that the
    new vertex and its segments to `anchors` touch nothing."""
    ref = ref if ref is not None else g.pos[anchors[0]]
    dx, dy = p[0] - ref[0], p[1] - ref[1]
    if dx == 0 and dy == 0:
        dx = Fraction(1)
    ignore = set(ignore)
    for j in range(0, 40):
        k = (j + 1) // 2 * (1 if j % 2 else -1)
        t = Fraction(k, 53)
        q = (p[0] - dy * t, p[1] + dx * t)
        if not _touches(g, q, anchors, ignore):
            return q
    raise GeometryError(f"no free position near {tuple(map(float, p))}")


def _record(graph, kind, delta, count):
    if count:
        graph.rounds.append(RoundRecord(kind, delta, count, len(graph.applications) - count))
        if graph.snapshots is not None:
            graph.snapshots.append(graph.hamiltonian())


def certify_rounds(graph, max_qubits=12):
    """Certify each recorded round against the previous snapshot and chain
    the results. Returns (step certificates, Composition, end-to-end
    certificate)."""
    snaps = graph.snapshots
    if not snaps or len(snaps) < 2:
        raise GeometryError("no recorded rounds; call keep_snapshots() before rewriting")
    if snaps[-1].num_qubits > max_qubits:
        raise GeometryError(f"{snaps[-1].num_qubits} qubits exceeds certification limit {max_qubits}")
    certs, steps = [], []
    rounds = graph.rounds[-(len(snaps) - 1):]
    stops = [r.first_app for r in rounds[1:]] + [len(graph.applications)]
    for prev, cur, rnd, stop in zip(snaps, snaps[1:], rounds, stops):
        # a fork or cross round simulates the previous graph plus its E edges
        target = prev.copy()
        for app in graph.applications[rnd.first_app:stop]:
            for e in app.added_edges:
                target.add(e.term(-1.0))
        c = certify(target, cur, 2 ** prev.num_qubits)
        certs.append(c)
        norm = float(np.sum([np.linalg.norm(t.block, 2) for t in prev.terms]))
        steps.append((c.eta, c.epsilon, rnd.delta, norm))
    total = certify(snaps[0], snaps[-1], 2 ** snaps[0].num_qubits)
    return certs, compose_error(steps), total


def localise_vertex(graph, v, policy=None, t=Fraction(1, 3)):
    """Subdivide every rho-edge at v so that all of v's neighbours are mediators.

    Returns (new graph, applications). A vertex of degree <= 1 is a no-op.
    """
    policy = policy or DeltaPolicy()
    g = graph.copy()
    inc = g.incident(v)
    if len(inc) <= 1:
        return g, []
    delta = policy.delta(g.scale(), len(g.rounds))
    start = len(g.applications)
    slots = {}
    for eid in inc:
        x = g.edges[eid].other(v)
        s = slots.get(x, 0)
        slots[x] = s + 1
        _subdivide(g, eid, _mediator_point(g, v, x, t, s), delta, first=v)
    _record(g, "localise", delta, len(inc))
    return g, g.applications[start:]


def _fork_point(g, v, a, b):
    pv, pa, pb = g.pos[v], g.pos[a], g.pos[b]
    f = (pv[0] + (pa[0] + pb[0] - 2 * pv[0]) / 4, pv[1] + (pa[1] + pb[1] - 2 * pv[1]) / 4)
    if f == pv:
        f = (pv[0] + (pa[1] - pv[1]) / 4, pv[1] - (pa[0] - pv[0]) / 4)
    return f


def _fork_at(g, v, e1, e2, delta):
    """Fork the edges e1=(a, v) and e2=(v, b) at v; mediator between them."""
    E1, E2 = g.edges[e1], g.edges[e2]
    a, b = E1.other(v), E2.other(v)
    q = math.sqrt(E1.product_scale * E2.product_scale)
    f = g.add_vertex(_place(g, _fork_point(g, v, a, b), [a, b, v], [e1, e2], ref=g.pos[v]))
    _, app = fork_gadget(E1.oriented(a), E2.oriented(v), None, delta, f, f + 1, v,
                         q_scale=q, build_system=False)
    _apply(g, app, [e1, e2])
    return f


def _angle(g, v, x):
    p, q = g.pos[v], g.pos[x]
    return math.atan2(float(q[1] - p[1]), float(q[0] - p[0]))


def reduce_degree(graph, cap=4, policy=None, max_rounds=64):
    """Localise every vertex above `cap`, then fork like edges at it in
    parallel rounds until its rho-degree is at most `cap`.

    Edges are grouped by the rho-matrix they carry at the vertex (identity
    part, |1><1| part, or off-diagonal up to adjoint), so any two edges of a
    group are fork-compatible there.
    """
    policy = policy or DeltaPolicy()
    g = graph.copy()
    high = [v for v, d in sorted(g.degrees().items()) if d > cap]
    if not high:
        return g
    delta = policy.delta(g.scale(), len(g.rounds))
    done = set()
    n_sub = 0
    for v in high:
        slots = {}
        for eid in g.incident(v):
            if eid in done:
                continue
            x = g.edges[eid].other(v)
            s = slots.get(x, 0)
            slots[x] = s + 1
            _, ends = _subdivide(g, eid, _mediator_point(g, v, x, Fraction(1, 3), s), delta, first=v)
            done.update(ends.values())
            n_sub += 1
    _record(g, "localise", delta, n_sub)
    for _ in range(max_rounds):
        over = [v for v in high if g.degree(v) > cap]
        if not over:
            return g
        delta = policy.delta(g.scale(), len(g.rounds))
        n_fork = 0
        for v in over:
            need = g.degree(v) - cap
            groups = {}
            for eid in g.incident(v):
                groups.setdefault(_compat_key(g.edges[eid], v), []).append(eid)
            for key in sorted(groups, key=lambda k: (-len(groups[k]), str(k))):
                ids = sorted(groups[key], key=lambda i: _angle(g, v, g.edges[i].other(v)))
                while need > 0 and len(ids) >= 2:
                    e1, e2 = ids.pop(0), ids.pop(0)
                    if g.edges[e1].other(v) == g.edges[e2].other(v):
                        ids.append(e2)
                        e2 = ids.pop(0) if len(ids) > 1 else None
                        if e2 is None:
                            break
                    _fork_at(g, v, e1, e2, delta)
                    n_fork += 1
                    need -= 1
        if n_fork == 0:
            raise GeometryError("degree reduction stalled")
        _record(g, "fork", delta, n_fork)
    raise GeometryError("degree reduction did not finish")


def fork_loop(graph, loop_edges, policy=None):
    """Two parallel rho-edges between u and v: subdivide both, then fork the
    pair at u and the pair at v, lowering both degrees by one."""
    policy = policy or DeltaPolicy()
    if len(loop_edges) != 2:
        raise GeometryError("not a loop: need exactly two edges")
    g = graph.copy()
    e1, e2 = (g.edges[i] for i in loop_edges)
    if set(e1.qubits) != set(e2.qubits):
        raise GeometryError("not a loop: edges join different vertex pairs")
    u, v = sorted(e1.qubits)
    for end in (u, v):
        if _compat_key(e1, end) != _compat_key(e2, end):
            raise GeometryError(f"fork illegal: rho^{e1.mu_at(end)} and rho^{e2.mu_at(end)} meet at vertex {end}")
    start = len(g.applications)
    delta = policy.delta(g.scale(), len(g.rounds))
    _, ends1 = _subdivide(g, loop_edges[0], _mediator_point(g, u, v, Fraction(1, 2), 1), delta, first=u)
    _, ends2 = _subdivide(g, loop_edges[1], _mediator_point(g, u, v, Fraction(1, 2), 2), delta, first=u)
    _record(g, "subdivide", delta, 2)
    delta = policy.delta(g.scale(), len(g.rounds))
    _fork_at(g, u, ends1[u], ends2[u], delta)
    _fork_at(g, v, ends1[v], ends2[v], delta)
    _record(g, "fork", delta, 2)
    return g, g.applications[start:]


def _edge_params(g, eid, others):
    """Parameters along edge eid (from its u end) of proper crossings with `others`."""
    e = g.edges[eid]
    a, b = g.pos[e.u], g.pos[e.v]
    out = []
    for oid in others:
        o = g.edges[oid]
        lam, _ = _intersection(a, b, g.pos[o.u], g.pos[o.v])
        out.append(lam)
    return out


def _split_parallel(g, policy):
    """Bend apart parallel copies of a crossed segment.

    Copies sharing both endpoints are drawn on one segment, so a crossing
    gadget cannot tell them apart. All copies but the first get a mediator
    pushed sideways off the shared segment, making each copy its own path.
    """
    crossed = {i for c in g.crossings() for i in c[:2]}
    bundles = {}
    for eid in sorted(g.edges):
        bundles.setdefault(frozenset(g.edges[eid].qubits), []).append(eid)
    todo = [ids for ids in bundles.values() if len(ids) > 1 and crossed & set(ids)]
    if not todo:
        return
    delta = policy.delta(g.scale(), len(g.rounds))
    count = 0
    for ids in todo:
        u, v = sorted(g.edges[ids[0]].qubits)
        for slot, eid in enumerate(ids[1:], start=1):
            _subdivide(g, eid, _mediator_point(g, u, v, Fraction(1, 2), slot), delta, first=u)
            count += 1
    _record(g, "subdivide", delta, count)


def reduce_crossings(graph, policy=None, max_batches=64):
    """Remove proper crossings in batches of edge-disjoint crossings.

    Each crossing of edges u-v and w-s at X is localised by subdividing both
    edges just before X (a1, b1) and then just after X (a2, b2); the short
    edges a1-a2 and b1-b2 are merged by a cross gadget whose mediator sits
    at X. Crossings near the middle of their edges are taken first so the
    number of batches grows like the log of the crossings per edge.
    Returns (graph, batch crossing counts).
    """
    policy = policy or DeltaPolicy()
    g = graph.copy()
    _split_parallel(g, policy)
    history = []
    for _ in range(max_batches):
        crs = g.crossings()
        touches = [c for c in crs if c[2] != "proper"]
        if touches:
            raise GeometryError(f"degenerate contact between edges {touches[0][:2]}")
        history.append(len(crs))
        if not crs:
            return g, history
        per_edge = {}
        for i, j, _ in crs:
            per_edge.setdefault(i, []).append(j)
            per_edge.setdefault(j, []).append(i)
        params = {eid: sorted(zip(_edge_params(g, eid, nb), nb)) for eid, nb in per_edge.items()}

        def rank_cost(i, j):
            lst = [o for _, o in params[i]]
            k = lst.index(j)
            return abs(k - (len(lst) - 1) / 2)

        order = sorted(((rank_cost(i, j) + rank_cost(j, i), i, j) for i, j, _ in crs))
        used, batch = set(), []
        for _, i, j in order:
            if i not in used and j not in used:
                used.update((i, j))
                batch.append((i, j))
        # round A: subdivide both edges just before the crossing point
        delta = policy.delta(g.scale(), len(g.rounds))
        plan = []
        for i, j in batch:
            ei, ej = g.edges[i], g.edges[j]
            item = []
            for eid, e, other in ((i, ei, ej), (j, ej, ei)):
                a, b = g.pos[e.u], g.pos[e.v]
                lam, X = _intersection(a, b, g.pos[other.u], g.pos[other.v])
                lams = [l for l, _ in params[eid]] + [Fraction(0), Fraction(1)]
                gap = min(abs(l - lam) for l in lams if l != lam)
                dl = gap / 3
                item.append((eid, e.u, e.v, lam, dl, X))
            plan.append(item)
        firsts = []
        for item in plan:
            row = []
            for eid, u, v, lam, dl, X in item:
                a, b = g.pos[u], g.pos[v]
                c1, ends = _subdivide(g, eid, _lerp(a, b, lam - dl), delta, first=u, place=False)
                row.append((ends[v], c1, u, v, lam, dl, X))
            firsts.append(row)
        _record(g, "subdivide", delta, 2 * len(plan))
        # round B: subdivide the pieces containing X just after it
        delta = policy.delta(g.scale(), len(g.rounds))
        mids = []
        for row in firsts:
            pair = []
            for eid, c1, u, v, lam, dl, X in row:
                a, b = g.pos[u], g.pos[v]
                c2, ends = _subdivide(g, eid, _lerp(a, b, lam + dl), delta, first=c1, place=False)
                pair.append((ends[c1], X))
            mids.append(pair)
        _record(g, "subdivide", delta, 2 * len(mids))
        # round C: cross gadget at X
        delta = policy.delta(g.scale(), len(g.rounds))
        for (ea, X), (eb, _) in mids:
            c = g.add_vertex(X)
            _, app = cross_gadget(g.edges[ea], g.edges[eb], None, delta, c, c + 1, build_system=False)
            _apply(g, app, [ea, eb])
        _record(g, "cross", delta, len(mids))
        after = len(g.crossings())
        if after >= history[-1]:
            raise GeometryError("crossing count did not decrease")
    raise GeometryError("crossing removal did not finish")


# --------------------------------------------------------------------------
# planarisation

@dataclass
class PlanariseResult:
    graph: RhoGraph
    drawing: DrawnGraph
    crossing_history: list
    certificate: object = None
    audit: dict = field(default_factory=dict)

    @property
    def applications(self):
        return self.graph.applications


def _nx_drawing(graph):
    G = graph.simple_graph()
    ok, emb = nx.check_planarity(G)
    if not ok:
        raise GeometryError("graph is not planar")
    if G.number_of_nodes() < 3:
        pos = {v: (2 * i, 0) for i, v in enumerate(sorted(G.nodes))}
    else:
        pos = nx.combinatorial_embedding_to_pos(emb)
    verts = {v: (int(p[0]), int(p[1])) for v, p in pos.items()}
    ids = sorted(graph.edges)
    return DrawnGraph(verts, [graph.edges[i].qubits for i in ids], ids)


def planarise(graph, cap=4, policy=None, sparse_caps=None, certify_limit=12):
    """Degree reduction then crossing removal; returns a PlanariseResult.

    The exact rational drawing must end with zero crossings; planarity is
    then confirmed by networkx and an integer straight-line drawing of the
    result is computed from its planar embedding.
    """
    policy = policy or DeltaPolicy()
    if sparse_caps is not None:
        ok, viol = check_spatially_sparse(graph.drawn(), *sparse_caps)
        if not ok:
            raise GeometryError(f"input drawing is not spatially sparse: {viol[:3]}")
    original = graph
    g = reduce_degree(graph, cap, policy)
    g, history = reduce_crossings(g, policy)
    audit = {
        "crossings_exact": len(g.crossings()),
        "max_degree": g.max_degree,
        "stoquastic": is_stoquastic(g.hamiltonian(), termwise=True)[0],
        "rounds": len(g.rounds),
        "qubits": g.num_qubits,
    }
    if audit["max_degree"] > cap:
        raise GeometryError(f"degree {audit['max_degree']} above cap {cap}")
    drawing = _nx_drawing(g)
    audit["crossings_drawing"] = len(drawing.crossings())
    audit["planar"] = audit["crossings_exact"] == 0 and audit["crossings_drawing"] == 0
    cert = None
    if g.num_qubits <= certify_limit and policy.mode == "scaled":
        cert = certify(original.hamiltonian(), g.hamiltonian(), 2 ** original.num_qubits)
        audit["epsilon"] = cert.epsilon
    return PlanariseResult(g, drawing, history, cert, audit)


# --------------------------------------------------------------------------
# lattice embedding

_DIRS = {
    SQUARE: [(1, 0), (0, 1), (-1, 0), (0, -1)],
    TRIANGULAR: [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)],
}


def _cart(lattice, p):
    if lattice == TRIANGULAR:
        return (p[0] + p[1] / 2, p[1] * math.sqrt(3) / 2)
    return (float(p[0]), float(p[1]))


def _lattice_dist(lattice, a, b):
    dx, dy = b[0] - a[0], b[1] - a[1]
    if lattice == TRIANGULAR:
        return (abs(dx) + abs(dy) + abs(dx + dy)) // 2
    return abs(dx) + abs(dy)


def _adjacent(lattice, a, b):
    return (b[0] - a[0], b[1] - a[1]) in _DIRS[lattice]


@dataclass
class LatticeEmbedding:
    lattice: str
    site_of: dict
    path_of: dict
    scale: int

    def bound(self):
        return max((max(abs(x), abs(y)) for x, y in self.site_of.values()), default=0)

    def max_path_length(self):
        return max((len(p) - 1 for p in self.path_of.values()), default=0)

    def audit(self):
        """Problems found: sites shared, paths sharing lattice sites or edges,
        steps that are not lattice edges, endpoints not at their vertices."""
        probs = []
        sites = list(self.site_of.values())
        if len(set(sites)) != len(sites):
            probs.append("vertex sites not distinct")
        vsites = set(sites)
        seen_sites, seen_edges = {}, set()
        for key, path in sorted(self.path_of.items()):
            eid, u, v = key
            if path[0] != self.site_of[u] or path[-1] != self.site_of[v]:
                probs.append(f"path {key} endpoints mismatch")
            for a, b in zip(path, path[1:]):
                if not _adjacent(self.lattice, a, b):
                    probs.append(f"path {key} step {a}->{b} not a lattice edge")
                le = frozenset((a, b))
                if le in seen_edges:
                    probs.append(f"lattice edge {tuple(le)} used twice")
                seen_edges.add(le)
            for s in path[1:-1]:
                if s in vsites:
                    probs.append(f"path {key} passes through a vertex site {s}")
                if s in seen_sites:
                    probs.append(f"paths {seen_sites[s]} and {key} share site {s}")
                seen_sites[s] = key
        return probs


@dataclass
class EmbedResult:
    embedding: LatticeEmbedding
    graph: RhoGraph
    site_of_qubit: dict
    audit: dict = field(default_factory=dict)


def _assign_ports(lattice, v, site, others):
    """Map incident edges (eid, neighbour site) of v to distinct directions,
    keeping their cyclic order and minimising total angular deviation."""
    dirs = _DIRS[lattice]
    if len(others) > len(dirs):
        raise GeometryError(f"vertex {v} has degree {len(others)} > {len(dirs)}")
    if not others:
        return {}
    c0 = _cart(lattice, site)

    def ang(p):
        c = _cart(lattice, p)
        return math.atan2(c[1] - c0[1], c[0] - c0[0]) % (2 * math.pi)

    edges = sorted(others, key=lambda t: (round(ang(t[1]), 12), t[2]))
    dang = [math.atan2(*reversed(_cart(lattice, d))) % (2 * math.pi) for d in dirs]
    best = None
    for combo in itertools.combinations(range(len(dirs)), len(edges)):
        for r in range(len(edges)):
            cost = 0.0
            for k, (eid, p, _) in enumerate(edges):
                dd = dang[combo[(k + r) % len(edges)]]
                diff = abs(ang(p) - dd) % (2 * math.pi)
                cost += min(diff, 2 * math.pi - diff)
            key = (round(cost, 9), combo, r)
            if best is None or key < best[0]:
                best = (key, combo, r)
    _, combo, r = best
    return {eid: dirs[combo[(k + r) % len(edges)]] for k, (eid, _, _) in enumerate(edges)}


def _astar(lattice, start, goal, blocked, box):
    dirs = _DIRS[lattice]
    line = (goal[0] - start[0], goal[1] - start[1])
    cnt = itertools.count()
    openq = [(_lattice_dist(lattice, start, goal), 0, 0, next(cnt), start)]
    prev = {start: None}
    gbest = {start: 0}
    x0, x1, y0, y1 = box
    while openq:
        f, dev, gcost, _, cur = heapq.heappop(openq)
        if cur == goal:
            path = [cur]
            while prev[path[-1]] is not None:
                path.append(prev[path[-1]])
            return path[::-1]
        if gcost > gbest.get(cur, math.inf):
            continue
        for d in dirs:
            nxt = (cur[0] + d[0], cur[1] + d[1])
            if not (x0 <= nxt[0] <= x1 and y0 <= nxt[1] <= y1):
                continue
            if nxt in blocked and nxt != goal:
                continue
            ng = gcost + 1
            if ng < gbest.get(nxt, math.inf):
                gbest[nxt] = ng
                prev[nxt] = cur
                dv = abs(line[0] * (nxt[1] - start[1]) - line[1] * (nxt[0] - start[0]))
                heapq.heappush(openq, (ng + _lattice_dist(lattice, nxt, goal), dv, ng, next(cnt), nxt))
    return None


def _route_all(lattice, drawing, scale):
    site = {v: (p[0] * scale, p[1] * scale) for v, p in drawing.vertices.items()}
    inc = {}
    for k, (a, b) in enumerate(drawing.edges):
        inc.setdefault(a, []).append((k, site[b], k if a < b else -k))
        inc.setdefault(b, []).append((k, site[a], k if b < a else -k))
    port = {}
    for v, lst in inc.items():
        for k, d in _assign_ports(lattice, v, site[v], lst).items():
            port[(k, v)] = (site[v][0] + d[0], site[v][1] + d[1])
    reserved = set(port.values())
    if len(reserved) != len(port):
        raise GeometryError("port sites collide; refine the grid")
    blocked = set(site.values()) | reserved
    xs = [s[0] for s in site.values()]
    ys = [s[1] for s in site.values()]
    outer = (min(xs) - 2 * scale, max(xs) + 2 * scale, min(ys) - 2 * scale, max(ys) + 2 * scale)
    paths = {}
    for k, (a, b) in enumerate(drawing.edges):
        pa, pb = port[(k, a)], port[(k, b)]
        blk = blocked - {pa, pb}
        m = 2 * scale + 2
        box = (min(pa[0], pb[0]) - m, max(pa[0], pb[0]) + m, min(pa[1], pb[1]) - m, max(pa[1], pb[1]) + m)
        path = _astar(lattice, pa, pb, blk, box) or _astar(lattice, pa, pb, blk, outer)
        if path is None:
            return None, site
        full = [site[a]] + path + [site[b]]
        paths[k] = full
        blocked.update(path)
    return paths, site


class _Ortho:
    """Upward orthogonal grid drawing of a plane graph with max degree 4.

    Every rho-edge is subdivided once by a dummy vertex, the graph is made
    biconnected with dummy connectors (never raising a degree above 4), an
    outer edge is subdivided twice to give the poles s and t, and vertices
    are swept in st-order: each vertex gets its own row, each edge that is
    still open gets its own column, and incoming/outgoing edges attach
    through the four grid ports.
    """

    def __init__(self, graph):
        self.graph = graph
        self.G = nx.Graph()
        self.G.add_nodes_from(range(graph.num_qubits))
        self.chains = {}
        self.owner = {}
        self._fresh = itertools.count()
        for eid, e in sorted(graph.edges.items()):
            d = self._new()
            self.G.add_edge(e.u, d)
            self.G.add_edge(d, e.v)
            self.chains[eid] = [e.u, d, e.v]
            self.owner[frozenset((e.u, d))] = eid
            self.owner[frozenset((d, e.v))] = eid
        ok, self.emb = nx.check_planarity(self.G)
        if not ok:
            raise GeometryError("graph is not planar")
        if max((d for _, d in self.G.degree), default=0) > 4:
            raise GeometryError("orthogonal routing needs rho-degree <= 4")

    def _new(self):
        return ("d", next(self._fresh))

    # embedding edits ---------------------------------------------------------
    def _subdivide(self, x, y):
        z = self._new()
        E = self.emb
        E.add_half_edge(x, z, cw=y)
        E.add_half_edge(y, z, cw=x)
        E.remove_edge(x, y)
        E.add_half_edge(z, x)
        E.add_half_edge(z, y, cw=x)
        self.G.remove_edge(x, y)
        self.G.add_edge(x, z)
        self.G.add_edge(z, y)
        eid = self.owner.pop(frozenset((x, y)), None)
        if eid is not None:
            ch = self.chains[eid]
            for i in range(len(ch) - 1):
                if {ch[i], ch[i + 1]} == {x, y}:
                    ch.insert(i + 1, z)
                    break
            self.owner[frozenset((x, z))] = eid
            self.owner[frozenset((z, y))] = eid
        return z

    def _connect(self, a, c_a, b, c_b):
        """Add a-b next to a's edge toward c_a and b's edge toward c_b."""
        E = self.emb
        for sa, sb in (("cw", "ccw"), ("ccw", "cw"), ("cw", "cw"), ("ccw", "ccw")):
            E.add_half_edge(a, b, **{sa: c_a})
            E.add_half_edge(b, a, **{sb: c_b})
            try:
                E.check_structure()
                self.G.add_edge(a, b)
                return
            except nx.NetworkXException:
                E.remove_edge(a, b)
        raise GeometryError("could not add a planar connector")

    def _endpoint_cost(self, c, p, bridges):
        if self.G.degree(p) < 4:
            return 0
        return 10 if frozenset((c, p)) in bridges else 1

    def _biconnect(self, nodes, max_steps=100000):
        """Add dummy connectors until the component is biconnected, keeping
        every degree at most 4 (a saturated endpoint is replaced by a fresh
        dummy on its edge to the cut vertex)."""
        for _ in range(max_steps):
            H = self.G.subgraph(nodes)
            cuts = set(nx.articulation_points(H))
            if not cuts:
                return
            bridges = {frozenset(e) for e in nx.bridges(H)}
            block_of = {}
            for k, comp in enumerate(nx.biconnected_component_edges(H)):
                for x, y in comp:
                    block_of[frozenset((x, y))] = k
            best = None
            for c in sorted(cuts, key=str):
                rot = list(self.emb.neighbors_cw_order(c))
                for i, p in enumerate(rot):
                    q = rot[(i + 1) % len(rot)]
                    if block_of[frozenset((c, p))] == block_of[frozenset((c, q))]:
                        continue
                    cost = self._endpoint_cost(c, p, bridges) + self._endpoint_cost(c, q, bridges)
                    if best is None or cost < best[0]:
                        best = (cost, c, p, q)
                if best is not None and best[0] == 0:
                    break
            _, c, p, q = best
            a = p if self._endpoint_cost(c, p, bridges) == 0 else self._subdivide(c, p)
            b = q if self._endpoint_cost(c, q, bridges) == 0 else self._subdivide(c, q)
            nodes = set(nodes) | {a, b}
            if self.G.has_edge(a, b):
                raise GeometryError("connector would duplicate an edge")
            self._connect(a, c, b, c)
        raise GeometryError("biconnection did not finish")

    # st-order -----------------------------------------------------------------
    def _st_order(self, nodes, s, t):
        H = self.G.subgraph(nodes)
        pre, parent, low, order = {s: 0}, {s: None}, {}, [s]
        stack = [(s, iter([t] + [w for w in H[s] if w != t]))]
        while stack:
            v, it = stack[-1]
            advanced = False
            for w in it:
                if w not in pre:
                    pre[w] = len(order)
                    order.append(w)
                    parent[w] = v
                    stack.append((w, iter(sorted(H[w], key=str))))
                    advanced = True
                    break
            if not advanced:
                stack.pop()
                lv = v
                for w in H[v]:
                    if parent.get(w) == v:
                        cand = low[w]
                    elif w != parent[v] and pre[w] < pre[v]:
                        cand = w
                    else:
                        continue
                    if pre[cand] < pre[lv]:
                        lv = cand
                low[v] = lv
        if order[1] != t:
            raise GeometryError("st-order: t is not the first child of s")
        nxt, prv = {s: t, t: None}, {s: None, t: s}
        sign = {s: -1}
        for v in order[2:]:
            p = parent[v]
            if sign[low[v]] == -1:
                a = prv[p]
                prv[v], nxt[v] = a, p
                prv[p] = v
                if a is not None:
                    nxt[a] = v
                sign[p] = 1
            else:
                b = nxt[p]
                prv[v], nxt[v] = p, b
                nxt[p] = v
                if b is not None:
                    prv[b] = v
                sign[p] = -1
        seq, v = [], s
        while v is not None:
            seq.append(v)
            v = nxt[v]
        num = {v: i for i, v in enumerate(seq)}
        for v in seq[1:-1]:
            ranks = [num[w] for w in H[v]]
            if not (min(ranks) < num[v] < max(ranks)):
                raise GeometryError("st-order check failed")
        return seq, num

    # sweep --------------------------------------------------------------------
    def _sweep(self, seq, num, mirror):
        cols = []               # open columns: [edge (a, b), x]
        vx, colx, port = {}, {}, {}
        for y, v in enumerate(seq):
            rot = list(self.emb.neighbors_cw_order(v))
            if mirror:
                rot = rot[::-1]
            ins = [w for w in rot if num[w] < num[v]]
            if not ins:
                start = rot.index(seq[-1]) if seq[-1] in rot else 0
                outs = rot[start:] + rot[:start]
                inl = []
            else:
                m = len(rot)
                start = next((i for i in range(m) if num[rot[i]] > num[v] and num[rot[i - 1]] < num[v]), None)
                if start is None:
                    outs = []
                    inl = [w for w in (c[0][0] for c in cols) if w in ins]
                else:
                    cyc = rot[start:] + rot[:start]
                    outs = [w for w in cyc if num[w] > num[v]]
                    inl = [w for w in cyc if num[w] < num[v]][::-1]
                    if cyc[:len(outs)] != outs:
                        return None
            i, o = len(inl), len(outs)
            in_ports = {0: [], 1: ["D"], 2: ["L", "D"], 3: ["L", "D", "R"]}.get(i)
            out_ports = {0: [], 1: ["U"], 2: ["U", "R"] if i < 3 else None, 3: ["L", "U", "R"]}.get(o)
            if in_ports is None or out_ports is None or (i == 2 and o == 3):
                return None
            if i:
                idx = [k for k, c in enumerate(cols) if c[0][1] == v]
                if len(idx) != i or idx != list(range(idx[0], idx[0] + i)):
                    return None
                if [cols[k][0][0] for k in idx] != inl:
                    return None
                for w, pt in zip(inl, in_ports):
                    port[(w, v)] = pt
                dpos = idx[in_ports.index("D")]
                vx[v] = cols[dpos][1]
                left = cols[idx[0] - 1][1] if idx[0] > 0 else None
                right = cols[idx[-1] + 1][1] if idx[-1] + 1 < len(cols) else None
                at = idx[0]
                del cols[idx[0]:idx[-1] + 1]
            else:
                vx[v] = Fraction(0)
                left = right = None
                at = 0
            new = []
            for w, pt in zip(outs, out_ports):
                if pt == "U":
                    x = vx[v]
                elif pt == "R":
                    x = (vx[v] + right) / 2 if right is not None else vx[v] + 1
                else:
                    x = (vx[v] + left) / 2 if left is not None else vx[v] - 1
                port[(v, w)] = pt
                colx[(v, w)] = x
                new.append([(v, w), x])
            cols[at:at] = new
        if cols:
            return None
        return vx, colx

    def run(self):
        comps = sorted((sorted(c, key=str) for c in nx.connected_components(self.G)), key=lambda c: str(c[0]))
        placed = {}
        xoff = 0
        for comp in comps:
            if len(comp) == 1:
                placed[comp[0]] = (xoff, 0)
                xoff += 2
                continue
            nodes = set(comp)
            self._biconnect(nodes)
            nodes = set(nx.node_connected_component(self.G, comp[0]))
            x0, y0 = sorted(((x, y) for x, y in self.G.subgraph(nodes).edges), key=str)[0]
            s = self._subdivide(x0, y0)
            t = self._subdivide(s, y0)
            nodes |= {s, t}
            seq, num = self._st_order(nodes, s, t)
            res = self._sweep(seq, num, False) or self._sweep(seq, num, True)
            if res is None:
                raise GeometryError("orthogonal sweep failed in both orientations")
            vx, colx = res
            xs = sorted(set(vx.values()) | set(colx.values()))
            rank = {x: k for k, x in enumerate(xs)}
            for v in nodes:
                placed[v] = (xoff + rank[vx[v]], num[v])
            self._colx = getattr(self, "_colx", {})
            for e, x in colx.items():
                self._colx[e] = xoff + rank[x]
            self._num = getattr(self, "_num", {})
            self._num.update(num)
            xoff += len(xs) + 1
        self.placed = placed
        return placed

    def segment_path(self, a, b):
        """Grid points from a to b along their orthogonal route."""
        lo, hi = (a, b) if self._num[a] < self._num[b] else (b, a)
        xc = self._colx[(lo, hi)]
        (xa, ya), (xb, yb) = self.placed[lo], self.placed[hi]
        pts = [(xa, ya), (xc, ya), (xc, yb), (xb, yb)]
        out = [pts[0]]
        for p in pts[1:]:
            while out[-1] != p:
                cx, cy = out[-1]
                out.append((cx + _sgn(p[0] - cx), cy) if cx != p[0] else (cx, cy + _sgn(p[1] - cy)))
        return out if lo == a else out[::-1]

    def routes(self, spacing=1):
        self.run()
        paths = {}
        for eid, ch in self.chains.items():
            pts = [self.placed[ch[0]]]
            for a, b in zip(ch, ch[1:]):
                pts.extend(self.segment_path(a, b)[1:])
            if spacing > 1:
                fine = [(pts[0][0] * spacing, pts[0][1] * spacing)]
                for p in pts[1:]:
                    q = (p[0] * spacing, p[1] * spacing)
                    while fine[-1] != q:
                        cx, cy = fine[-1]
                        fine.append((cx + _sgn(q[0] - cx), cy + _sgn(q[1] - cy)))
                pts = fine
            paths[eid] = pts
        site = {q: (self.placed[q][0] * spacing, self.placed[q][1] * spacing)
                for q in range(self.graph.num_qubits)}
        return site, paths


def _geometric_routes(graph, lattice, drawing, scale, refine, max_attempts):
    """A* routing along a straight-line drawing; needed for degree 5 and 6.

    Without an explicit drawing the graph's own positions are tried first
    (read as lattice coordinates), then a networkx planar drawing.
    """
    if drawing is not None:
        candidates = [drawing]
    else:
        own = graph.drawn()
        candidates = ([own] if not own.crossings() else []) + [_nx_drawing(graph)]
    for drawing in candidates:
        if drawing.crossings():
            raise GeometryError("drawing has crossings")
        s = scale
        paths = None
        for _ in range(max_attempts):
            try:
                paths, site = _route_all(lattice, drawing, s)
            except GeometryError:
                paths = None
            if paths is not None:
                break
            s *= refine
        if paths is not None:
            break
    else:
        raise GeometryError("lattice routing failed at every refinement; the drawing's angular "
                            "separation is too small")
    labels = drawing.labels if drawing.labels is not None else sorted(graph.edges)
    out = {}
    for k, (a, b) in enumerate(drawing.edges):
        eid = labels[k]
        out[eid] = paths[k] if graph.edges[eid].u == a else paths[k][::-1]
    return site, out, s


def embed_lattice(graph, lattice=SQUARE, drawing=None, policy=None, scale=None, refine=4,
                  max_attempts=3, method="auto"):
    """Route every rho-edge of a planar graph along a lattice path and
    realise each path by chained subdivisions (halving rounds).

    method 'orthogonal' (default for rho-degree <= 4) draws the graph on the
    square grid from an st-ordering; it works for both lattices since the
    square grid's steps are also triangular-lattice steps. method
    'geometric' routes along a straight-line drawing and is used for
    degree 5 and 6 on the triangular lattice; it refines the grid by
    `refine` up to `max_attempts` times.

    Returns an EmbedResult whose graph lives on lattice sites: every
    rho-edge joins adjacent sites.
    """
    lattice = lattice.upper()
    if lattice not in _DIRS:
        raise GeometryError(f"unknown lattice {lattice!r}")
    policy = policy or DeltaPolicy()
    deg = graph.max_degree
    cap = len(_DIRS[lattice])
    if deg > cap:
        raise GeometryError(f"degree {deg} cannot be embedded in the {lattice.lower()} lattice")
    if method == "auto":
        method = "orthogonal" if deg <= 4 else "geometric"
    if method == "orthogonal":
        if deg > 4:
            raise GeometryError("orthogonal routing needs rho-degree <= 4")
        if graph.crossings():
            raise GeometryError("graph drawing has crossings; planarise first")
        s = scale or 1
        site, paths = _Ortho(graph).routes(s)
    elif method == "geometric":
        site, paths, s = _geometric_routes(graph, lattice, drawing, scale or 4, refine, max_attempts)
    else:
        raise GeometryError(f"unknown routing method {method!r}")
    emb = LatticeEmbedding(lattice, dict(site),
                           {(eid, graph.edges[eid].u, graph.edges[eid].v): p for eid, p in sorted(paths.items())},
                           s)
    # chained subdivisions, all pieces halved in parallel each round
    g = graph.copy()
    for v, st in site.items():
        g.pos[v] = (Fraction(st[0]), Fraction(st[1]))
    pieces = [(eid, path, 0, len(path) - 1) for eid, path in sorted(paths.items())]
    site_q = {st: v for v, st in site.items()}
    while any(j - i >= 2 for _, _, i, j in pieces):
        delta = policy.delta(g.scale(), len(g.rounds))
        nxt, count = [], 0
        for eid, path, i, j in pieces:
            if j - i < 2:
                nxt.append((eid, path, i, j))
                continue
            m = (i + j) // 2
            first = site_q[path[i]]
            c, ends = _subdivide(g, eid, path[m], delta, first=first, place=False)
            site_q[path[m]] = c
            nxt.append((ends[first], path, i, m))
            nxt.append((ends[site_q[path[j]]], path, m, j))
            count += 1
        _record(g, "path-subdivide", delta, count)
        pieces = nxt
    site_of_qubit = {q: (int(p[0]), int(p[1])) for q, p in g.pos.items()}
    bad = [e.qubits for e in g.edges.values()
           if not _adjacent(lattice, site_of_qubit[e.u], site_of_qubit[e.v])]
    audit = {
        "method": method,
        "problems": emb.audit(),
        "non_lattice_edges": len(bad),
        "stoquastic": is_stoquastic(g.hamiltonian(), termwise=True)[0],
        "bound": emb.bound(),
        "max_path_length": emb.max_path_length(),
        "scale": s,
        "qubits": g.num_qubits,
        "distinct_sites": len(set(site_of_qubit.values())) == len(site_of_qubit),
    }
    audit["valid"] = (not audit["problems"] and audit["non_lattice_edges"] == 0
                      and audit["distinct_sites"])
    return EmbedResult(emb, g, site_of_qubit, audit)


# --------------------------------------------------------------------------
# fixtures from circuit layouts

def layout_drawing(circuit):
    """DrawnGraph of a spatially sparse circuit: qubit (row r, column q) at
    (q, r); an edge for every pair of qubits acting together in a gate."""
    if circuit.sparse is None:
        raise GeometryError("circuit has no spatially sparse layout")
    M = circuit.sparse.cols
    verts = {q: (q % M, q // M) for q in range(circuit.num_qubits)}
    pairs = set()
    for g in circuit.gates:
        for a, b in itertools.combinations(sorted(g.qubits), 2):
            pairs.add((a, b))
    return DrawnGraph(verts, sorted(pairs))


def layout_pair_hamiltonian(circuit, seed=0):
    """A 2-local stoquastic Hamiltonian on the interaction pairs of a sparse
    circuit layout, with random hopping, flip and diagonal couplings.

    Positions get a small deterministic zig-zag so that no vertex lies on an
    edge it does not belong to. Returns (H, positions).
    """
    rng = np.random.default_rng(seed)
    d = layout_drawing(circuit)
    pos = {q: (Fraction(x) + Fraction((y % 2) * (x % 3), 7), Fraction(y) + Fraction(x % 2, 5))
           for q, (x, y) in d.vertices.items()}
    H = Hamiltonian(circuit.num_qubits)
    from .hamiltonian import RHO
    for a, b in d.edges:
        hop = np.kron(RHO[1], RHO[2])
        flip = np.kron(RHO[1], RHO[1])
        blk = -rng.uniform(0.5, 1.5) * (hop + hop.T)
        if rng.random() < 0.5:
            blk = blk - rng.uniform(0.5, 1.5) * (flip + flip.T)
        blk = blk - rng.uniform(0.1, 1.0) * np.kron(RHO[3], RHO[3])
        H.add(LocalTerm((a, b), blk))
    return H, pos


# --------------------------------------------------------------------------
# text format

def format_embedding(emb):
    lines = [f"lattice {emb.lattice.lower()}"]
    for v in sorted(emb.site_of):
        x, y = emb.site_of[v]
        lines.append(f"V {v} -> ({x},{y})")
    for key in sorted(emb.path_of):
        _, u, v = key
        pts = "".join(f"({x},{y})" for x, y in emb.path_of[key])
        lines.append(f"E {u},{v} -> {pts}")
    return "\n".join(lines) + "\n"


def parse_embedding(text):
    import re
    lattice, site, paths = None, {}, {}
    k = 0
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("lattice"):
            lattice = line.split()[1].upper()
        elif line.startswith("V "):
            m = re.fullmatch(r"V\s+(\d+)\s*->\s*\((-?\d+),(-?\d+)\)", line)
            if not m:
                raise GeometryError(f"bad vertex line {raw!r}")
            site[int(m.group(1))] = (int(m.group(2)), int(m.group(3)))
        elif line.startswith("E "):
            m = re.fullmatch(r"E\s+(\d+),(\d+)\s*->\s*((?:\(-?\d+,-?\d+\))+)", line)
            if not m:
                raise GeometryError(f"bad edge line {raw!r}")
            pts = [(int(x), int(y)) for x, y in re.findall(r"\((-?\d+),(-?\d+)\)", m.group(3))]
            paths[(k, int(m.group(1)), int(m.group(2)))] = pts
            k += 1
        else:
            raise GeometryError(f"unrecognised line {raw!r}")
    if lattice not in _DIRS:
        raise GeometryError("missing or unknown lattice line")
    return LatticeEmbedding(lattice, site, paths, 1)
