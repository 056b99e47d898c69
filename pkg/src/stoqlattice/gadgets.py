"""Stoquastic perturbative gadgets and their effective Hamiltonians.

A gadget adds mediator qubits with a diagonal penalty whose ground space is
the "low" subspace, and couples them to the system through

    H_sim = penalty + Delta^p * V_main + V_extra,    p = 1/2 or 2/3.

The effective Hamiltonian on the low subspace is computed here by the
Schrieffer-Wolff series (second and third order) and compared against the
closed forms each gadget is designed to produce.

Conventions: S+ = |1><0| (raises a mediator), S- = |0><1|, and a rho-edge
with weight w stands for the operator w (s + s^dag), or w s when the rho
string s is self-adjoint; its contribution to a Hamiltonian is minus that.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .hamiltonian import (ADJOINT_MU, RHO, Hamiltonian, LocalTerm, is_stoquastic,
                          kron_all, spectrum, term_rho_strings)

__all__ = [
    "GadgetError", "RhoEdge", "RhoFactor", "edge_from_product", "PerturbedSystem",
    "GadgetApplication", "EffectiveHamiltonian", "SimulationCertificate",
    "Composition", "schrieffer_wolff_2", "schrieffer_wolff_3", "klocal_subdivision",
    "reduce_locality", "geo_subdivision", "cross_gadget", "fork_gadget",
    "triangle_gadget", "three_to_two", "apply_parallel", "compose_error", "certify",
    "closed_form", "default_delta", "fork_compatible", "delta_sweep",
    "KLOCAL_SUBDIVISION", "GEO_SUBDIVISION", "CROSS", "FORK", "TRIANGLE", "THREE_TO_TWO",
]

KLOCAL_SUBDIVISION = "KLOCAL_SUBDIVISION"
GEO_SUBDIVISION = "GEO_SUBDIVISION"
CROSS = "CROSS"
FORK = "FORK"
TRIANGLE = "TRIANGLE"
THREE_TO_TWO = "THREE_TO_TWO"

S_PLUS = RHO[2]
S_MINUS = RHO[1]
PROJ1 = RHO[3]
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Z = np.diag([1.0, -1.0]).astype(complex)


class GadgetError(ValueError):
    pass


def _is_diag_mu(mu):
    return mu in (0, 3)


@dataclass(frozen=True)
class RhoEdge:
    """weight * (rho^mu_u (x) rho^mu_v + h.c.), or weight * rho rho when self-adjoint."""
    u: int
    v: int
    mu_u: int
    mu_v: int
    weight: float

    def __post_init__(self):
        if self.u == self.v:
            raise GadgetError("a rho-edge needs two distinct qubits")
        if self.mu_u not in range(4) or self.mu_v not in range(4):
            raise GadgetError("rho indices must be in 0..3")
        if self.weight < 0:
            raise GadgetError("rho-edge weights are non-negative")

    @property
    def self_adjoint(self):
        return _is_diag_mu(self.mu_u) and _is_diag_mu(self.mu_v)

    @property
    def qubits(self):
        return (self.u, self.v)

    def mu_at(self, q):
        if q == self.u:
            return self.mu_u
        if q == self.v:
            return self.mu_v
        raise GadgetError(f"qubit {q} not on edge {self.u}-{self.v}")

    def other(self, q):
        return self.v if q == self.u else self.u

    def flipped(self):
        """Same operator written with the adjoint string."""
        return RhoEdge(self.u, self.v, ADJOINT_MU[self.mu_u], ADJOINT_MU[self.mu_v], self.weight)

    def oriented(self, u):
        """Same operator with `u` listed first."""
        if u == self.u:
            return self
        return RhoEdge(self.v, self.u, self.mu_v, self.mu_u, self.weight)

    @property
    def product_scale(self):
        """Scale of P_u P_v in the form P_u P_v + P_u^dag P_v^dag."""
        return self.weight / 2 if self.self_adjoint else self.weight

    def operator_block(self):
        s = np.kron(RHO[self.mu_u], RHO[self.mu_v])
        if self.self_adjoint:
            return self.weight * s
        return self.weight * (s + s.conj().T)

    def term(self, sign=-1.0):
        """LocalTerm of sign * operator (the Hamiltonian contribution is sign=-1)."""
        return LocalTerm((self.u, self.v), sign * self.operator_block())

    def relabel(self, mapping):
        return RhoEdge(mapping[self.u], mapping[self.v], self.mu_u, self.mu_v, self.weight)


def edge_from_product(q1, mu1, q2, mu2, coeff):
    """RhoEdge equal to coeff * (s + s^dag) for s = rho^mu1_q1 rho^mu2_q2."""
    e = RhoEdge(q1, q2, mu1, mu2, coeff)
    return RhoEdge(q1, q2, mu1, mu2, 2 * coeff) if e.self_adjoint else e


@dataclass(frozen=True)
class RhoFactor:
    qubit: int
    mu: int
    scale: float

    def adjoint(self):
        return RhoFactor(self.qubit, ADJOINT_MU[self.mu], self.scale)

    def matrix(self):
        return self.scale * RHO[self.mu]


def edge_factors(edge, v_scale=None):
    """Split an edge into (P_u, P_v) with P_u P_v + h.c. equal to the edge.

    The split is balanced unless the scale of the v-factor is prescribed.
    """
    p = edge.product_scale
    b = math.sqrt(p) if v_scale is None else v_scale
    a = p / b if b > 0 else 0.0
    return RhoFactor(edge.u, edge.mu_u, a), RhoFactor(edge.v, edge.mu_v, b)


def _coupling_term(factor, mediator):
    """factor (x) S+ + factor^dag (x) S- on (factor.qubit, mediator)."""
    P = factor.matrix()
    block = np.kron(P, S_PLUS) + np.kron(P.conj().T, S_MINUS)
    return LocalTerm((factor.qubit, mediator), block)


def _coupling_edge(factor, mediator, weight=1.0):
    """RhoEdge of weight*(P S+ + P^dag S-) as seen from the rho-edge graph."""
    return RhoEdge(factor.qubit, mediator, factor.mu, 2, weight * factor.scale)


def _diag_field(factors_dag_first, factors_dag_last):
    """Sum of P^dag P and Q Q^dag as single-qubit diagonal fields."""
    fields = {}
    for f in factors_dag_first:
        M = f.matrix().conj().T @ f.matrix()
        fields[f.qubit] = fields.get(f.qubit, 0) + M
    for f in factors_dag_last:
        M = f.matrix() @ f.matrix().conj().T
        fields[f.qubit] = fields.get(f.qubit, 0) + M
    return fields


def _fields_to_hamiltonian(fields, n):
    H = Hamiltonian(n)
    for q in sorted(fields):
        if np.any(fields[q]):
            H.add(LocalTerm((q,), fields[q]))
    return H


@dataclass
class PerturbedSystem:
    """penalty + main_weight * v_main + v_extra on `num_qubits` qubits.

    `low_patterns` lists (mediator tuple, allowed bit strings) groups; the low
    subspace has every group in one of its allowed strings.
    """
    num_qubits: int
    penalty: Hamiltonian
    v_main: Hamiltonian
    v_extra: Hamiltonian
    delta: float
    main_weight: float
    mediators: tuple
    low_patterns: list
    exponent: float = 0.5

    @property
    def system_qubits(self):
        med = set(self.mediators)
        return [q for q in range(self.num_qubits) if q not in med]

    def hamiltonian(self):
        return self.penalty + self.v_main.scaled(self.main_weight) + self.v_extra

    def perturbation(self):
        return self.v_main.scaled(self.main_weight) + self.v_extra

    def low_mask(self):
        n = self.num_qubits
        idx = np.arange(2 ** n, dtype=np.int64)
        mask = np.ones(2 ** n, dtype=bool)
        for qubits, allowed in self.low_patterns:
            code = np.zeros_like(idx)
            for q in qubits:
                code = (code << 1) | ((idx >> (n - 1 - q)) & 1)
            ok = np.zeros(2 ** n, dtype=bool)
            for s in allowed:
                ok |= code == int(s, 2)
            mask &= ok
        return mask

    def penalty_diagonal(self):
        P = self.penalty.sparse()
        off = P - sp.diags(P.diagonal())
        if off.count_nonzero() and np.max(np.abs(off.data)) > 1e-9:
            raise GadgetError("penalty must be diagonal in the computational basis")
        return np.real(P.diagonal())

    def code_isometry(self):
        """Sparse map from the logical register (system qubits, then one qubit
        per two-pattern group) into the full register."""
        n = self.num_qubits
        sysq = self.system_qubits
        groups = [(qs, allowed) for qs, allowed in self.low_patterns]
        logical_groups = [g for g in groups if len(g[1]) == 2]
        nl = len(sysq) + len(logical_groups)
        rows = []
        for x in range(2 ** nl):
            bits = [(x >> (nl - 1 - i)) & 1 for i in range(nl)]
            full = [0] * n
            for q, b in zip(sysq, bits):
                full[q] = b
            lg = iter(bits[len(sysq):])
            for qs, allowed in groups:
                pat = allowed[next(lg)] if len(allowed) == 2 else allowed[0]
                for q, c in zip(qs, pat):
                    full[q] = int(c)
            rows.append(int("".join(map(str, full)), 2) if n else 0)
        return sp.csr_matrix((np.ones(2 ** nl), (rows, np.arange(2 ** nl))), shape=(2 ** n, 2 ** nl))

    def check(self, tol=1e-12):
        """Raise if the assembled pieces are not stoquastic or the penalty
        does not vanish on the low subspace."""
        for name in ("penalty", "v_main", "v_extra"):
            ok, w = is_stoquastic(getattr(self, name), tol=tol * max(1.0, self.delta), termwise=True)
            if not ok:
                raise GadgetError(f"{name} is not stoquastic: {w}")
        d = self.penalty_diagonal()
        mask = self.low_mask()
        if np.any(np.abs(d[mask]) > 1e-9 * max(1, self.delta)):
            raise GadgetError("penalty does not vanish on the low subspace")
        if np.any(d[~mask] < self.delta * (1 - 1e-9)):
            raise GadgetError("penalty gap smaller than delta")
        return self


@dataclass
class GadgetApplication:
    kind: str
    mediators: tuple
    target_edges: list
    added_edges: list          # E: extra edges appearing in the effective Hamiltonian
    compensation: dict         # G as {qubit: 2x2 diagonal}
    delta: float
    system: PerturbedSystem = None
    simulator_edges: list = field(default_factory=list)   # couplings incl. Delta^p
    fields: dict = field(default_factory=dict)              # 1-local terms incl. penalty and G
    penalty_terms: list = field(default_factory=list)       # multi-qubit penalty terms
    parts: list = field(default_factory=list)               # constituents (triangle)
    pairs: list = field(default_factory=list)               # (C, D) data for k-local subdivision
    offset: float = 0.0
    certificate: object = None
    intermediate: object = None
    step_certificates: list = field(default_factory=list)

    def compensation_hamiltonian(self, n):
        return _fields_to_hamiltonian(self.compensation, n)


def default_delta(target_norm):
    return 1e6 * max(float(target_norm), 1.0) ** 2


# --------------------------------------------------------------------------
# effective Hamiltonians

@dataclass
class EffectiveHamiltonian:
    """Operator on the low subspace, indexed by `low_indices` of the full basis."""
    low_indices: np.ndarray
    matrix: np.ndarray
    num_qubits: int

    def full(self):
        dim = 2 ** self.num_qubits
        out = np.zeros((dim, dim), dtype=complex)
        out[np.ix_(self.low_indices, self.low_indices)] = self.matrix
        return out


def _sw_blocks(system):
    d = system.penalty_diagonal()
    mask = system.low_mask()
    lo, hi = np.flatnonzero(mask), np.flatnonzero(~mask)
    if np.any(np.abs(d[lo]) > 1e-9 * max(1.0, system.delta)):
        raise GadgetError("penalty is not zero on the low subspace")
    dh = d[hi]
    if np.any(dh <= 0):
        raise GadgetError("high block of the penalty is singular")
    V = system.perturbation().sparse()
    V_ll = V[lo][:, lo]
    V_lh = V[lo][:, hi]
    V_hl = V[hi][:, lo]
    return V, lo, hi, dh, V_ll, V_lh, V_hl


def schrieffer_wolff_2(system):
    """V_- - V_{-+} H^{-1} V_{+-} with H^{-1} the inverse penalty on the high space."""
    V, lo, hi, dh, V_ll, V_lh, V_hl = _sw_blocks(system)
    Hinv = sp.diags(1.0 / dh)
    eff = V_ll - V_lh @ Hinv @ V_hl
    return EffectiveHamiltonian(lo, np.asarray(eff.todense()), system.num_qubits)


def schrieffer_wolff_3(system):
    """Second order plus V_{-+}H^-1 V_{++} H^-1 V_{+-} - 1/2 {V_{-+}H^-2 V_{+-}, V_-}."""
    V, lo, hi, dh, V_ll, V_lh, V_hl = _sw_blocks(system)
    Hinv = sp.diags(1.0 / dh)
    V_hh = V[hi][:, hi]
    second = V_lh @ Hinv @ V_hl
    third = V_lh @ Hinv @ V_hh @ Hinv @ V_hl
    B = V_lh @ Hinv @ Hinv @ V_hl
    anti = B @ V_ll + V_ll @ B
    eff = V_ll - second + third - 0.5 * anti
    return EffectiveHamiltonian(lo, np.asarray(eff.todense()), system.num_qubits)


def closed_form(app, gamma=None):
    """The effective Hamiltonian a gadget is designed to produce, assembled
    from its target edges, extra edges and offset (not from V)."""
    sysm = app.system
    n = sysm.num_qubits
    H = Hamiltonian(n, offset=app.offset)
    if gamma is not None:
        H = H + gamma.extended(n)
    if app.kind == KLOCAL_SUBDIVISION:
        for C, D in app.pairs:
            # -(C (x) D + C^dag (x) D^dag)
            blk = np.kron(C[1], D[1])
            H.add(LocalTerm(C[0] + D[0], -(blk + blk.conj().T)))
        for t in app.target_edges:
            H.add(t)
    elif app.kind == THREE_TO_TWO:
        raise GadgetError("use three_to_two_target for the logical-space closed form")
    else:
        for e in list(app.target_edges) + list(app.added_edges):
            H.add(e.term(-1.0))
    mask = sysm.low_mask()
    lo = np.flatnonzero(mask)
    M = H.sparse()[lo][:, lo]
    return EffectiveHamiltonian(lo, np.asarray(M.todense()), n)


# --------------------------------------------------------------------------
# geometric gadgets

def _alloc(n_hint, qubits, gamma, mediator):
    used = max(list(qubits) + ([gamma.num_qubits - 1] if gamma is not None else [])) + 1
    n = max(used, n_hint or 0)
    c = n if mediator is None else mediator
    return c, max(n, c + 1)


def _single_mediator_system(n, c, delta, couplings, fields, gamma):
    penalty = Hamiltonian(n, [LocalTerm((c,), delta * PROJ1)])
    v_main = Hamiltonian(n)
    for f in couplings:
        v_main.add(_coupling_term(f, c).scaled(-1.0))
    v_extra = _fields_to_hamiltonian(fields, n)
    if gamma is not None:
        v_extra = v_extra + gamma.extended(n)
    return PerturbedSystem(n, penalty, v_main, v_extra, delta, math.sqrt(delta), (c,),
                           [((c,), ["0"])], 0.5)


def _edge_level(app, couplings, c, delta):
    w = math.sqrt(delta)
    app.simulator_edges = [_coupling_edge(f, c, w) for f in couplings]
    app.fields = {q: m.copy() for q, m in app.compensation.items()}
    app.fields[c] = app.fields.get(c, 0) + delta * PROJ1
    return app


def geo_subdivision(edge, gamma=None, delta=1e6, mediator=None, num_qubits=None, v_scale=None,
                    build_system=True):
    """Replace the rho-edge u-v by couplings u-c and v-c to a new mediator c.

    V_main = -(chi S+_c + chi^dag S-_c) with chi = P_u + P_v^dag and
    G = P_u^dag P_u + P_v P_v^dag, so that the second-order effective
    Hamiltonian is (gamma - edge) (x) |0><0|_c.
    """
    c, n = _alloc(num_qubits, edge.qubits, gamma, mediator)
    Pu, Pv = edge_factors(edge, v_scale)
    couplings = [Pu, Pv.adjoint()]
    G = _diag_field([Pu], [Pv])
    sysm = _single_mediator_system(n, c, delta, couplings, G, gamma) if build_system else None
    app = GadgetApplication(GEO_SUBDIVISION, (c,), [edge], [], G, delta, sysm)
    return sysm, _edge_level(app, couplings, c, delta)


def cross_gadget(edge_uv, edge_ws, gamma=None, delta=1e6, mediator=None, num_qubits=None,
                 u_scale=None, w_scale=None, build_system=True):
    """One mediator for two edges on disjoint vertex pairs.

    chi = (P_u + P_v^dag) + (P_s + P_w^dag); the cross terms of chi^dag chi
    add the four edges us, uw, vs, vw to the effective Hamiltonian (E).
    `u_scale` and `w_scale` fix the scales of P_u and P_w (balanced by
    default); the E weights are products of one factor from each edge.
    """
    if set(edge_uv.qubits) & set(edge_ws.qubits):
        raise GadgetError("cross gadget needs two edges without a shared vertex")
    c, n = _alloc(num_qubits, edge_uv.qubits + edge_ws.qubits, gamma, mediator)
    Pu, Pv = edge_factors(edge_uv, None if u_scale is None else edge_uv.product_scale / u_scale)
    # the second edge is P_w P_s + h.c.; chi_sw = P_s + P_w^dag
    Pw, Ps = edge_factors(edge_ws, None if w_scale is None else edge_ws.product_scale / w_scale)
    left = [Pu, Pv.adjoint()]
    right = [Ps, Pw.adjoint()]
    couplings = left + right
    G = _diag_field([Pu, Ps], [Pv, Pw])
    E = []
    for a in left:
        for b in right:
            # a^dag b + b^dag a
            ad = a.adjoint()
            E.append(edge_from_product(ad.qubit, ad.mu, b.qubit, b.mu, ad.scale * b.scale))
    sysm = _single_mediator_system(n, c, delta, couplings, G, gamma) if build_system else None
    app = GadgetApplication(CROSS, (c,), [edge_uv, edge_ws], E, G, delta, sysm)
    return sysm, _edge_level(app, couplings, c, delta)


def fork_compatible(edge_uv, edge_vw, v=None):
    """Shared vertex and whether the two edges carry the same rho-matrix
    there (possibly after rewriting the second edge with its adjoint string).

    Returns (v, edge_vw_aligned) or raises GadgetError.
    """
    shared = set(edge_uv.qubits) & set(edge_vw.qubits)
    if v is None:
        if len(shared) != 1:
            raise GadgetError("fork needs two edges sharing exactly one vertex")
        v = shared.pop()
    elif v not in shared:
        raise GadgetError(f"vertex {v} is not shared by both edges")
    if set(edge_uv.qubits) == set(edge_vw.qubits):
        raise GadgetError("fork needs two edges with distinct outer vertices")
    m1, m2 = edge_uv.mu_at(v), edge_vw.mu_at(v)
    if m1 == m2:
        return v, edge_vw
    if m1 == ADJOINT_MU[m2]:
        return v, edge_vw.flipped()
    raise GadgetError(f"fork illegal: rho^{m1} and rho^{m2} meet at vertex {v}")


def fork_gadget(edge_uv, edge_vw, gamma=None, delta=1e6, mediator=None, num_qubits=None, v=None,
                q_scale=None, build_system=True):
    """Merge two edges P_u Q_v + h.c. and Q_v R_w + h.c. onto one mediator.

    xi = P_u + R_w + Q_v^dag; the cross term P_u^dag R_w + h.c. is the extra
    edge uw and G = P_u^dag P_u + Q_v Q_v^dag + R_w^dag R_w. The scale of
    Q_v is free; by default it balances the factors, and a larger value
    shrinks the extra edge (weight p1 p2 / q_scale^2) at the cost of G_v.
    """
    v, e2 = fork_compatible(edge_uv, edge_vw, v)
    e1 = edge_uv.oriented(edge_uv.other(v))
    e2 = e2.oriented(v)
    u, w = e1.u, e2.v
    c, n = _alloc(num_qubits, (u, v, w), gamma, mediator)
    p1, p2 = e1.product_scale, e2.product_scale
    b = (p1 * p2) ** 0.25 if q_scale is None else float(q_scale)
    Pu = RhoFactor(u, e1.mu_u, p1 / b if b else 0.0)
    Qv = RhoFactor(v, e1.mu_v, b)
    Rw = RhoFactor(w, e2.mu_v, p2 / b if b else 0.0)
    couplings = [Pu, Rw, Qv.adjoint()]
    G = _diag_field([Pu, Rw], [Qv])
    pa = Pu.adjoint()
    E = [edge_from_product(pa.qubit, pa.mu, Rw.qubit, Rw.mu, pa.scale * Rw.scale)]
    sysm = _single_mediator_system(n, c, delta, couplings, G, gamma) if build_system else None
    app = GadgetApplication(FORK, (c,), [edge_uv, edge_vw], E, G, delta, sysm)
    return sysm, _edge_level(app, couplings, c, delta)


def _system_from_edges(n, edges, fields, penalties, offset=0.0):
    H = Hamiltonian(n, offset=offset)
    for e in edges:
        H.add(e.term(-1.0))
    for q in sorted(fields):
        H.add(LocalTerm((q,), fields[q]))
    for t in penalties:
        H.add(t)
    return H


def triangle_gadget(edge_uv, edge_vw, gamma=None, delta_inner=1e3, delta_outer=1e9,
                    num_qubits=None, v=None, certify_steps=True):
    """Subdivide u-v (mediator c1) and v-w (mediator c2), then fork the two
    mediator edges at v (mediator c3). The extra fork edge joins c1 and c2,
    so no edge is added among u, v, w.

    Returns (PerturbedSystem of the fork, triangle application). The
    application lists the three constituent applications in `parts`, keeps
    the fork's target in `intermediate` and, for small registers, a
    Composition of the two measured steps in `certificate`.
    """
    v, e2 = fork_compatible(edge_uv, edge_vw, v)
    e1 = edge_uv.oriented(edge_uv.other(v))
    e2 = e2.oriented(v)
    c1, n = _alloc(num_qubits, (e1.u, v, e2.v), gamma, None)
    c2 = c1 + 1
    _, a1 = geo_subdivision(e1, None, delta_inner, c1, c1 + 1)
    _, a2 = geo_subdivision(e2, None, delta_inner, c2, c2 + 1)
    # mediator edges at v: (v, c1) carries adj(mu_v), (v, c2) carries mu_v
    ev1 = [e for e in a1.simulator_edges if v in e.qubits][0]
    ev2 = [e for e in a2.simulator_edges if v in e.qubits][0]
    others = [e for e in a1.simulator_edges + a2.simulator_edges if v not in e.qubits]
    fields = {}
    for a in (a1, a2):
        for q, m in a.fields.items():
            fields[q] = fields.get(q, 0) + m
    c3 = c2 + 1
    n3 = c3 + 1
    rest = _system_from_edges(n3, others, fields, [])
    if gamma is not None:
        rest = rest + gamma.extended(n3)
    # scale Q_v so the extra fork edge between c1 and c2 has unit weight;
    # with balanced factors it would carry sqrt(delta_inner) and couple the
    # inner low state |00> to |11> at O(1) strength
    q = math.sqrt(ev1.product_scale * ev2.product_scale)
    s3, a3 = fork_gadget(ev1.oriented(ev1.other(v)), ev2.oriented(v), rest, delta_outer, c3, n3, v,
                         q_scale=q)
    # the fork simulates rest - forked edges - E on the register without c3
    mid = Hamiltonian(c3)
    for t in rest.terms:
        mid.add(t)
    mid.offset = rest.offset
    for e in [ev1, ev2] + a3.added_edges:
        mid.add(e.term(-1.0))
    app = GadgetApplication(TRIANGLE, (c1, c2, c3), [edge_uv, edge_vw], a3.added_edges, {},
                            delta_outer, s3, parts=[a1, a2, a3])
    app.intermediate = mid
    app.simulator_edges = others + a3.simulator_edges
    app.fields = {q: m.copy() for q, m in fields.items()}
    for q, m in a3.fields.items():
        app.fields[q] = app.fields.get(q, 0) + m
    if certify_steps and n3 <= 10:
        target = Hamiltonian(c1, [edge_uv.term(), edge_vw.term()])
        if gamma is not None:
            target = target + gamma
        k = 2 ** c1
        step1 = certify(target, mid, k)
        step2 = certify(mid, s3, k)
        norm = float(np.max(np.abs(np.linalg.eigvalsh(target.dense()))))
        app.certificate = compose_error([
            (step1.eta, step1.epsilon, delta_inner, norm),
            (step2.eta, step2.epsilon, delta_outer, norm),
        ])
        app.step_certificates = [step1, step2]
    return s3, app


# --------------------------------------------------------------------------
# k-local subdivision

def _split_string(string, k_sigma):
    qs = string.support
    mus = string.mus
    return (qs[:k_sigma], mus[:k_sigma]), (qs[k_sigma:], mus[k_sigma:])


def _rho_block(mus, scale):
    return scale * kron_all([RHO[m] for m in mus])


def klocal_subdivision(H, delta=1e6, first_mediator=None, tol=1e-12):
    """One round of the stoquastic subdivision gadget on every term of
    locality > 3.

    Each term is shifted by its largest diagonal entry and read as
    K - sum_a (C_a D_a + C_a^dag D_a^dag), where C_a acts on the lowest
    ceil(k/2) qubits of the support and D_a on the rest; each pair gets a
    mediator with penalty delta |1><1|.
    """
    Hm = H.merged()
    if Hm.locality <= 3:
        raise GadgetError(f"locality {Hm.locality} <= 3: no subdivision needed")
    n0 = H.num_qubits
    mediator = n0 if first_mediator is None else first_mediator
    pairs = []
    passthrough = []
    K = Hm.offset
    for t in Hm.terms:
        if t.k <= 3:
            passthrough.append(t)
            continue
        shift, strings = term_rho_strings(t, tol)
        K += shift
        k_sigma = math.ceil(t.k / 2)
        seen = {}
        for s in strings:
            key = (s.support, s.mus)
            adj = (s.support, tuple(ADJOINT_MU[m] for m in s.mus))
            if adj in seen and adj != key:
                h0 = seen.pop(adj)
                if abs(h0 - s.coefficient) > 1e-9 * max(1, h0):
                    raise GadgetError("term is not Hermitian: unequal adjoint weights")
                continue
            if adj == key:
                scale = math.sqrt(s.coefficient / 2)
            else:
                seen[key] = s.coefficient
                scale = math.sqrt(s.coefficient)
            (sq, smu), (tq, tmu) = _split_string(s, k_sigma)
            pairs.append(((list(sq), _rho_block(smu, scale)), (list(tq), _rho_block(tmu, scale))))
        if seen:
            raise GadgetError("term is not Hermitian: unpaired rho-string")
    M = len(pairs)
    n = mediator + M
    penalty = Hamiltonian(n)
    v_main = Hamiltonian(n)
    v_extra = Hamiltonian(n, offset=K)
    for t in passthrough:
        v_extra.add(t)
    mediators = tuple(range(mediator, mediator + M))
    for a, ((cq, C), (dq, D)) in zip(mediators, pairs):
        penalty.add(LocalTerm((a,), delta * PROJ1))
        # -(C S+ + C^dag S-) and -(D^dag S+ + D S-)
        v_main.add(LocalTerm(cq + [a], -(np.kron(C, S_PLUS) + np.kron(C.conj().T, S_MINUS))))
        v_main.add(LocalTerm(dq + [a], -(np.kron(D.conj().T, S_PLUS) + np.kron(D, S_MINUS))))
        CdC = C.conj().T @ C
        DDd = D @ D.conj().T
        if np.any(CdC):
            v_extra.add(LocalTerm(cq, CdC))
        if np.any(DDd):
            v_extra.add(LocalTerm(dq, DDd))
    sysm = PerturbedSystem(n, penalty, v_main, v_extra, delta, math.sqrt(delta), mediators,
                           [((a,), ["0"]) for a in mediators], 0.5)
    app = GadgetApplication(KLOCAL_SUBDIVISION, mediators, passthrough, [], {}, delta, sysm,
                            pairs=pairs, offset=K)
    return sysm, app


def reduce_locality(H, delta_factor=100.0, max_rounds=8):
    """Repeat the k-local subdivision until every term is at most 3-local.

    Each round uses Delta = delta_factor * (largest term norm so far)^2 so
    the next round dominates the previous one. Returns the final simulator
    Hamiltonian and the list of applications.
    """
    apps = []
    cur = H
    for _ in range(max_rounds):
        if cur.merged().locality <= 3:
            return cur, apps
        scale = max((np.linalg.norm(t.block, 2) for t in cur.terms), default=1.0)
        delta = delta_factor * max(scale, 1.0) ** 2
        sysm, app = klocal_subdivision(cur, delta)
        apps.append(app)
        cur = sysm.hamiltonian()
    if cur.merged().locality > 3:
        raise GadgetError("locality did not drop to 3")
    return cur, apps


# --------------------------------------------------------------------------
# 3-local to 2-local

def three_to_two(operators, gamma=None, delta=1e6, mediators=None, num_qubits=None):
    """Third-order gadget for Gamma - 6 O_1 O_2 O_3 with O_j = a_j X_{q_j}.

    `operators` is a list of three (qubit, 2x2 matrix) pairs. Mediators
    m_1..m_3 carry -Delta/4 (Z1Z2 + Z2Z3 + Z1Z3 - 3); the low space
    {|000>, |111>} is the logical qubit c.
    """
    if len(operators) != 3:
        raise GadgetError("three_to_two needs exactly three operators")
    coeffs = []
    for q, O in operators:
        O = np.asarray(O, dtype=complex)
        a = O[0, 1].real
        if (abs(O[0, 0]) > 1e-12 or abs(O[1, 1]) > 1e-12 or abs(O[0, 1] - O[1, 0]) > 1e-12
                or abs(O[0, 1].imag) > 1e-12 or a < 0):
            raise GadgetError("three_to_two needs non-negative multiples of X")
        coeffs.append(a)
    qs = [q for q, _ in operators]
    if len(set(qs)) != 3:
        raise GadgetError("the three operators must act on distinct qubits")
    used = max(qs + ([gamma.num_qubits - 1] if gamma is not None else [])) + 1
    base = max(used, num_qubits or 0)
    meds = tuple(range(base, base + 3)) if mediators is None else tuple(mediators)
    n = max(base, max(meds) + 1)
    zz = np.kron(PAULI_Z, PAULI_Z)
    penalty = Hamiltonian(n, offset=0.75 * delta)
    for i, j in ((0, 1), (1, 2), (0, 2)):
        penalty.add(LocalTerm((meds[i], meds[j]), -0.25 * delta * zz))
    v_main = Hamiltonian(n)
    for (q, _), a, m in zip(operators, coeffs, meds):
        v_main.add(LocalTerm((q, m), -a * np.kron(PAULI_X, PAULI_X)))
    v_extra = gamma.extended(n) if gamma is not None else Hamiltonian(n)
    sysm = PerturbedSystem(n, penalty, v_main, v_extra, delta, delta ** (2.0 / 3.0), meds,
                           [(meds, ["000", "111"])], 2.0 / 3.0)
    K = -delta ** (1.0 / 3.0) * sum(a * a for a in coeffs)
    app = GadgetApplication(THREE_TO_TWO, meds, [], [], {}, delta, sysm, offset=K)
    app.pairs = list(zip(qs, coeffs))
    w = delta ** (2.0 / 3.0)
    app.simulator_edges = [edge_from_product(q, 1, m, 1, w * a) for q, a, m in zip(qs, coeffs, meds)]
    app.penalty_terms = list(penalty.terms)
    app.offset = K
    return sysm, app


def three_to_two_target(app, gamma=None):
    """K + Gamma (x) I_c - 6 O_1 O_2 O_3 (x) X_c on system qubits plus c (last)."""
    sysm = app.system
    sysq = sysm.system_qubits
    nl = len(sysq) + 1
    index = {q: i for i, q in enumerate(sysq)}
    H = Hamiltonian(nl, offset=app.offset)
    if gamma is not None:
        H = H + gamma.relabel(index, nl)
    qs = [index[q] for q, _ in app.pairs]
    prod = np.prod([a for _, a in app.pairs])
    H.add(LocalTerm(qs + [nl - 1], -6 * prod * kron_all([PAULI_X] * 4)))
    return H


# --------------------------------------------------------------------------
# parallel application, composition and certificates

def apply_parallel(systems):
    """Combine gadget systems built on one register with distinct mediators.

    Returns the combined PerturbedSystem and a report of the cross-gadget
    second-order blocks ||Pi_- V^(i) Pi_+ H^-1 Pi_+ V^(j) Pi_-|| for i != j.
    """
    if not systems:
        raise GadgetError("no gadget systems given")
    n = max(s.num_qubits for s in systems)
    meds = [m for s in systems for m in s.mediators]
    if len(set(meds)) != len(meds):
        raise GadgetError("mediator collision between parallel gadgets")
    penalty = Hamiltonian(n)
    v_main = Hamiltonian(n)
    v_extra = Hamiltonian(n)
    patterns = []
    for s in systems:
        penalty = penalty + s.penalty.extended(n)
        v_main = v_main + s.v_main.scaled(s.main_weight).extended(n)
        v_extra = v_extra + s.v_extra.extended(n)
        patterns += s.low_patterns
    combined = PerturbedSystem(n, penalty, v_main, v_extra, min(s.delta for s in systems), 1.0,
                               tuple(meds), patterns, systems[0].exponent)
    report = {}
    if len(systems) > 1 and n <= 14:
        d = combined.penalty_diagonal()
        mask = combined.low_mask()
        lo, hi = np.flatnonzero(mask), np.flatnonzero(~mask)
        Hinv = sp.diags(1.0 / d[hi])
        mains = [s.v_main.scaled(s.main_weight).extended(n).sparse() for s in systems]
        for i in range(len(systems)):
            for j in range(len(systems)):
                if i != j:
                    blk = mains[i][lo][:, hi] @ Hinv @ mains[j][hi][:, lo]
                    report[(i, j)] = float(np.max(np.abs(blk.data))) if blk.nnz else 0.0
    return combined, report


@dataclass
class Composition:
    eta: float
    epsilon: float
    steps: int

    def budget(self, epsilon_target=None):
        """Per-step error allowance eps/(2C) for a C-step chain."""
        eps = self.epsilon if epsilon_target is None else epsilon_target
        return eps / (2 * max(self.steps, 1))


def compose_error(steps):
    """Chain (eta_i, eps_i, Delta_i, norm_i) simulation steps.

    eta  <- eta + eta_i + eps_i / Delta_{i-1}
    eps  <- eps + eps_i + eps_i * norm_{i-1} / Delta_{i-1}
    with the unspecified constants taken as 1.
    """
    steps = list(steps)
    if not steps:
        return Composition(0.0, 0.0, 0)
    eta, eps, d_prev, n_prev = steps[0]
    for e_i, x_i, d_i, n_i in steps[1:]:
        eta = eta + e_i + x_i / d_prev
        eps = eps + x_i + x_i * n_prev / d_prev
        d_prev, n_prev = d_i, n_i
    return Composition(float(eta), float(eps), len(steps))


@dataclass
class SimulationCertificate:
    eta: float
    epsilon: float
    per_eigenvalue_diffs: list
    delta_used: float


def _low_eigs(H, k, max_dense_qubits=12):
    if isinstance(H, Hamiltonian):
        sp_ = spectrum(H, k, "auto", return_vectors=True, max_dense_qubits=max_dense_qubits)
        return sp_.eigenvalues, sp_.vectors
    w, v = np.linalg.eigh(np.asarray(H))
    return w[:k], v[:, :k]


def certify(target, simulator, num_eigs=None, isometry=None):
    """Compare the lowest eigenvalues of a target and its simulator.

    epsilon is the largest eigenvalue deviation; eta is the square root of
    the largest weight of a low simulator eigenvector outside the code space
    (the mediators' low subspace, or the range of `isometry`).
    """
    tdim = 2 ** target.num_qubits if isinstance(target, Hamiltonian) else np.asarray(target).shape[0]
    k = tdim if num_eigs is None else min(num_eigs, tdim)
    if isinstance(simulator, PerturbedSystem):
        Hs = simulator.hamiltonian()
        delta = simulator.delta
        mask = simulator.low_mask() if isometry is None else None
    else:
        Hs, delta, mask = simulator, float("nan"), None
    lt, _ = _low_eigs(target, k)
    ls, vs = _low_eigs(Hs, k)
    diffs = np.abs(lt - ls)
    if isometry is not None:
        W = isometry.toarray() if sp.issparse(isometry) else np.asarray(isometry)
        inside = np.linalg.norm(W.conj().T @ vs, axis=0) ** 2
    elif mask is not None:
        inside = np.sum(np.abs(vs[mask]) ** 2, axis=0)
    else:
        inside = np.ones(k)
    eta = float(np.sqrt(max(0.0, float(np.max(1 - inside)))))
    return SimulationCertificate(eta, float(np.max(diffs)), diffs.tolist(), delta)


def delta_sweep(make_system, target, deltas, num_eigs=None):
    """certify(target, make_system(Delta)) for each Delta; returns (Delta, eps, eta) rows."""
    rows = []
    for d in deltas:
        cert = certify(target, make_system(d), num_eigs)
        rows.append((float(d), cert.epsilon, cert.eta))
    return rows
