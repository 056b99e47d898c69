"""Stoquastic Pauli Hamiltonians: classification, the XX/ZZ/X/Z parent
model, sign-normalising conjugations and grouped XX+ZZ families.

Parent model:  H = sum_edges J_uv X_u X_v + L_uv Z_u Z_v
                 + sum_vertices f_u X_u + h_u Z_u,   with J, f <= 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hamiltonian import (PAULI, Hamiltonian, LocalTerm, is_stoquastic, kron_all,
                          pauli_decompose)

__all__ = [
    "PauliError", "TERMWISE_STOQ", "PAULI_TERMWISE_STOQ", "NEITHER", "S2",
    "SIGN_RESTRICTED", "MINUS_XX_PLUS_ZZ", "XX_PLUS_ZZ", "FAMILIES",
    "ParentXZParams", "GroupedParams", "ConjugationRecord",
    "parent_edge_block", "build_parent", "parent_params", "classify",
    "normalise_signs", "build_grouped", "degrees_of_freedom",
    "parse_params", "format_params", "transverse_field_ising",
]

TERMWISE_STOQ = "TERMWISE_STOQ"
PAULI_TERMWISE_STOQ = "PAULI_TERMWISE_STOQ"
NEITHER = "NEITHER"

# single 2-local Pauli interactions that keep a term stoquastic, with the
# sign each coefficient must carry (0: any real, -1: non-positive)
S2 = {"II": 0, "XI": -1, "IX": -1, "ZI": 0, "IZ": 0, "ZZ": 0, "XX": -1}

# grouped families
SIGN_RESTRICTED = "SIGN_RESTRICTED"      # parent model with L, h sign-locked to s
MINUS_XX_PLUS_ZZ = "MINUS_XX_PLUS_ZZ"    # J >= 0:  J (-alpha XX + gamma ZZ)
XX_PLUS_ZZ = "XX_PLUS_ZZ"                # J <= 0:  J (alpha XX + gamma ZZ)
FAMILIES = (SIGN_RESTRICTED, MINUS_XX_PLUS_ZZ, XX_PLUS_ZZ)

X, Z, I2 = PAULI["X"], PAULI["Z"], PAULI["I"]


class PauliError(ValueError):
    pass


def _key(u, v):
    u, v = int(u), int(v)
    if u == v:
        raise PauliError(f"self-loop on vertex {u}")
    return (u, v) if u < v else (v, u)


@dataclass
class ParentXZParams:
    """edges: {(u, v): (J, L)}, vertices: {u: (f, h)}; J, f <= 0 unless check=False."""
    num_qubits: int
    edges: dict = field(default_factory=dict)
    vertices: dict = field(default_factory=dict)
    check: bool = True

    def __post_init__(self):
        self.edges = {_key(*k): (float(j), float(l)) for k, (j, l) in self.edges.items()}
        self.vertices = {int(u): (float(f), float(h)) for u, (f, h) in self.vertices.items()}
        for (u, v) in self.edges:
            if not (0 <= u < v < self.num_qubits):
                raise PauliError(f"edge ({u}, {v}) outside register of {self.num_qubits}")
        for u in self.vertices:
            if not 0 <= u < self.num_qubits:
                raise PauliError(f"vertex {u} outside register of {self.num_qubits}")
        if self.check:
            self.validate()

    def validate(self):
        for k, (j, _) in self.edges.items():
            if j > 0:
                raise PauliError(f"J{k} = {j} > 0 breaks the sign constraint J <= 0")
        for u, (f, _) in self.vertices.items():
            if f > 0:
                raise PauliError(f"f[{u}] = {f} > 0 breaks the sign constraint f <= 0")
        return self

    def field(self, u):
        return self.vertices.get(u, (0.0, 0.0))

    @classmethod
    def random(cls, num_qubits, edges, rng, scale=1.0):
        rng = np.random.default_rng(rng)
        E = {_key(u, v): (-scale * rng.random(), scale * rng.normal()) for u, v in edges}
        V = {u: (-scale * rng.random(), scale * rng.normal()) for u in range(num_qubits)}
        return cls(num_qubits, E, V)


def parent_edge_block(J, L, f_u=0.0, h_u=0.0, f_v=0.0, h_v=0.0):
    """4x4 matrix of J XX + L ZZ + f_u X_u + h_u Z_u + f_v X_v + h_v Z_v,
    written out entrywise (u is the first qubit)."""
    return np.array([
        [h_u + L + h_v, f_v, f_u, J],
        [f_v, h_u - L - h_v, J, f_u],
        [f_u, J, -h_u - L + h_v, f_v],
        [J, f_u, f_v, -h_u + L - h_v],
    ], dtype=float)


def build_parent(params):
    """Parent Hamiltonian with one term per Pauli interaction."""
    if params.check:
        params.validate()
    H = Hamiltonian(params.num_qubits)
    for (u, v), (J, L) in sorted(params.edges.items()):
        if J:
            H.add(LocalTerm((u, v), J * np.kron(X, X)))
        if L:
            H.add(LocalTerm((u, v), L * np.kron(Z, Z)))
    for u, (f, h) in sorted(params.vertices.items()):
        if f:
            H.add(LocalTerm((u,), f * X))
        if h:
            H.add(LocalTerm((u,), h * Z))
    return H


def parent_params(H, tol=1e-12):
    """Read (J, L, f, h) back from a Hamiltonian made only of XX, ZZ, X, Z
    and identity terms. Raises PauliError for anything else."""
    E, V = {}, {}
    for t in H.terms:
        if t.k > 2:
            raise PauliError(f"term on {t.support} is {t.k}-local")
        for c, lab in pauli_decompose(t, tol):
            if isinstance(c, complex):
                raise PauliError(f"term on {t.support} is not Hermitian")
            if set(lab) <= {"I"}:
                continue
            if t.k == 2 and lab in ("XX", "ZZ"):
                k = _key(*t.support)
                J, L = E.get(k, (0.0, 0.0))
                E[k] = (J + c, L) if lab == "XX" else (J, L + c)
            elif lab.count("I") == len(lab) - 1 and lab.strip("I") in ("X", "Z"):
                q = t.support[lab.index(lab.strip("I"))]
                f, h = V.get(q, (0.0, 0.0))
                V[q] = (f + c, h) if "X" in lab else (f, h + c)
            else:
                raise PauliError(f"Pauli string {lab} on {t.support} is outside the parent form")
    return ParentXZParams(H.num_qubits, E, V, check=False)


def classify(H, tol=1e-12):
    """PAULI_TERMWISE_STOQ if every term is stoquastic and carries at most
    one non-identity Pauli string; TERMWISE_STOQ if every term is
    stoquastic; NEITHER otherwise."""
    pauli_only = True
    for t in H.terms:
        ok, _ = is_stoquastic(t, tol)
        if not ok:
            return NEITHER
        strings = [lab for c, lab in pauli_decompose(t, tol) if set(lab) != {"I"}]
        if len(strings) > 1:
            pauli_only = False
    return PAULI_TERMWISE_STOQ if pauli_only else TERMWISE_STOQ


@dataclass
class ConjugationRecord:
    """Qubits conjugated by X or by Z, and which couplings changed sign."""
    x_qubits: list
    z_qubits: list
    flipped_zz: list
    flipped_xx: list

    @property
    def is_identity(self):
        return not self.x_qubits and not self.z_qubits

    def unitary(self, num_qubits):
        ops = []
        for q in range(num_qubits):
            m = I2
            if q in self.x_qubits:
                m = X @ m
            if q in self.z_qubits:
                m = Z @ m
            ops.append(m)
        return kron_all(ops)


def normalise_signs(H, target="h"):
    """Conjugate by X on every qubit with h_u < 0 (target 'h') or by Z on
    every qubit with f_u < 0 (target 'f').

    X conjugation flips Z_u, and Z_u Z_v whenever exactly one end is
    conjugated; Z conjugation flips X_u, and X_u X_v likewise. Returns
    (H', ConjugationRecord); H' = U H U^dag has the same spectrum.
    """
    P = H if isinstance(H, ParentXZParams) else parent_params(H)
    n = P.num_qubits
    if target == "h":
        flip = sorted(u for u, (_, h) in P.vertices.items() if h < 0)
    elif target == "f":
        flip = sorted(u for u, (f, _) in P.vertices.items() if f < 0)
    else:
        raise PauliError(f"target must be 'h' or 'f', got {target!r}")
    fs = set(flip)
    E, V, fz, fx = {}, {}, [], []
    for (u, v), (J, L) in P.edges.items():
        odd = (u in fs) != (v in fs)
        if odd and target == "h":
            L = -L
            fz.append((u, v))
        elif odd and target == "f":
            J = -J
            fx.append((u, v))
        E[(u, v)] = (J, L)
    for u, (f, h) in P.vertices.items():
        if u in fs:
            if target == "h":
                h = -h
            else:
                f = -f
        V[u] = (f, h)
    out = build_parent(ParentXZParams(n, E, V, check=False))
    rec = ConjugationRecord(flip if target == "h" else [], flip if target == "f" else [],
                            sorted(fz), sorted(fx))
    return out, rec


@dataclass
class GroupedParams:
    """edges: {(u, v): J}; alpha >= 0 and gamma shared by all edges.
    For SIGN_RESTRICTED, `parent` holds the parent parameters and `s` the sign."""
    num_qubits: int
    edges: dict = field(default_factory=dict)
    alpha: float = 1.0
    gamma: float = 0.0
    parent: ParentXZParams = None
    s: int = 1


def build_grouped(family, params):
    """Hamiltonian of a grouped family; XX and ZZ on an edge share one term."""
    family = str(family).upper()
    if family == SIGN_RESTRICTED:
        P = params.parent
        if P is None:
            raise PauliError("SIGN_RESTRICTED needs parent parameters")
        if params.s not in (1, -1):
            raise PauliError("sign flag s must be +1 or -1")
        for k, (_, L) in P.edges.items():
            if L * params.s < 0:
                raise PauliError(f"L{k} = {L} has the wrong sign for s = {params.s}")
        for u, (_, h) in P.vertices.items():
            if h * params.s < 0:
                raise PauliError(f"h[{u}] = {h} has the wrong sign for s = {params.s}")
        P.validate()
        H = Hamiltonian(P.num_qubits)
        for (u, v), (J, L) in sorted(P.edges.items()):
            H.add(LocalTerm((u, v), J * np.kron(X, X) + L * np.kron(Z, Z)))
        for u, (f, h) in sorted(P.vertices.items()):
            if f or h:
                H.add(LocalTerm((u,), f * X + h * Z))
        return H
    if family not in (MINUS_XX_PLUS_ZZ, XX_PLUS_ZZ):
        raise PauliError(f"unknown family {family!r}")
    if params.alpha < 0:
        raise PauliError(f"alpha = {params.alpha} < 0")
    sx = -1.0 if family == MINUS_XX_PLUS_ZZ else 1.0
    H = Hamiltonian(params.num_qubits)
    for (u, v), J in sorted(params.edges.items()):
        if family == MINUS_XX_PLUS_ZZ and J < 0:
            raise PauliError(f"J({u}, {v}) = {J} < 0; this family needs J >= 0")
        if family == XX_PLUS_ZZ and J > 0:
            raise PauliError(f"J({u}, {v}) = {J} > 0; this family needs J <= 0")
        u, v = _key(u, v)
        H.add(LocalTerm((u, v), J * (sx * params.alpha * np.kron(X, X) + params.gamma * np.kron(Z, Z))))
    return H


def degrees_of_freedom():
    """Real dimensions of (general stoquastic 2-local terms, parent terms),
    counted as matrix ranks of the two parametrisations."""
    general = []
    for r in range(4):
        for c in range(r, 4):
            m = np.zeros((4, 4))
            m[r, c] = m[c, r] = 1.0
            general.append(m.ravel())
    parent = [parent_edge_block(*np.eye(6)[i]).ravel() for i in range(6)]
    return int(np.linalg.matrix_rank(np.array(general))), int(np.linalg.matrix_rank(np.array(parent)))


def transverse_field_ising(num_qubits, edges, J=1.0, g=1.0):
    """sum J Z_u Z_v - g sum X_u, one Pauli interaction per term."""
    if g < 0:
        raise PauliError("transverse field g must be >= 0")
    E = {_key(u, v): (0.0, J) for u, v in edges}
    V = {u: (-g, 0.0) for u in range(num_qubits)}
    return build_parent(ParentXZParams(num_qubits, E, V))


def parse_params(text, num_qubits=None):
    """Lines `edge u v J L` and `vertex u f h`; `#` starts a comment."""
    E, V = {}, {}
    n = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "edge" and len(tok) == 5:
                u, v = int(tok[1]), int(tok[2])
                E[_key(u, v)] = (float(tok[3]), float(tok[4]))
                n = max(n, u + 1, v + 1)
            elif tok[0] == "vertex" and len(tok) == 4:
                u = int(tok[1])
                V[u] = (float(tok[2]), float(tok[3]))
                n = max(n, u + 1)
            else:
                raise ValueError
        except ValueError:
            raise PauliError(f"line {lineno}: cannot parse {raw!r}") from None
    return ParentXZParams(num_qubits or n, E, V)


def format_params(params):
    lines = [f"edge {u} {v} {J:.17g} {L:.17g}" for (u, v), (J, L) in sorted(params.edges.items())]
    lines += [f"vertex {u} {f:.17g} {h:.17g}" for u, (f, h) in sorted(params.vertices.items())]
    return "\n".join(lines) + "\n"
