"""Dense statevector simulation of reversible verification circuits.

Every gate in {X, CNOT, TOFFOLI, SWAP} permutes computational basis states,
so a circuit is simulated by composing index permutations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import Circuit

__all__ = [
    "SimulationError", "State", "AcceptanceReport", "StatisticsReport",
    "gate_permutation", "circuit_permutation", "unitary", "initial_state",
    "run", "acceptance", "acceptance_form", "optimal_proof", "random_proof",
    "statistics_preserved",
]

DENSE_LIMIT = 22


class SimulationError(ValueError):
    pass


@dataclass
class State:
    amplitudes: np.ndarray
    num_qubits: int

    def __post_init__(self):
        nrm = np.linalg.norm(self.amplitudes)
        if abs(nrm - 1.0) > 1e-12:
            raise SimulationError(f"state norm {nrm} differs from 1")


@dataclass
class AcceptanceReport:
    probability: float
    basis: str
    output_qubit: int


@dataclass
class StatisticsReport:
    max_diff: float
    diffs: list
    tol: float

    @property
    def ok(self):
        return self.max_diff <= self.tol


def _bit(idx, q, n):
    return (idx >> (n - 1 - q)) & 1


def gate_permutation(gate, n):
    """perm with U|b> = |perm[b]> for one gate on n qubits."""
    idx = np.arange(2 ** n, dtype=np.int64)
    qs = gate.qubits
    if gate.kind == "X":
        return idx ^ (1 << (n - 1 - qs[0]))
    if gate.kind == "CNOT":
        a, b = qs
        return idx ^ (_bit(idx, a, n) << (n - 1 - b))
    if gate.kind == "TOFFOLI":
        a, b, c = qs
        return idx ^ ((_bit(idx, a, n) & _bit(idx, b, n)) << (n - 1 - c))
    if gate.kind == "SWAP":
        a, b = qs
        diff = _bit(idx, a, n) ^ _bit(idx, b, n)
        return idx ^ (diff << (n - 1 - a)) ^ (diff << (n - 1 - b))
    raise SimulationError(f"cannot simulate gate {gate.kind}")


def circuit_permutation(gates, n):
    perm = np.arange(2 ** n, dtype=np.int64)
    for g in gates:
        perm = gate_permutation(g, n)[perm]
    return perm


def unitary(circuit_or_gates, n=None):
    """Dense permutation matrix of a circuit (small registers only)."""
    if isinstance(circuit_or_gates, Circuit):
        gates, n = circuit_or_gates.gates, circuit_or_gates.num_qubits
    else:
        gates = circuit_or_gates
    if n > 14:
        raise SimulationError("dense unitary limited to 14 qubits")
    perm = circuit_permutation(gates, n)
    U = np.zeros((2 ** n, 2 ** n))
    U[perm, np.arange(2 ** n)] = 1.0
    return U


def _as_proof(circuit, proof):
    w = len(circuit.proof_qubits)
    if proof is None:
        proof = "0" * w
    if isinstance(proof, str):
        if len(proof) != w or any(c not in "01" for c in proof):
            raise SimulationError(f"proof bit string must have {w} bits")
        vec = np.zeros(2 ** w, dtype=complex)
        vec[int(proof, 2) if w else 0] = 1.0
        return vec
    vec = np.asarray(proof, dtype=complex).reshape(-1)
    if vec.size != 2 ** w:
        raise SimulationError(f"proof has dimension {vec.size}, expected 2^{w}")
    nrm = np.linalg.norm(vec)
    if abs(nrm - 1) > 1e-10:
        raise SimulationError(f"proof state has norm {nrm}")
    return vec


def _check_size(circuit, max_dense_qubits):
    if circuit.num_qubits > max_dense_qubits:
        raise SimulationError(
            f"{circuit.num_qubits} qubits exceeds the dense limit of {max_dense_qubits}")


def initial_state(circuit, proof=None):
    """|x, xi, 0^m, +^p> laid out according to the circuit's role string."""
    xi = _as_proof(circuit, proof)
    plus = np.array([1, 1]) / np.sqrt(2)
    bits = iter(circuit.input_string)
    single = []
    for r in circuit.roles:
        if r == "i":
            single.append(np.array([1, 0]) if next(bits) == "0" else np.array([0, 1]))
        elif r == "0":
            single.append(np.array([1, 0]))
        elif r == "+":
            single.append(plus)
    rest = np.ones(1, dtype=complex)
    for v in single:
        rest = np.kron(rest, v)
    n = circuit.num_qubits
    proof_qs = circuit.proof_qubits
    other_qs = [q for q in range(n) if q not in set(proof_qs)]
    psi = np.outer(xi, rest).reshape([2] * n) if n else np.ones(())
    # axes currently ordered proof qubits then the others
    order = proof_qs + other_qs
    psi = np.transpose(psi, np.argsort(order))
    return psi.reshape(-1)


def run(circuit, proof_state=None, max_dense_qubits=DENSE_LIMIT):
    _check_size(circuit, max_dense_qubits)
    phi = initial_state(circuit, proof_state)
    perm = circuit_permutation(circuit.gates, circuit.num_qubits)
    out = np.empty_like(phi)
    out[perm] = phi
    return State(out, circuit.num_qubits)


def _accept_prob(amplitudes, q, n, basis):
    psi = np.asarray(amplitudes).reshape(2 ** q, 2, 2 ** (n - q - 1))
    if basis.lower() == "x":
        amp = (psi[:, 0, :] + psi[:, 1, :]) / np.sqrt(2)
    elif basis.lower() == "z":
        amp = psi[:, 1, :]
    else:
        raise SimulationError(f"unknown basis {basis!r}")
    return float(np.sum(np.abs(amp) ** 2))


def acceptance(circuit, proof_state=None, basis="x", max_dense_qubits=DENSE_LIMIT):
    """Probability that the output qubit is found in |+> (basis x) or |1> (basis z)."""
    st = run(circuit, proof_state, max_dense_qubits)
    p = _accept_prob(st.amplitudes, circuit.output_qubit, circuit.num_qubits, basis)
    return AcceptanceReport(min(p, 1.0), basis.lower(), circuit.output_qubit)


def acceptance_form(circuit, basis="x", max_dense_qubits=DENSE_LIMIT):
    """The 2^w x 2^w matrix A with Pr[accept | xi] = <xi|A|xi>."""
    _check_size(circuit, max_dense_qubits)
    n, w = circuit.num_qubits, len(circuit.proof_qubits)
    perm = circuit_permutation(circuit.gates, n)
    q = circuit.output_qubit
    cols = []
    for i in range(2 ** w):
        e = np.zeros(2 ** w)
        e[i] = 1.0
        phi = initial_state(circuit, e)
        out = np.empty_like(phi)
        out[perm] = phi
        psi = out.reshape(2 ** q, 2, 2 ** (n - q - 1))
        if basis.lower() == "x":
            proj = (psi[:, 0, :] + psi[:, 1, :]) / np.sqrt(2)
        elif basis.lower() == "z":
            proj = psi[:, 1, :]
        else:
            raise SimulationError(f"unknown basis {basis!r}")
        cols.append(proj.reshape(-1))
    B = np.array(cols)
    return B.conj() @ B.T


def optimal_proof(circuit, basis="x", max_dense_qubits=DENSE_LIMIT):
    """Maximum acceptance probability over proofs and a proof achieving it."""
    if not circuit.proof_qubits:
        raise SimulationError("circuit has no proof register")
    A = acceptance_form(circuit, basis, max_dense_qubits)
    vals, vecs = np.linalg.eigh(A)
    v = vecs[:, -1]
    # fix the global phase so the largest component is real and positive
    k = int(np.argmax(np.abs(v)))
    v = v * np.exp(-1j * np.angle(v[k]))
    return float(min(vals[-1], 1.0)), v


def random_proof(w, rng):
    v = rng.standard_normal(2 ** w) + 1j * rng.standard_normal(2 ** w)
    return v / np.linalg.norm(v)


def statistics_preserved(original, rewritten, trials=20, seed=0, basis="x", tol=1e-10,
                         max_dense_qubits=DENSE_LIMIT):
    """Compare acceptance probabilities of two circuits on shared random proofs."""
    w = len(original.proof_qubits)
    if len(rewritten.proof_qubits) != w:
        raise SimulationError("circuits have different proof registers")
    rng = np.random.default_rng(seed)
    diffs = []
    for _ in range(trials):
        xi = random_proof(w, rng)
        a = acceptance(original, xi, basis, max_dense_qubits).probability
        b = acceptance(rewritten, xi, basis, max_dense_qubits).probability
        diffs.append(abs(a - b))
    return StatisticsReport(max(diffs) if diffs else 0.0, diffs, tol)
