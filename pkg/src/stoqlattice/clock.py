"""Feynman-Kitaev clock Hamiltonians for verification circuits.

System qubits come first (indices 0..N-1) followed by the unary clock
register c_1..c_T (indices N..N+T-1). The clock state after t steps is
1^t 0^(T-t).

Variants
--------
MA_PLAIN, STOQMA_PLAIN
    one clock qubit per gate, input checks tied to c_1.
MA_SPARSE, STOQMA_SPARSE
    for circuits produced by ``to_spatially_sparse``: one clock qubit per
    snake step, (2T-1)M of them, plus a leading and a trailing identity step
    for the StoqMA variant. Input checks use the three-qubit window around
    each qubit's first step.

The MA variants add the Z-basis output penalty with weight 1; the StoqMA
variants add delta times the X-basis penalty |-><-|.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .circuit import Circuit, CircuitError, Gate
from .hamiltonian import Hamiltonian, LocalTerm, kron_all, spectrum
from .simulate import acceptance, circuit_permutation, initial_state, optimal_proof, unitary

__all__ = [
    "MA_PLAIN", "MA_SPARSE", "STOQMA_PLAIN", "STOQMA_SPARSE", "VARIANTS",
    "ClockError", "ClockConfig", "ClockHamiltonian", "HistoryState", "PromiseReport",
    "clock_count", "default_delta", "build", "history_state", "promise_report",
    "clock_index",
]

MA_PLAIN = "MA_PLAIN"
MA_SPARSE = "MA_SPARSE"
STOQMA_PLAIN = "STOQMA_PLAIN"
STOQMA_SPARSE = "STOQMA_SPARSE"
VARIANTS = (MA_PLAIN, MA_SPARSE, STOQMA_PLAIN, STOQMA_SPARSE)

KET_MINUS = np.array([1, -1]) / np.sqrt(2)
P0 = np.diag([1.0, 0.0]).astype(complex)
P1 = np.diag([0.0, 1.0]).astype(complex)
PMINUS = np.outer(KET_MINUS, KET_MINUS).astype(complex)


class ClockError(ValueError):
    pass


def _norm_variant(v):
    v = str(v).upper().replace("-", "_")
    if v not in VARIANTS:
        raise ClockError(f"unknown clock variant {v!r}")
    return v


@dataclass(frozen=True)
class ClockConfig:
    variant: str = STOQMA_PLAIN
    delta: float = None

    def __post_init__(self):
        object.__setattr__(self, "variant", _norm_variant(self.variant))
        if self.delta is not None and self.delta <= 0:
            raise ClockError("delta must be positive")

    @property
    def sparse(self):
        return self.variant.endswith("SPARSE")

    @property
    def stoqma(self):
        return self.variant.startswith("STOQMA")

    @property
    def basis(self):
        return "x" if self.stoqma else "z"


def clock_count(circuit, variant):
    variant = _norm_variant(variant)
    if variant.endswith("SPARSE"):
        if circuit.sparse is None:
            raise ClockError(f"{variant} needs a spatially sparse circuit (run to_spatially_sparse first)")
        base = circuit.sparse.num_steps
        return base + 2 if variant == STOQMA_SPARSE else base
    return circuit.T


def default_delta(num_clock):
    return 1.0 / (8.0 * num_clock ** 3)


@dataclass
class ClockHamiltonian:
    """H = H_in + H_clock + H_prop + weight * H_out and its pieces."""
    hamiltonian: Hamiltonian
    parts: dict
    config: ClockConfig
    circuit: Circuit
    num_system: int
    num_clock: int
    steps: list            # operator applied at each clock step (Gate or None)
    weight: float          # coefficient of H_out inside `hamiltonian`

    @property
    def clock_qubits(self):
        return list(range(self.num_system, self.num_system + self.num_clock))

    @property
    def num_qubits(self):
        return self.num_system + self.num_clock

    def penalty(self):
        """H_in + H_clock + H_prop, whose kernel holds the history states."""
        return self.parts["in"] + self.parts["clock"] + self.parts["prop"]

    def with_weight(self, weight):
        H = self.penalty() + self.parts["out"].scaled(weight)
        return ClockHamiltonian(H, self.parts, self.config, self.circuit, self.num_system,
                                self.num_clock, self.steps, weight)


def _ket(bits):
    v = np.zeros(2 ** len(bits))
    v[int(bits, 2)] = 1.0
    return v


def _proj(bits):
    v = _ket(bits)
    return np.outer(v, v).astype(complex)


def _flip(a, b):
    return (np.outer(_ket(a), _ket(b)) + np.outer(_ket(b), _ket(a))).astype(complex)


def _local_gate_matrix(gate):
    """Permutation matrix of a gate on its own sorted support."""
    support = sorted(gate.qubits)
    local = Gate(gate.kind, tuple(support.index(q) for q in gate.qubits))
    return support, unitary([local], len(support))


def _prop_term(gate, clocks, before, after):
    """|before><before| + |after><after| - R (x) (|after><before| + h.c.)."""
    diag = _proj(before) + _proj(after)
    hop = _flip(after, before)
    if gate is None:
        return LocalTerm(clocks, diag - hop)
    support, R = _local_gate_matrix(gate)
    eye = np.eye(R.shape[0])
    block = np.kron(eye, diag) - np.kron(R, hop)
    return LocalTerm(support + list(clocks), block)


def _window(t, num_clock, offset):
    """Clock qubits and pattern for "exactly t-1 steps done", folding the
    fixed boundary flags c_0 = 1 and c_{T+1} = 0 into the neighbours."""
    qs, bits = [], ""
    for s, b in ((t - 1, "1"), (t, "0"), (t + 1, "0")):
        if 1 <= s <= num_clock:
            qs.append(offset + s - 1)
            bits += b
    return qs, bits


def _prop_window(t, num_clock, offset):
    """Clock qubits and (before, after) patterns for step t."""
    qs, before, after = [], "", ""
    for s, b, a in ((t - 1, "1", "1"), (t, "0", "1"), (t + 1, "0", "0")):
        if 1 <= s <= num_clock:
            qs.append(offset + s - 1)
            before += b
            after += a
    return qs, before, after


def _first_touch(steps, N):
    first = {}
    for t, g in enumerate(steps, 1):
        if g is None:
            continue
        for q in g.qubits:
            first.setdefault(q, t)
    return [first.get(q, 1) for q in range(N)]


def build(circuit, config=None, proof_hint=None):
    """Assemble the clock Hamiltonian for `circuit`.

    Returns a ClockHamiltonian; `parts` maps 'in', 'clock', 'prop', 'out' to
    separate Hamiltonians on the full register. `proof_hint` is accepted for
    interface symmetry and does not affect the operator.
    """
    config = config or ClockConfig()
    if circuit.T < 1:
        raise ClockError("clock construction needs at least one gate")
    Tc = clock_count(circuit, config.variant)
    N = circuit.num_qubits
    n_tot = N + Tc
    if config.sparse:
        base = [None if op is None else circuit.gates[op] for op in circuit.sparse.steps]
        steps = [None] + base + [None] if config.variant == STOQMA_SPARSE else base
    else:
        steps = list(circuit.gates)
    assert len(steps) == Tc

    H_in = Hamiltonian(n_tot)
    H_clock = Hamiltonian(n_tot)
    H_prop = Hamiltonian(n_tot)
    H_out = Hamiltonian(n_tot)

    first = _first_touch(steps, N)
    bits = iter(circuit.input_string)
    for q, role in enumerate(circuit.roles):
        if role == "w":
            continue
        if role == "i":
            op = P1 if next(bits) == "0" else P0
        elif role == "0":
            op = P1
        else:
            op = PMINUS
        if config.sparse:
            qs, pattern = _window(first[q], Tc, N)
        else:
            qs, pattern = [N], "0"
        H_in.add(LocalTerm([q] + qs, np.kron(op, _proj(pattern))))

    for t in range(1, Tc):
        H_clock.add(LocalTerm([N + t - 1, N + t], _proj("01")))

    for t in range(1, Tc + 1):
        qs, before, after = _prop_window(t, Tc, N)
        H_prop.add(_prop_term(steps[t - 1], qs, before, after))

    out_op = PMINUS if config.stoqma else P0
    H_out.add(LocalTerm([circuit.output_qubit, N + Tc - 1], np.kron(out_op, P1)))

    if config.stoqma:
        weight = config.delta if config.delta is not None else default_delta(Tc)
    else:
        weight = 1.0
    parts = {"in": H_in, "clock": H_clock, "prop": H_prop, "out": H_out}
    H = H_in + H_clock + H_prop + H_out.scaled(weight)
    return ClockHamiltonian(H, parts, config, circuit, N, Tc, steps, weight)


def clock_index(t, num_clock):
    """Basis index of the unary clock state 1^t 0^(T-t)."""
    return ((1 << t) - 1) << (num_clock - t)


@dataclass
class HistoryState:
    state: np.ndarray
    proof_used: np.ndarray
    num_qubits: int


def history_state(clock_ham, proof=None, max_qubits=24):
    """(T+1)^(-1/2) sum_t R_t...R_1 |phi_0> |1^t 0^(T-t)>."""
    circ = clock_ham.circuit
    N, Tc = clock_ham.num_system, clock_ham.num_clock
    if N + Tc > max_qubits:
        raise ClockError(f"history state on {N + Tc} qubits exceeds limit {max_qubits}")
    phi = initial_state(circ, proof)
    psi = np.zeros(2 ** (N + Tc), dtype=complex)
    sys_idx = np.arange(2 ** N, dtype=np.int64) << Tc
    cur = phi
    for t in range(Tc + 1):
        if t > 0 and clock_ham.steps[t - 1] is not None:
            perm = circuit_permutation([clock_ham.steps[t - 1]], N)
            nxt = np.empty_like(cur)
            nxt[perm] = cur
            cur = nxt
        psi[sys_idx + clock_index(t, Tc)] += cur
    psi /= np.sqrt(Tc + 1)
    xi = phi if proof is None else proof
    return HistoryState(psi, np.asarray(xi), N + Tc)


@dataclass
class PromiseReport:
    lambda0: float
    alpha_star: float
    weight: float
    num_clock: int
    first_order: float          # weight * (1 - alpha*) / (T + 1)
    gap_estimate: float
    ground_degeneracy: int
    tol: float = 1e-9

    @property
    def lambda0_yes(self):
        return self.lambda0

    @property
    def lambda0_no_bound(self):
        return self.first_order

    @property
    def within_yes_bound(self):
        return self.lambda0 <= self.first_order + self.tol

    @property
    def second_order_deficit(self):
        return max(0.0, self.first_order - self.lambda0)


def promise_report(circuit, config=None, tol=1e-9, max_dense_qubits=14):
    """Ground energy of the clock Hamiltonian against the first-order value
    weight*(1-alpha*)/(T+1), with alpha* the optimal acceptance probability,
    plus the gap of the unperturbed penalty above its 2^w-fold kernel."""
    ch = build(circuit, config)
    n = ch.num_qubits
    w = len(circuit.proof_qubits)
    mode = "dense" if n <= max_dense_qubits else "iterative"
    lam0 = spectrum(ch.hamiltonian, 1, mode, max_dense_qubits=max_dense_qubits).eigenvalues[0]
    if w:
        alpha, _ = optimal_proof(circuit, ch.config.basis)
    else:
        alpha = acceptance(circuit, None, ch.config.basis).probability
    deg = 2 ** w
    ev = spectrum(ch.penalty(), deg + 1, mode, max_dense_qubits=max_dense_qubits).eigenvalues
    gap = float(ev[deg]) if len(ev) > deg else float("nan")
    first = ch.weight * (1 - alpha) / (ch.num_clock + 1)
    return PromiseReport(float(lam0), float(alpha), ch.weight, ch.num_clock, float(first),
                         gap, deg, tol)
