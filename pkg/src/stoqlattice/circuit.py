"""Verification-circuit IR and the two rewrites used before the clock
construction: swap-network routing to nearest-neighbour gates and the
row-by-row spatially sparse layout.

Qubit roles are single characters: 'i' input, 'w' proof, '0' zero-ancilla,
'+' plus-ancilla.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "CircuitError", "Gate", "RegisterLayout", "SparseLayout", "Circuit",
    "validate", "decompose_long_range_toffoli", "route_gate", "expand_swaps",
    "to_nearest_neighbour", "to_spatially_sparse", "is_nearest_neighbour",
    "parse_circuit", "format_circuit", "random_circuit",
]

GATE_ARITY = {"X": 1, "CNOT": 2, "TOFFOLI": 3, "SWAP": 2}
ROLE_CHARS = "iw0+"


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple

    def __post_init__(self):
        kind = self.kind.upper()
        if kind not in GATE_ARITY:
            raise CircuitError(f"unknown gate kind {self.kind!r}")
        qs = tuple(int(q) for q in self.qubits)
        if len(qs) != GATE_ARITY[kind]:
            raise CircuitError(f"{kind} takes {GATE_ARITY[kind]} qubits, got {len(qs)}")
        if len(set(qs)) != len(qs):
            raise CircuitError(f"duplicate qubit in {kind} {qs}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "qubits", qs)

    @property
    def range(self):
        return max(self.qubits) - min(self.qubits)

    def relabel(self, mapping):
        return Gate(self.kind, tuple(mapping(q) for q in self.qubits))

    def __str__(self):
        return " ".join([self.kind] + [str(q) for q in self.qubits])


@dataclass(frozen=True)
class RegisterLayout:
    n: int
    w: int
    m: int
    p: int

    @property
    def M(self):
        return self.n + self.w + self.m + self.p

    def roles(self):
        return "i" * self.n + "w" * self.w + "0" * self.m + "+" * self.p


@dataclass(frozen=True)
class SparseLayout:
    """T rows of M qubits; qubit (row, col) has flat index row * M + col.

    `steps` lists, for each clock time step in snake order, the index of the
    operation applied at that step or None for an identity step.
    """
    rows: int
    cols: int
    steps: tuple

    def qubit_of(self, row, col):
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise IndexError(f"({row}, {col}) outside {self.rows}x{self.cols} grid")
        return row * self.cols + col

    def position(self, q):
        return divmod(q, self.cols)

    @property
    def time_cursor(self):
        return [(op, t) for t, op in enumerate(self.steps) if op is not None]

    @property
    def num_steps(self):
        return len(self.steps)


@dataclass(frozen=True)
class Circuit:
    layout: RegisterLayout
    gates: tuple = ()
    input_string: str = ""
    output_qubit: int = 0
    roles: str = None
    sparse: SparseLayout = None

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if self.roles is None:
            object.__setattr__(self, "roles", self.layout.roles())
        if not self.input_string and self.layout.n:
            object.__setattr__(self, "input_string", "0" * self.layout.n)

    @property
    def T(self):
        return len(self.gates)

    @property
    def num_qubits(self):
        return len(self.roles)

    def qubits_with_role(self, role):
        return [q for q, r in enumerate(self.roles) if r == role]

    @property
    def input_qubits(self):
        return self.qubits_with_role("i")

    @property
    def proof_qubits(self):
        return self.qubits_with_role("w")

    def with_gates(self, gates):
        return replace(self, gates=tuple(gates), sparse=None)


def validate(circuit, allow_odd_p=False):
    lay = circuit.layout
    if min(lay.n, lay.w, lay.m, lay.p) < 0:
        raise CircuitError("register counts must be non-negative")
    if lay.p % 2 and not allow_odd_p:
        raise CircuitError(f"number of plus-ancillae must be even, got p={lay.p}")
    N = circuit.num_qubits
    if N < 1:
        raise CircuitError("circuit needs at least one qubit")
    if any(r not in ROLE_CHARS for r in circuit.roles):
        raise CircuitError(f"bad role string {circuit.roles!r}")
    counts = [circuit.roles.count(c) for c in ROLE_CHARS]
    if counts != [lay.n, lay.w, lay.m, lay.p]:
        raise CircuitError(f"role string {circuit.roles!r} disagrees with registers {lay}")
    if len(circuit.input_string) != lay.n or any(c not in "01" for c in circuit.input_string):
        raise CircuitError(f"input string must be {lay.n} bits, got {circuit.input_string!r}")
    if not 0 <= circuit.output_qubit < N:
        raise CircuitError(f"output qubit {circuit.output_qubit} out of range")
    for g in circuit.gates:
        bad = [q for q in g.qubits if not 0 <= q < N]
        if bad:
            raise CircuitError(f"gate '{g}' uses qubit {bad[0]} outside [0, {N})")
    if circuit.sparse is not None:
        if circuit.sparse.rows * circuit.sparse.cols != N:
            raise CircuitError("sparse grid does not cover the register")
    return circuit


def _move_swaps(src, dst):
    """Adjacent SWAPs carrying the qubit at `src` to position `dst`."""
    step = 1 if dst > src else -1
    return [Gate("SWAP", (min(q, q + step), max(q, q + step))) for q in range(src, dst, step)]


def route_gate(g):
    """Swap network that brings a long-range gate onto adjacent qubits.

    Gates of range <= 2 are returned unchanged. A Toffoli on sorted positions
    a < b < c has a moved to b-1 and c moved to b+1 with b fixed; two-qubit
    gates have their lower qubit moved next to the upper one.
    """
    if g.range <= 2:
        return [g]
    if g.kind == "TOFFOLI":
        a, b, c = sorted(g.qubits)
        forward = _move_swaps(a, b - 1) + _move_swaps(c, b + 1)
        pos = {a: b - 1, b: b, c: b + 1}
    else:
        lo, hi = sorted(g.qubits)
        forward = _move_swaps(lo, hi - 1)
        pos = {lo: hi - 1, hi: hi}
    local = Gate(g.kind, tuple(pos[q] for q in g.qubits))
    return forward + [local] + forward[::-1]


def decompose_long_range_toffoli(g):
    if g.kind != "TOFFOLI":
        raise CircuitError(f"expected a TOFFOLI, got {g.kind}")
    return route_gate(g)


def expand_swaps(gates):
    """Replace each SWAP(a, b) by CNOT(a,b) CNOT(b,a) CNOT(a,b)."""
    out = []
    for g in gates:
        if g.kind == "SWAP":
            a, b = g.qubits
            out += [Gate("CNOT", (a, b)), Gate("CNOT", (b, a)), Gate("CNOT", (a, b))]
        else:
            out.append(g)
    return out


def is_nearest_neighbour(circuit):
    return all(g.range <= 2 for g in circuit.gates)


def to_nearest_neighbour(circuit):
    validate(circuit)
    if is_nearest_neighbour(circuit):
        return circuit
    gates = [h for g in circuit.gates for h in route_gate(g)]
    return circuit.with_gates(gates)


def _snake_steps(row_gates, M):
    """Clock steps for the sparse circuit: M steps per row (the row gate sits
    at the step of its lowest column) and M steps per swap round."""
    steps = []
    op = 0
    for j, g in enumerate(row_gates):
        if j > 0:
            for _ in range(M):
                steps.append(op)
                op += 1
        row = [None] * M
        row[min(g.qubits) % M] = op
        op += 1
        steps.extend(row)
    return tuple(steps)


def to_spatially_sparse(circuit):
    """Give every gate its own row of M qubits, moving the register down one
    row between consecutive gates with M inter-row SWAPs.

    Returns the rewritten circuit and its SparseLayout. Fresh rows hold zero
    ancillae in the input/proof/zero columns and plus ancillae in the plus
    columns; the output qubit moves to the final row.
    """
    validate(circuit)
    if not is_nearest_neighbour(circuit):
        raise CircuitError("spatially sparse rewrite needs a nearest-neighbour circuit")
    if circuit.sparse is not None:
        raise CircuitError("circuit is already spatially sparse")
    T, M = circuit.T, circuit.num_qubits
    if T == 0:
        raise CircuitError("circuit has no gates")
    gates = []
    for j, g in enumerate(circuit.gates):
        if j > 0:
            for q in range(M, 0, -1):
                gates.append(Gate("SWAP", ((j - 1) * M + q - 1, j * M + q - 1)))
        gates.append(g.relabel(lambda q, j=j: j * M + q))
    later = "".join("+" if r == "+" else "0" for r in circuit.roles)
    roles = circuit.roles + later * (T - 1)
    lay = circuit.layout
    new_layout = RegisterLayout(lay.n, lay.w, roles.count("0"), roles.count("+"))
    sparse = SparseLayout(T, M, _snake_steps(circuit.gates, M))
    out = Circuit(new_layout, gates, circuit.input_string,
                  (T - 1) * M + circuit.output_qubit, roles, sparse)
    return validate(out), sparse


def _sparse_from_gates(gates, T, M):
    if len(gates) != T + M * (T - 1):
        raise CircuitError(f"sparse circuit with T={T}, M={M} needs {T + M * (T - 1)} operations")
    row_gates = [gates[j * (M + 1)] for j in range(T)]
    return SparseLayout(T, M, _snake_steps(row_gates, M))


def format_circuit(circuit):
    lay = circuit.layout
    lines = [f"registers n={lay.n} w={lay.w} m={lay.m} p={lay.p}"]
    if lay.n:
        lines.append(f"input {circuit.input_string}")
    if circuit.roles != lay.roles():
        lines.append(f"roles {circuit.roles}")
    if circuit.output_qubit != 0:
        lines.append(f"output {circuit.output_qubit}")
    if circuit.sparse is not None:
        lines.append(f"sparse {circuit.sparse.rows} {circuit.sparse.cols}")
    lines += [str(g) for g in circuit.gates]
    return "\n".join(lines) + "\n"


def parse_circuit(text):
    layout = None
    input_string = ""
    roles = None
    output = 0
    sparse_dims = None
    gates = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0]
        try:
            if key == "registers":
                vals = dict(p.split("=") for p in parts[1:])
                layout = RegisterLayout(*(int(vals[k]) for k in "nwmp"))
            elif key == "input":
                input_string = parts[1] if len(parts) > 1 else ""
            elif key == "roles":
                roles = parts[1]
            elif key == "output":
                output = int(parts[1])
            elif key == "sparse":
                sparse_dims = (int(parts[1]), int(parts[2]))
            elif key.upper() in GATE_ARITY:
                gates.append(Gate(key, tuple(int(q) for q in parts[1:])))
            else:
                raise CircuitError(f"unknown directive {key!r}")
        except CircuitError as exc:
            raise CircuitError(f"line {lineno}: {exc}") from None
        except (KeyError, IndexError, ValueError) as exc:
            raise CircuitError(f"line {lineno}: malformed '{line}' ({exc})") from None
    if layout is None:
        raise CircuitError("missing 'registers' header")
    circ = Circuit(layout, gates, input_string, output, roles)
    if sparse_dims is not None:
        circ = replace(circ, sparse=_sparse_from_gates(circ.gates, *sparse_dims))
    return validate(circ)


def random_circuit(layout, T, rng, nearest_neighbour=False, kinds=("X", "CNOT", "TOFFOLI"),
                   output_qubit=None, input_string=None):
    """Random circuit over `kinds`; with nearest_neighbour every gate has range <= 2."""
    rng = np.random.default_rng(rng)
    M = layout.M
    kinds = [k for k in kinds if GATE_ARITY[k] <= M]
    gates = []
    for _ in range(T):
        kind = kinds[rng.integers(len(kinds))]
        k = GATE_ARITY[kind]
        if nearest_neighbour:
            span = min(3, M)
            start = int(rng.integers(M - span + 1))
            qs = rng.permutation(np.arange(start, start + span))[:k]
        else:
            qs = rng.permutation(M)[:k]
        gates.append(Gate(kind, tuple(int(q) for q in qs)))
    if input_string is None:
        input_string = "".join(str(b) for b in rng.integers(0, 2, layout.n))
    out = int(rng.integers(M)) if output_qubit is None else output_qubit
    return validate(Circuit(layout, gates, input_string, out))
