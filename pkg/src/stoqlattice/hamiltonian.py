"""Local Hamiltonians: term storage, stoquasticity, Pauli and rho-matrix
decompositions, spectra and interaction graphs.

Qubit 0 is the most significant bit of a computational basis index, and a
term's block is written in the order of its (sorted) support.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
import scipy.sparse as sp
import scipy.linalg as sla
import scipy.sparse.linalg as spla

__all__ = [
    "PAULI", "RHO", "ADJOINT_MU", "rho", "kron_all",
    "LocalTerm", "Hamiltonian", "RhoString", "Spectrum", "SpectrumError",
    "HamiltonianFormatError", "is_stoquastic", "pauli_decompose",
    "pauli_matrix", "rho_decompose", "rho_reassemble", "spectrum",
    "interaction_graph", "format_hamiltonian", "parse_hamiltonian",
]

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# rho^0 = |0><0|, rho^1 = |0><1|, rho^2 = |1><0|, rho^3 = |1><1|
RHO = np.zeros((4, 2, 2), dtype=complex)
RHO[0, 0, 0] = RHO[1, 0, 1] = RHO[2, 1, 0] = RHO[3, 1, 1] = 1.0
# index of the adjoint rho-matrix
ADJOINT_MU = (0, 2, 1, 3)

DENSE_LIMIT = 14
ITERATIVE_LIMIT = 24


def rho(mu):
    return RHO[mu].copy()


def kron_all(mats):
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def _scale(a):
    a = np.asarray(a)
    return max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0


class LocalTerm:
    """A Hermitian block acting on a sorted set of qubits."""

    __slots__ = ("support", "block")

    def __init__(self, support, block, check=True):
        support = tuple(int(q) for q in support)
        block = np.array(block, dtype=complex)
        k = len(support)
        if block.shape != (2 ** k, 2 ** k):
            raise ValueError(f"block shape {block.shape} does not match support of size {k}")
        if len(set(support)) != k:
            raise ValueError(f"repeated qubit in support {support}")
        order = np.argsort(support, kind="stable")
        if k > 1 and np.any(order != np.arange(k)):
            t = block.reshape([2] * (2 * k))
            t = t.transpose(list(order) + [k + i for i in order])
            block = t.reshape(2 ** k, 2 ** k)
            support = tuple(support[i] for i in order)
        if check and not np.allclose(block, block.conj().T, rtol=0, atol=1e-12 * _scale(block)):
            raise ValueError(f"block on {support} is not Hermitian")
        self.support = support
        self.block = block

    @property
    def k(self):
        return len(self.support)

    def scaled(self, c):
        return LocalTerm(self.support, c * self.block, check=False)

    def relabel(self, mapping):
        return LocalTerm([mapping[q] for q in self.support], self.block, check=False)

    def is_diagonal(self, tol=1e-12):
        off = self.block - np.diag(np.diag(self.block))
        return bool(np.all(np.abs(off) <= tol))

    def matrix(self, num_qubits):
        return embed_sparse(self.block, self.support, num_qubits).toarray()

    def __repr__(self):
        return f"LocalTerm(support={self.support}, k={self.k})"


def _basis_offsets(num_qubits, support):
    k = len(support)
    off = np.zeros(2 ** k, dtype=np.int64)
    for r in range(2 ** k):
        val = 0
        for i, q in enumerate(support):
            if (r >> (k - 1 - i)) & 1:
                val |= 1 << (num_qubits - 1 - q)
        off[r] = val
    return off


def _free_bases(num_qubits, support):
    """Basis indices whose bits on `support` are all zero."""
    idx = np.arange(2 ** num_qubits, dtype=np.int64)
    mask = np.zeros_like(idx)
    for q in support:
        mask |= 1 << (num_qubits - 1 - q)
    return idx[(idx & mask) == 0]


def embed_sparse(block, support, num_qubits):
    block = np.asarray(block)
    off = _basis_offsets(num_qubits, support)
    bases = _free_bases(num_qubits, support)
    rr, cc = np.nonzero(block)
    if len(rr) == 0:
        return sp.csr_matrix((2 ** num_qubits, 2 ** num_qubits), dtype=complex)
    rows = (bases[None, :] + off[rr][:, None]).ravel()
    cols = (bases[None, :] + off[cc][:, None]).ravel()
    vals = np.repeat(block[rr, cc], len(bases))
    dim = 2 ** num_qubits
    return sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim))


class Hamiltonian:
    """H = offset * I + sum of local terms on `num_qubits` qubits."""

    def __init__(self, num_qubits, terms=(), offset=0.0):
        self.num_qubits = int(num_qubits)
        self.offset = float(offset)
        self.terms = []
        for t in terms:
            self.add(t)

    def add(self, term, block=None):
        if block is not None:
            term = LocalTerm(term, block)
        if any(q < 0 or q >= self.num_qubits for q in term.support):
            raise ValueError(f"term support {term.support} outside [0, {self.num_qubits})")
        self.terms.append(term)
        return self

    def add_operator(self, ops, coefficient=1.0):
        """Add coefficient * tensor product of single-qubit operators {qubit: 2x2}."""
        support = sorted(ops)
        block = coefficient * kron_all([ops[q] for q in support])
        return self.add(LocalTerm(support, block))

    @property
    def locality(self):
        return max((t.k for t in self.terms), default=0)

    def copy(self):
        return Hamiltonian(self.num_qubits, list(self.terms), self.offset)

    def scaled(self, c):
        return Hamiltonian(self.num_qubits, [t.scaled(c) for t in self.terms], c * self.offset)

    def extended(self, num_qubits):
        if num_qubits < self.num_qubits:
            raise ValueError("cannot shrink a Hamiltonian")
        return Hamiltonian(num_qubits, self.terms, self.offset)

    def relabel(self, mapping, num_qubits=None):
        n = self.num_qubits if num_qubits is None else num_qubits
        return Hamiltonian(n, [t.relabel(mapping) for t in self.terms], self.offset)

    def __add__(self, other):
        n = max(self.num_qubits, other.num_qubits)
        return Hamiltonian(n, self.terms + other.terms, self.offset + other.offset)

    def merged(self):
        """Sum the blocks of terms sharing a support."""
        acc = {}
        for t in self.terms:
            if t.support in acc:
                acc[t.support] = acc[t.support] + t.block
            else:
                acc[t.support] = t.block.copy()
        terms = [LocalTerm(s, b, check=False) for s, b in acc.items()]
        return Hamiltonian(self.num_qubits, terms, self.offset)

    def supports(self):
        return sorted({t.support for t in self.terms})

    def sparse(self):
        dim = 2 ** self.num_qubits
        out = sp.identity(dim, dtype=complex, format="csr") * self.offset
        for t in self.terms:
            out = out + embed_sparse(t.block, t.support, self.num_qubits)
        out.sum_duplicates()
        return out.tocsr()

    def dense(self):
        if self.num_qubits > 16:
            raise ValueError(f"{self.num_qubits} qubits is too many for a dense matrix")
        return self.sparse().toarray()

    def apply(self, vec):
        """H @ vec by local tensor contractions (no global matrix)."""
        n = self.num_qubits
        vec = np.asarray(vec, dtype=complex)
        psi = vec.reshape([2] * n) if n else vec.reshape(())
        out = self.offset * psi
        for t in self.terms:
            k = t.k
            op = t.block.reshape([2] * (2 * k))
            y = np.tensordot(op, psi, axes=(list(range(k, 2 * k)), list(t.support)))
            out = out + np.moveaxis(y, list(range(k)), list(t.support))
        return out.reshape(-1)

    def expectation(self, vec):
        vec = np.asarray(vec, dtype=complex)
        return float(np.real(np.vdot(vec, self.apply(vec))))

    def __repr__(self):
        return (f"Hamiltonian(num_qubits={self.num_qubits}, terms={len(self.terms)}, "
                f"offset={self.offset:g}, locality={self.locality})")


def _offdiag_witness(mat, tol):
    """First off-diagonal entry with positive real part or non-zero imaginary part."""
    if sp.issparse(mat):
        coo = mat.tocoo()
        rows, cols, vals = coo.row, coo.col, coo.data
    else:
        mat = np.asarray(mat)
        rows, cols = np.nonzero(mat)
        vals = mat[rows, cols]
    keep = rows != cols
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    bad = (vals.real > tol) | (np.abs(vals.imag) > tol)
    if not np.any(bad):
        return None
    i = int(np.flatnonzero(bad)[np.lexsort((cols[bad], rows[bad]))[0]])
    v = vals[i]
    value = float(v.real) if abs(v.imag) <= tol else complex(v)
    return int(rows[i]), int(cols[i]), value


def is_stoquastic(H, tol=1e-12, termwise=False):
    """Check that off-diagonal entries are <= tol (and real).

    Returns (ok, witness); the witness is (row, col, value) of a violating
    entry, with the term index prepended in term-wise mode.
    """
    if isinstance(H, LocalTerm):
        w = _offdiag_witness(H.block, tol)
        return w is None, w
    if not isinstance(H, Hamiltonian):
        w = _offdiag_witness(H, tol)
        return w is None, w
    if termwise:
        for i, t in enumerate(H.terms):
            w = _offdiag_witness(t.block, tol)
            if w is not None:
                return False, (i,) + w
        return True, None
    mat = H.dense() if H.num_qubits <= DENSE_LIMIT else H.sparse()
    w = _offdiag_witness(mat, tol)
    return w is None, w


def pauli_matrix(label):
    return kron_all([PAULI[c] for c in label])


def pauli_decompose(term, tol=1e-14):
    """Expand a block (or LocalTerm) in the tensor Pauli basis.

    Returns a list of (coefficient, label) with labels like "XI" in support
    order; coefficients are real when the block is Hermitian.
    """
    block = term.block if isinstance(term, LocalTerm) else np.asarray(term, dtype=complex)
    dim = block.shape[0]
    k = int(round(np.log2(dim)))
    if 2 ** k != dim or block.shape != (dim, dim):
        raise ValueError("block dimension must be a power of two")
    if k > 8:
        raise ValueError("pauli_decompose supports at most 8 qubits")
    labels = "IXYZ"
    # W[p, a, b] = conj(P_p[a, b]) / 2
    W = np.array([PAULI[c].conj() / 2 for c in labels])
    t = block.reshape([2] * (2 * k))
    # interleave row and column axes per qubit
    t = t.transpose([x for i in range(k) for x in (i, k + i)])
    for i in range(k):
        # axes 0..i-1 already hold Pauli indices
        t = np.tensordot(W, t, axes=([1, 2], [i, i + 1]))
        t = np.moveaxis(t, 0, i)
    coeffs = t.reshape(-1) if k else t.reshape(1)
    hermitian = np.allclose(block, block.conj().T, atol=1e-12 * _scale(block))
    out = []
    for idx, lab in enumerate(itertools.product(labels, repeat=k)):
        c = coeffs[idx]
        if abs(c) <= tol * _scale(block):
            continue
        out.append((float(c.real) if hermitian else complex(c), "".join(lab)))
    return out


@dataclass(frozen=True)
class RhoString:
    """coefficient * rho^{mu_1}_{q_1} ... rho^{mu_k}_{q_k} with coefficient >= 0."""

    coefficient: float
    factors: tuple

    def __post_init__(self):
        if self.coefficient < 0:
            raise ValueError("rho-string coefficients must be non-negative")
        qs = [q for q, _ in self.factors]
        if len(set(qs)) != len(qs):
            raise ValueError("rho-string qubits must be distinct")

    @property
    def support(self):
        return tuple(q for q, _ in self.factors)

    @property
    def mus(self):
        return tuple(m for _, m in self.factors)

    def adjoint(self):
        return RhoString(self.coefficient, tuple((q, ADJOINT_MU[m]) for q, m in self.factors))

    def is_self_adjoint(self):
        return all(m in (0, 3) for m in self.mus)

    def block(self):
        return self.coefficient * kron_all([RHO[m] for m in self.mus])


def _bits(x, k):
    return [(x >> (k - 1 - i)) & 1 for i in range(k)]


def term_rho_strings(term, tol=1e-12):
    """Shift a stoquastic term by its largest diagonal entry and read off the
    non-negative rho-string weights of minus the shifted block."""
    block = term.block
    k = term.k
    w = _offdiag_witness(block, tol)
    if w is not None:
        raise ValueError(f"term on {term.support} is not stoquastic: entry {w}")
    diag = np.real(np.diag(block))
    shift = float(np.max(diag)) if k else float(np.real(block[0, 0]))
    neg = -(np.real(block) - shift * np.eye(2 ** k))
    strings = []
    for r, c in zip(*np.nonzero(np.abs(neg) > 0)):
        h = float(neg[r, c])
        if h <= tol * _scale(block):
            continue
        mus = [int(2 * a + b) for a, b in zip(_bits(int(r), k), _bits(int(c), k))]
        strings.append(RhoString(h, tuple(zip(term.support, mus))))
    return shift, strings


def rho_decompose(H, tol=1e-12):
    """Write a stoquastic H as K - sum_j h_j rho...rho with every h_j >= 0.

    Each merged term is shifted by its own largest diagonal entry; the shifts
    (plus H.offset) make up K.
    """
    H = H.merged()
    K = H.offset
    strings = []
    for t in H.terms:
        shift, s = term_rho_strings(t, tol)
        K += shift
        strings.extend(s)
    return K, strings


def rho_reassemble(K, strings, num_qubits):
    """Dense matrix of K - sum h rho-string."""
    dim = 2 ** num_qubits
    out = K * np.eye(dim, dtype=complex)
    for s in strings:
        out -= embed_sparse(s.block(), s.support, num_qubits).toarray() if s.support else s.coefficient * np.eye(dim)
    return out


def _dense_lowest(mat, k, vectors):
    dim = mat.shape[0]
    if k < dim // 4:
        out = sla.eigh(mat, subset_by_index=[0, k - 1], eigvals_only=not vectors)
    else:
        out = sla.eigh(mat, eigvals_only=not vectors)
    if vectors:
        w, v = out
        return w[:k], v[:, :k]
    return out[:k], None


def _eigsh(op, k, v0, tol, maxiter):
    try:
        w, v = spla.eigsh(op, k=k, which="SA", v0=v0, tol=tol, maxiter=maxiter)
    except spla.ArpackNoConvergence as exc:
        raise SpectrumError(f"eigsh did not converge within {maxiter} iterations",
                            getattr(exc, "eigenvalues", None)) from exc
    order = np.argsort(w)
    return w[order], v[:, order]


def _lanczos_deflated(mat, k, tol, maxiter, seed, max_passes=None):
    """Lowest k eigenpairs by eigsh with deflation restarts.

    A Krylov space grown from one vector holds a single direction of each
    exactly degenerate eigenspace, so one pass can skip copies of a
    degenerate level. Each further pass lifts the vectors found so far by a
    shift above the spectrum and starts again from a fresh random vector;
    passes stop once nothing new turns up below the current k-th value.
    """
    dim = mat.shape[0]
    rng = np.random.default_rng(seed)
    w, v = _eigsh(mat, k, rng.standard_normal(dim), tol, maxiter)
    # any bound above the largest eigenvalue minus the smallest will do
    shift = 2.0 * float(np.max(np.abs(mat).sum(axis=1))) + 1.0
    for _ in range(max_passes or k):
        Q = v
        op = spla.LinearOperator(mat.shape, dtype=mat.dtype,
                                 matvec=lambda x, Q=Q: mat @ x + shift * (Q @ (Q.conj().T @ x)))
        w2, v2 = _eigsh(op, k, rng.standard_normal(dim), tol, maxiter)
        # vectors of the deflated operator below the current k-th value are new
        new = w2 < w[-1] - max(tol, 1e-9) * max(1.0, abs(w[-1]))
        if not np.any(new):
            break
        W = np.concatenate([w, w2[new]])
        V = np.concatenate([v, v2[:, new]], axis=1)
        V, _ = np.linalg.qr(V)
        # Rayleigh-Ritz on the combined space keeps the pairs consistent
        Hs = V.conj().T @ (mat @ V)
        ww, U = np.linalg.eigh((Hs + Hs.conj().T) / 2)
        w, v = ww[:k], (V @ U)[:, :k]
    return w, v


class SpectrumError(RuntimeError):
    def __init__(self, message, residual_norms=None):
        super().__init__(message)
        self.residual_norms = residual_norms


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    method: str
    residual_norms: np.ndarray
    vectors: np.ndarray = field(default=None, repr=False)

    @property
    def ground_energy(self):
        return float(self.eigenvalues[0])


def spectrum(H, num_eigs=1, mode="auto", return_vectors=False, tol=1e-10,
             maxiter=5000, seed=0, max_dense_qubits=DENSE_LIMIT):
    """Lowest `num_eigs` eigenvalues of H, dense or by restarted Lanczos."""
    n = H.num_qubits
    dim = 2 ** n
    num_eigs = min(int(num_eigs), dim)
    if mode == "auto":
        mode = "dense" if n <= max_dense_qubits else "iterative"
    if mode == "dense":
        if n > max_dense_qubits:
            raise ValueError(f"dense spectrum limited to {max_dense_qubits} qubits")
        mat = H.dense()
        if not np.any(mat.imag):
            mat = mat.real
        w, v = _dense_lowest(mat, num_eigs, return_vectors)
        res = np.zeros(num_eigs)
        method = "dense"
    elif mode == "iterative":
        if n > ITERATIVE_LIMIT:
            raise ValueError(f"iterative spectrum limited to {ITERATIVE_LIMIT} qubits")
        if num_eigs >= dim - 1:
            return spectrum(H, num_eigs, "dense", return_vectors, max_dense_qubits=n)
        mat = H.sparse()
        w, v = _lanczos_deflated(mat, num_eigs, tol, maxiter, seed)
        res = np.linalg.norm(mat @ v - v * w, axis=0)
        method = "iterative"
        if np.any(res > 1e-8 * max(1.0, np.max(np.abs(w)))):
            raise SpectrumError("iterative eigenpairs failed the residual check", res)
    else:
        raise ValueError(f"unknown spectrum mode {mode!r}")
    return Spectrum(np.real(w), method, np.asarray(res), v if return_vectors else None)


def interaction_graph(H):
    """Vertices are qubits; each two-qubit support is an edge and larger
    supports are kept as hyperedges in graph.graph['hyperedges']."""
    g = nx.Graph()
    g.add_nodes_from(range(H.num_qubits))
    hyper = []
    for s in H.supports():
        if len(s) == 2:
            g.add_edge(*s)
        elif len(s) > 2:
            hyper.append(s)
    g.graph["hyperedges"] = hyper
    return g


class HamiltonianFormatError(ValueError):
    pass


def _fmt(x):
    return format(float(x), ".17g")


def format_hamiltonian(H):
    lines = [f"qubits {H.num_qubits}", f"offset {_fmt(H.offset)}"]
    for t in H.terms:
        lines.append("term " + ",".join(str(q) for q in t.support))
        for r, c in zip(*np.nonzero(t.block)):
            v = t.block[r, c]
            lines.append(f"entry {r} {c} {_fmt(v.real)} {_fmt(v.imag)}")
    return "\n".join(lines) + "\n"


def parse_hamiltonian(text):
    n = None
    offset = 0.0
    terms = []
    current = None

    def close():
        if current is not None:
            support, entries = current
            k = len(support)
            block = np.zeros((2 ** k, 2 ** k), dtype=complex)
            for r, c, v in entries:
                if r >= 2 ** k or c >= 2 ** k:
                    raise HamiltonianFormatError(f"entry ({r},{c}) outside block of term {support}")
                block[r, c] += v
            try:
                terms.append(LocalTerm(support, block))
            except ValueError as exc:
                raise HamiltonianFormatError(str(exc)) from exc

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "qubits":
                n = int(parts[1])
            elif parts[0] == "offset":
                offset = float(parts[1])
            elif parts[0] == "term":
                close()
                support = [int(q) for q in parts[1].split(",")] if len(parts) > 1 else []
                current = (support, [])
            elif parts[0] == "entry":
                if current is None:
                    raise HamiltonianFormatError(f"line {lineno}: entry before any term")
                r, c = int(parts[1]), int(parts[2])
                v = complex(float(parts[3]), float(parts[4]) if len(parts) > 4 else 0.0)
                current[1].append((r, c, v))
            else:
                raise HamiltonianFormatError(f"line {lineno}: unknown keyword {parts[0]!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, HamiltonianFormatError):
                raise
            raise HamiltonianFormatError(f"line {lineno}: {exc}") from exc
    close()
    if n is None:
        raise HamiltonianFormatError("missing 'qubits' header")
    try:
        return Hamiltonian(n, terms, offset)
    except ValueError as exc:
        raise HamiltonianFormatError(str(exc)) from exc
