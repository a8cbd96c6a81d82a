"""Pauli strings, weighted Pauli sums and qubit-wise commuting groups.

Qubit 0 is the leftmost symbol of a label and the most significant bit of a
computational-basis index, so ``to_matrix`` is a plain left-to-right Kronecker
product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SYMBOLS = "IXYZ"

# (a, b) -> (phase, product) for single-qubit Pauli multiplication a*b
_TABLE = {
    ("I", "I"): (1, "I"), ("I", "X"): (1, "X"), ("I", "Y"): (1, "Y"), ("I", "Z"): (1, "Z"),
    ("X", "I"): (1, "X"), ("X", "X"): (1, "I"), ("X", "Y"): (1j, "Z"), ("X", "Z"): (-1j, "Y"),
    ("Y", "I"): (1, "Y"), ("Y", "X"): (-1j, "Z"), ("Y", "Y"): (1, "I"), ("Y", "Z"): (1j, "X"),
    ("Z", "I"): (1, "Z"), ("Z", "X"): (1j, "Y"), ("Z", "Y"): (-1j, "X"), ("Z", "Z"): (1, "I"),
}

SINGLE_QUBIT = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

DEFAULT_MATRIX_CAP = 14


@dataclass(frozen=True)
class PauliString:
    """A tensor product of single-qubit Paulis, e.g. ``PauliString("XIZ")``."""

    ops: str

    def __post_init__(self):
        ops = self.ops.upper()
        if any(c not in SYMBOLS for c in ops):
            raise ValueError(f"invalid Pauli label {self.ops!r}")
        object.__setattr__(self, "ops", ops)

    @property
    def n(self) -> int:
        return len(self.ops)

    def __str__(self):
        return self.ops

    def __len__(self):
        return len(self.ops)

    def is_identity(self) -> bool:
        return set(self.ops) <= {"I"}

    def weight(self) -> int:
        return sum(c != "I" for c in self.ops)

    def support(self) -> list[int]:
        return [q for q, c in enumerate(self.ops) if c != "I"]

    def symplectic(self) -> tuple[np.ndarray, np.ndarray]:
        """Return the (x, z) bit vectors; Y sets both bits."""
        x = np.array([c in "XY" for c in self.ops], dtype=np.uint8)
        z = np.array([c in "ZY" for c in self.ops], dtype=np.uint8)
        return x, z

    @classmethod
    def identity(cls, n: int) -> "PauliString":
        return cls("I" * n)

    @classmethod
    def single(cls, n: int, qubit: int, symbol: str) -> "PauliString":
        ops = ["I"] * n
        ops[qubit] = symbol
        return cls("".join(ops))

    @classmethod
    def from_symplectic(cls, x, z) -> "PauliString":
        lookup = {(0, 0): "I", (1, 0): "X", (1, 1): "Y", (0, 1): "Z"}
        return cls("".join(lookup[(int(a), int(b))] for a, b in zip(x, z)))


def _check_lengths(a: PauliString, b: PauliString):
    if a.n != b.n:
        raise ValueError(f"Pauli length mismatch: {a.n} vs {b.n}")


def multiply(a: PauliString, b: PauliString) -> tuple[complex, PauliString]:
    """Return ``(phase, p)`` with ``a @ b == phase * p`` as operators.

    >>> multiply(PauliString("X"), PauliString("Z"))
    ((-0-1j), PauliString(ops='Y'))
    """
    _check_lengths(a, b)
    phase = 1
    out = []
    for p, q in zip(a.ops, b.ops):
        f, r = _TABLE[(p, q)]
        phase *= f
        out.append(r)
    return complex(phase), PauliString("".join(out))


def commutes(a: PauliString, b: PauliString) -> bool:
    _check_lengths(a, b)
    anti = sum(p != "I" and q != "I" and p != q for p, q in zip(a.ops, b.ops))
    return anti % 2 == 0


def qubitwise_compatible(a: PauliString, b: PauliString) -> bool:
    """True iff on every qubit the symbols agree or one of them is I."""
    _check_lengths(a, b)
    return all(p == q or p == "I" or q == "I" for p, q in zip(a.ops, b.ops))


def pauli_matrix(p: PauliString) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for c in p.ops:
        out = np.kron(out, SINGLE_QUBIT[c])
    return out


@dataclass(frozen=True)
class PauliTerm:
    coeff: float
    string: PauliString

    def __post_init__(self):
        c = float(self.coeff)
        if not math.isfinite(c):
            raise ValueError("Pauli term coefficient must be finite")
        object.__setattr__(self, "coeff", c)


class Hamiltonian:
    """Real-weighted sum of Pauli strings on ``n`` qubits.

    Repeated strings are merged on construction, in order of first
    appearance. The identity term is kept as an ordinary term but is treated
    as an additive constant by the estimators.
    """

    def __init__(self, terms, n: int | None = None):
        merged: dict[str, float] = {}
        for t in terms:
            if not isinstance(t, PauliTerm):
                coeff, label = t
                t = PauliTerm(coeff, label if isinstance(label, PauliString) else PauliString(label))
            if n is None:
                n = t.string.n
            if t.string.n != n:
                raise ValueError("all terms must act on the same number of qubits")
            merged[t.string.ops] = merged.get(t.string.ops, 0.0) + t.coeff
        if n is None:
            raise ValueError("cannot infer qubit count of an empty Hamiltonian")
        self.n = n
        self.terms = tuple(PauliTerm(c, PauliString(s)) for s, c in merged.items())

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def __repr__(self):
        return f"Hamiltonian(n={self.n}, terms={len(self.terms)})"

    def __add__(self, other: "Hamiltonian") -> "Hamiltonian":
        return Hamiltonian(list(self.terms) + list(other.terms), n=self.n)

    def scaled(self, factor: float) -> "Hamiltonian":
        return Hamiltonian([PauliTerm(factor * t.coeff, t.string) for t in self.terms], n=self.n)

    @property
    def constant(self) -> float:
        return sum(t.coeff for t in self.terms if t.string.is_identity())

    def coefficient(self, label: str) -> float:
        for t in self.terms:
            if t.string.ops == label:
                return t.coeff
        return 0.0

    def to_text(self) -> str:
        return "".join(f"{t.coeff!r} {t.string.ops}\n" for t in self.terms)

    @classmethod
    def from_text(cls, text: str) -> "Hamiltonian":
        terms = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'coeff pauli_string', got {line!r}")
            terms.append(PauliTerm(float(parts[0]), PauliString(parts[1])))
        return cls(terms)


def to_matrix(h: Hamiltonian, max_qubits: int = DEFAULT_MATRIX_CAP) -> np.ndarray:
    """Dense 2^n x 2^n matrix of ``h``; refuses beyond ``max_qubits``."""
    if h.n > max_qubits:
        raise ValueError(f"{h.n} qubits exceeds the dense-matrix cap of {max_qubits}")
    dim = 1 << h.n
    mat = np.zeros((dim, dim), dtype=complex)
    idx = np.arange(dim)
    for t in h.terms:
        rows, phases = pauli_action(t.string, idx)
        # column b has a single nonzero entry, at row rows[b]
        mat[rows, idx] += t.coeff * phases
    return mat


def pauli_action(p: PauliString, basis_indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map basis states |b> to ``phase * |b'>`` under ``p``; returns (b', phase)."""
    n = p.n
    xmask = 0
    zmask = 0
    n_y = 0
    for q, c in enumerate(p.ops):
        bit = 1 << (n - 1 - q)
        if c in "XY":
            xmask |= bit
        if c in "ZY":
            zmask |= bit
        n_y += c == "Y"
    b = np.asarray(basis_indices)
    parity = _popcount_parity(b & zmask)
    phases = (1j ** n_y) * np.where(parity, -1.0, 1.0)
    return b ^ xmask, phases


def _popcount_parity(v: np.ndarray) -> np.ndarray:
    v = np.array(v, dtype=np.int64, copy=True)
    parity = np.zeros(v.shape, dtype=bool)
    while np.any(v):
        parity ^= (v & 1).astype(bool)
        v >>= 1
    return parity


@dataclass
class MeasurementGroup:
    """Terms measured together in one circuit.

    ``members`` holds ``(term index, ratio)`` pairs; the ratio is the share of
    a term's coefficient carried by this group when the term is measured in
    several groups.
    """

    basis: PauliString
    members: list = field(default_factory=list)

    def term_indices(self) -> list[int]:
        return [i for i, _ in self.members]


def _merge_basis(basis: list[str], p: PauliString) -> bool:
    for q, c in enumerate(p.ops):
        if c != "I" and basis[q] != "I" and basis[q] != c:
            return False
    for q, c in enumerate(p.ops):
        if c != "I":
            basis[q] = c
    return True


def group_commuting(h: Hamiltonian, shots_per_group=None) -> list[MeasurementGroup]:
    """Greedy first-fit grouping of non-identity terms by descending |coeff|.

    Every term is then attached to each group whose basis covers it, with
    ratio N_k / sum(N_k) over those groups. ``shots_per_group`` defaults to an
    equal allocation, giving ratio 1/k for a term shared by k groups.
    """
    if len(h.terms) == 0:
        raise ValueError("empty Hamiltonian")
    order = sorted(
        (i for i, t in enumerate(h.terms) if not t.string.is_identity()),
        key=lambda i: (-abs(h.terms[i].coeff), i),
    )
    bases: list[list[str]] = []
    for i in order:
        p = h.terms[i].string
        for b in bases:
            if _merge_basis(b, p):
                break
        else:
            bases.append(list(p.ops))
    groups = [MeasurementGroup(PauliString("".join(b))) for b in bases]
    assign_ratios(h, groups, shots_per_group)
    return groups


def assign_ratios(h: Hamiltonian, groups: list[MeasurementGroup], shots_per_group=None):
    if shots_per_group is None:
        shots_per_group = [1] * len(groups)
    if len(shots_per_group) != len(groups):
        raise ValueError("one shot count per group is required")
    for g in groups:
        g.members = []
    for i, t in enumerate(h.terms):
        if t.string.is_identity():
            continue
        homes = [k for k, g in enumerate(groups) if qubitwise_compatible(g.basis, t.string)]
        if not homes:
            raise ValueError(f"term {t.string} is not covered by any group")
        total = sum(shots_per_group[k] for k in homes)
        for k in homes:
            groups[k].members.append((i, shots_per_group[k] / total))
    return groups
