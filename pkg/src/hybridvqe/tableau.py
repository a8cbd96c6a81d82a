"""Stabilizer tableau simulation with destabilizers (Aaronson-Gottesman).

Rows ``0..n-1`` hold destabilizers and rows ``n..2n-1`` stabilizers. A row is
a Pauli ``(-1)^r X^x Z^z`` with a Y recorded as ``x = z = 1`` carrying its
own ``i`` implicitly, as in the CHP convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pauli import PauliString

CLIFFORD_GATES = ("H", "S", "X", "Y", "Z", "CZ", "CX")
_INVERSE = {"H": "H", "S": "SSS", "X": "X", "Y": "Y", "Z": "Z"}


def gf2_solve(a: np.ndarray, b: np.ndarray):
    """Solve ``a @ x = b`` over GF(2); returns one solution or ``None``."""
    a = np.array(a, dtype=np.uint8) % 2
    b = np.array(b, dtype=np.uint8).reshape(-1) % 2
    m, k = a.shape
    aug = np.concatenate([a, b[:, None]], axis=1)
    pivots = []
    row = 0
    for col in range(k):
        hits = np.flatnonzero(aug[row:, col]) + row if row < m else []
        if len(hits) == 0:
            continue
        p = hits[0]
        aug[[row, p]] = aug[[p, row]]
        others = np.flatnonzero(aug[:, col])
        others = others[others != row]
        aug[others] ^= aug[row]
        pivots.append(col)
        row += 1
        if row == m:
            break
    if np.any(aug[row:, k]):
        return None
    x = np.zeros(k, dtype=np.uint8)
    for r, col in enumerate(pivots):
        x[col] = aug[r, k]
    return x


def gf2_rank(a: np.ndarray) -> int:
    a = np.array(a, dtype=np.uint8) % 2
    rank = 0
    m, k = a.shape
    for col in range(k):
        hits = np.flatnonzero(a[rank:, col]) + rank
        if len(hits) == 0:
            continue
        a[[rank, hits[0]]] = a[[hits[0], rank]]
        others = np.flatnonzero(a[:, col])
        others = others[others != rank]
        a[others] ^= a[rank]
        rank += 1
        if rank == m:
            break
    return rank


def symplectic_product(x1, z1, x2, z2) -> int:
    return int((np.dot(x1, z2) + np.dot(z1, x2)) % 2)


def _g(x1, z1, x2, z2):
    # exponent of i picked up when multiplying single-qubit Paulis (CHP's g)
    x1 = x1.astype(np.int64)
    z1 = z1.astype(np.int64)
    x2 = x2.astype(np.int64)
    z2 = z2.astype(np.int64)
    return np.where(
        (x1 == 0) & (z1 == 0), 0,
        np.where((x1 == 1) & (z1 == 1), z2 - x2,
                 np.where(x1 == 1, z2 * (2 * x2 - 1), x2 * (1 - 2 * z2))))


def _pauli_product(x1, z1, r1, x2, z2, r2, strict=True):
    """Product of two rows in CHP form; returns (x, z, r).

    Anticommuting rows only occur for destabilizers, whose signs are never
    read, so ``strict=False`` drops the imaginary part.
    """
    total = 2 * int(r1) + 2 * int(r2) + int(np.sum(_g(x2, z2, x1, z1)))
    total %= 4
    if strict and total not in (0, 2):
        raise ValueError("rows do not commute")
    return x1 ^ x2, z1 ^ z2, total // 2


class StabilizerTableau:
    """Pure stabilizer state on ``n`` qubits, initialized to |0...0>."""

    def __init__(self, n: int):
        self.n = n
        self.x = np.zeros((2 * n, n), dtype=np.uint8)
        self.z = np.zeros((2 * n, n), dtype=np.uint8)
        self.r = np.zeros(2 * n, dtype=np.uint8)
        for i in range(n):
            self.x[i, i] = 1
            self.z[n + i, i] = 1

    def copy(self) -> "StabilizerTableau":
        t = StabilizerTableau.__new__(StabilizerTableau)
        t.n = self.n
        t.x = self.x.copy()
        t.z = self.z.copy()
        t.r = self.r.copy()
        return t

    # ---- gates -------------------------------------------------------
    def _h(self, a):
        self.r ^= self.x[:, a] & self.z[:, a]
        self.x[:, a], self.z[:, a] = self.z[:, a].copy(), self.x[:, a].copy()

    def _s(self, a):
        self.r ^= self.x[:, a] & self.z[:, a]
        self.z[:, a] ^= self.x[:, a]

    def _cx(self, a, b):
        self.r ^= self.x[:, a] & self.z[:, b] & (self.x[:, b] ^ self.z[:, a] ^ 1)
        self.x[:, b] ^= self.x[:, a]
        self.z[:, a] ^= self.z[:, b]

    def apply(self, gate: str, *qubits):
        gate = gate.upper()
        for q in qubits:
            if not 0 <= q < self.n:
                raise ValueError(f"qubit {q} out of range")
        if gate == "H":
            self._h(qubits[0])
        elif gate == "S":
            self._s(qubits[0])
        elif gate == "X":
            self.r ^= self.z[:, qubits[0]]
        elif gate == "Z":
            self.r ^= self.x[:, qubits[0]]
        elif gate == "Y":
            self.r ^= self.x[:, qubits[0]] ^ self.z[:, qubits[0]]
        elif gate == "CX":
            a, b = qubits
            if a == b:
                raise ValueError("CX needs two distinct qubits")
            self._cx(a, b)
        elif gate == "CZ":
            a, b = qubits
            if a == b:
                raise ValueError("CZ needs two distinct qubits")
            self._h(b)
            self._cx(a, b)
            self._h(b)
        else:
            raise ValueError(f"{gate} is not a Clifford gate supported by the tableau")
        return self

    def apply_word(self, word: str, qubit: int):
        """Apply a word over {H, S, X, Y, Z} left to right on one qubit."""
        for g in word:
            self.apply(g, qubit)
        return self

    # ---- rows --------------------------------------------------------
    def _rowsum(self, h, i):
        self.x[h], self.z[h], self.r[h] = _pauli_product(
            self.x[h], self.z[h], self.r[h], self.x[i], self.z[i], self.r[i], strict=h >= self.n)

    def stabilizer_rows(self):
        n = self.n
        return self.x[n:].copy(), self.z[n:].copy(), self.r[n:].copy()

    def generators(self) -> list[str]:
        out = []
        for i in range(self.n, 2 * self.n):
            p = PauliString.from_symplectic(self.x[i], self.z[i])
            out.append(("-" if self.r[i] else "+") + p.ops)
        return out

    def to_text(self) -> str:
        return "".join(g + "\n" for g in self.generators())

    def sign_of(self, pauli) -> int | None:
        """Return s such that s * pauli is a stabilizer, or None if neither sign is.

        ``pauli`` is a PauliString or a label with optional leading sign.
        """
        sign = 0
        if isinstance(pauli, str):
            if pauli[0] in "+-":
                sign = int(pauli[0] == "-")
                pauli = pauli[1:]
            pauli = PauliString(pauli)
        px, pz = pauli.symplectic()
        n = self.n
        for i in range(n, 2 * n):
            if symplectic_product(px, pz, self.x[i], self.z[i]):
                return None
        ax = np.zeros(n, dtype=np.uint8)
        az = np.zeros(n, dtype=np.uint8)
        ar = 0
        for i in range(n):
            if symplectic_product(px, pz, self.x[i], self.z[i]):
                ax, az, ar = _pauli_product(ax, az, ar, self.x[n + i], self.z[n + i], self.r[n + i])
        if not (np.array_equal(ax, px) and np.array_equal(az, pz)):
            return None
        return -1 if (ar ^ sign) else 1

    # ---- measurement -------------------------------------------------
    def _measure_z(self, a, rng=None, forced=None):
        n = self.n
        hits = np.flatnonzero(self.x[n:, a])
        if len(hits):
            p = n + hits[0]
            for i in np.flatnonzero(self.x[:, a]):
                if i != p:
                    self._rowsum(i, p)
            self.x[p - n], self.z[p - n], self.r[p - n] = self.x[p], self.z[p], self.r[p]
            self.x[p] = 0
            self.z[p] = 0
            self.z[p, a] = 1
            if forced is None:
                if rng is None:
                    raise ValueError("random measurement needs an rng or a forced outcome")
                outcome = int(rng.integers(2))
            else:
                outcome = int(forced)
            self.r[p] = outcome
            return outcome, False
        ax = np.zeros(n, dtype=np.uint8)
        az = np.zeros(n, dtype=np.uint8)
        ar = 0
        for i in np.flatnonzero(self.x[:n, a]):
            ax, az, ar = _pauli_product(ax, az, ar, self.x[n + i], self.z[n + i], self.r[n + i])
        if forced is not None and int(forced) != ar:
            raise ValueError(f"forced outcome {forced} is impossible: measurement is deterministic ({ar})")
        return int(ar), True

    def measure(self, qubit: int, basis: str = "Z", rng=None, forced=None):
        basis = basis.upper()
        if basis == "Z":
            return self._measure_z(qubit, rng, forced)
        if basis == "X":
            self._h(qubit)
            out = self._measure_z(qubit, rng, forced)
            self._h(qubit)
            return out
        if basis == "Y":
            self.apply_word("SSSH", qubit)
            out = self._measure_z(qubit, rng, forced)
            self.apply_word("HS", qubit)
            return out
        raise ValueError(f"unknown measurement basis {basis!r}")

    def row_reduce(self, column_order=None) -> list[int]:
        """Gauss-Jordan on the stabilizer rows over ``column_order``.

        Columns are indices into the concatenated ``[x | z]`` bit vector;
        defaults to all X columns then all Z columns. Destabilizers receive the
        inverse row operations so the tableau stays symplectic. Returns the
        pivot columns in row order.
        """
        n = self.n
        if column_order is None:
            column_order = list(range(2 * n))
        bits = np.concatenate([self.x[n:], self.z[n:]], axis=1)
        pivots = []
        row = 0
        for col in column_order:
            if row == n:
                break
            hits = np.flatnonzero(bits[row:, col]) + row
            if len(hits) == 0:
                continue
            p = hits[0]
            if p != row:
                self._swap_stab(row, p)
                bits[[row, p]] = bits[[p, row]]
            for k in np.flatnonzero(bits[:, col]):
                if k != row:
                    self._combine_stab(k, row)
                    bits[k] ^= bits[row]
            pivots.append(col)
            row += 1
        return pivots

    def _swap_stab(self, i, j):
        n = self.n
        for a, b in ((n + i, n + j), (i, j)):
            self.x[[a, b]] = self.x[[b, a]]
            self.z[[a, b]] = self.z[[b, a]]
            self.r[[a, b]] = self.r[[b, a]]

    def _combine_stab(self, k, j):
        # S_k <- S_k S_j and, to keep the pairing, D_j <- D_j D_k
        n = self.n
        self._rowsum(n + k, n + j)
        dx, dz = self.x[j] ^ self.x[k], self.z[j] ^ self.z[k]
        self.x[j], self.z[j] = dx, dz

    @classmethod
    def from_stabilizers(cls, generators) -> "StabilizerTableau":
        """Build a tableau from signed labels such as ``["+XX", "-ZZ"]``."""
        rows = []
        for g in generators:
            sign = 0
            if g[0] in "+-":
                sign = int(g[0] == "-")
                g = g[1:]
            x, z = PauliString(g).symplectic()
            rows.append((x, z, sign))
        n = len(rows[0][0])
        if len(rows) != n:
            raise ValueError("need exactly n generators")
        sx = np.array([r[0] for r in rows], dtype=np.uint8)
        sz = np.array([r[1] for r in rows], dtype=np.uint8)
        for i in range(n):
            for j in range(i):
                if symplectic_product(sx[i], sz[i], sx[j], sz[j]):
                    raise ValueError("generators do not commute")
        if gf2_rank(np.concatenate([sx, sz], axis=1)) != n:
            raise ValueError("generators are not independent")
        t = cls(n)
        t.x[n:], t.z[n:] = sx, sz
        t.r[n:] = [r[2] for r in rows]
        t.r[:n] = 0
        dx, dz = _destabilizers(sx, sz)
        t.x[:n], t.z[:n] = dx, dz
        return t

    def restrict(self, keep) -> "StabilizerTableau":
        """Tableau of the ``keep`` qubits when they are unentangled from the rest."""
        keep = list(keep)
        rest = [q for q in range(self.n) if q not in keep]
        t = self.copy()
        order = [q for q in rest] + [self.n + q for q in rest]
        t.row_reduce(order + keep + [self.n + q for q in keep])
        x, z, r = t.stabilizer_rows()
        gens = []
        for i in range(self.n):
            if not np.any(x[i, rest]) and not np.any(z[i, rest]):
                p = PauliString.from_symplectic(x[i, keep], z[i, keep])
                gens.append(("-" if r[i] else "+") + p.ops)
        if len(gens) != len(keep):
            raise ValueError("kept qubits are entangled with the discarded ones")
        return StabilizerTableau.from_stabilizers(gens)


def _destabilizers(sx, sz):
    n = sx.shape[0]
    dx = np.zeros((n, n), dtype=np.uint8)
    dz = np.zeros((n, n), dtype=np.uint8)
    for i in range(n):
        # constraints: <v, S_j> = delta_ij and <v, D_k> = 0 for k < i
        a_rows = [np.concatenate([sz[j], sx[j]]) for j in range(n)]
        a_rows += [np.concatenate([dz[k], dx[k]]) for k in range(i)]
        b = np.zeros(len(a_rows), dtype=np.uint8)
        b[i] = 1
        v = gf2_solve(np.array(a_rows), b)
        if v is None:
            raise ValueError("failed to complete the symplectic basis")
        dx[i], dz[i] = v[:n], v[n:]
    return dx, dz


def zero_state(n: int) -> StabilizerTableau:
    return StabilizerTableau(n)


def plus_state(n: int) -> StabilizerTableau:
    t = StabilizerTableau(n)
    for q in range(n):
        t.apply("H", q)
    return t


def apply_clifford(tab: StabilizerTableau, gate: str, qubits) -> StabilizerTableau:
    """Return a new tableau with ``gate`` applied; non-Clifford names raise."""
    if gate.upper() not in CLIFFORD_GATES:
        raise ValueError(f"{gate} is not a Clifford gate")
    out = tab.copy()
    out.apply(gate, *np.atleast_1d(qubits).tolist())
    return out


def measure_pauli(tab: StabilizerTableau, qubit: int, basis: str = "Z", rng=None, forced=None):
    """Measure one qubit in the X, Y or Z basis.

    Returns ``(outcome, deterministic, new tableau)``.
    """
    out = tab.copy()
    outcome, det = out.measure(qubit, basis, rng, forced)
    return outcome, det, out


def canonicalize(tab: StabilizerTableau) -> StabilizerTableau:
    """Row-echelon form: X block first, then Z block on the remaining rows."""
    out = tab.copy()
    out.row_reduce()
    return out


def same_state(a: StabilizerTableau, b: StabilizerTableau) -> bool:
    """True iff the two tableaux stabilize the same state (signs included)."""
    if a.n != b.n:
        return False
    return all(b.sign_of(g) == 1 for g in a.generators())


@dataclass
class GraphStateForm:
    """A graph state followed by per-qubit local Cliffords.

    The state is ``prod(LC_q) prod(CZ_e) |+>^n`` where each word in
    ``local_cliffords`` is applied left to right.
    """

    adjacency: np.ndarray
    local_cliffords: list

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def edges(self) -> list[tuple[int, int]]:
        a = self.adjacency
        return [(i, j) for i in range(self.n) for j in range(i + 1, self.n) if a[i, j]]

    def gates(self) -> list[tuple]:
        """Preparation from |0...0> as ``(name, *qubits)`` tuples."""
        out = [("H", q) for q in range(self.n)]
        out += [("CZ", i, j) for i, j in self.edges()]
        for q, word in enumerate(self.local_cliffords):
            out += [(g, q) for g in word]
        return out

    def to_tableau(self) -> StabilizerTableau:
        t = StabilizerTableau(self.n)
        for g in self.gates():
            t.apply(g[0], *g[1:])
        return t


def simplify_word(word: str) -> str:
    """Cancel HH and SSSS pairs; words stay over {H, S}."""
    prev = None
    while prev != word:
        prev = word
        word = word.replace("HH", "").replace("SSSS", "")
    return word


def invert_word(word: str) -> str:
    return simplify_word("".join(_INVERSE[g] for g in reversed(word)).replace("X", "HSSH").replace("Z", "SS"))


def to_graph_state(tab: StabilizerTableau, order=None) -> GraphStateForm:
    """Local-Clifford equivalent graph state of a stabilizer state.

    ``order`` ranks qubits for pivoting; qubits late in the order are the
    ones that receive Hadamards when the X block is rank deficient.
    """
    n = tab.n
    order = list(range(n)) if order is None else list(order)
    t = tab.copy()
    applied = [""] * n  # gates applied to the input to reach the graph state
    pivots = t.row_reduce(order)
    x_piv = [c for c in pivots if c < n]
    rank = len(x_piv)
    if rank < n:
        free = [q for q in order if q not in x_piv]
        bits = t.z[n + rank:, :]
        hq = []
        sub = bits.copy()
        row = 0
        for q in free:
            hits = np.flatnonzero(sub[row:, q]) + row
            if len(hits) == 0:
                continue
            p = hits[0]
            sub[[row, p]] = sub[[p, row]]
            for k in np.flatnonzero(sub[:, q]):
                if k != row:
                    sub[k] ^= sub[row]
            hq.append(q)
            row += 1
            if row == n - rank:
                break
        for q in hq:
            t.apply("H", q)
            applied[q] += "H"
    piv = t.row_reduce(list(range(n)))
    if piv != list(range(n)):
        raise AssertionError("X block is not full rank after Hadamards")
    for q in range(n):
        if t.z[n + q, q]:
            t.apply_word("SSS", q)
            applied[q] += "SSS"
    for q in range(n):
        if t.r[n + q]:
            t.apply("Z", q)
            applied[q] += "SS"
    adj = t.z[n:, :].copy()
    if not np.array_equal(adj, adj.T) or np.any(np.diag(adj)):
        raise AssertionError("graph extraction produced an invalid adjacency")
    return GraphStateForm(adj, [invert_word(w) for w in applied])
