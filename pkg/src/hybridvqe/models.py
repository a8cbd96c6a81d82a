"""Benchmark Hamiltonians, exact spectra and reference quantities."""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .pauli import DEFAULT_MATRIX_CAP, Hamiltonian, to_matrix
from .tableau import StabilizerTableau, gf2_rank, to_graph_state

DEGENERACY_THRESHOLD = 1e-6


# ---------------------------------------------------------------------------
# planar code

@dataclass(frozen=True)
class PlanarCodeSpec:
    M: int
    N: int
    xi: float = 0.0

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ValueError("planar code needs M, N >= 1")


class PlanarLattice:
    """Open-boundary M x N plaquette lattice with qubits on edges.

    Edges are numbered row by row: the N horizontal edges of vertex row r,
    then the N+1 vertical edges between rows r and r+1. ``M`` counts plaquette
    rows and ``N`` plaquette columns.
    """

    def __init__(self, M: int, N: int):
        self.M, self.N = M, N
        self.h = {}
        self.v = {}
        k = 0
        for r in range(M + 1):
            for c in range(N):
                self.h[r, c] = k
                k += 1
            if r < M:
                for c in range(N + 1):
                    self.v[r, c] = k
                    k += 1
        self.n = k

    def plaquettes(self) -> list[list[int]]:
        return [sorted([self.h[r, c], self.v[r, c], self.v[r, c + 1], self.h[r + 1, c]])
                for r in range(self.M) for c in range(self.N)]

    def stars(self) -> list[list[int]]:
        out = []
        for r in range(self.M + 1):
            for c in range(self.N + 1):
                edges = [self.h.get((r, c - 1)), self.h.get((r, c)), self.v.get((r - 1, c)), self.v.get((r, c))]
                out.append(sorted(e for e in edges if e is not None))
        return out


def _label(n: int, qubits, symbol: str) -> str:
    s = ["I"] * n
    for q in qubits:
        s[q] = symbol
    return "".join(s)


def planar_code_hamiltonian(spec: PlanarCodeSpec) -> Hamiltonian:
    """-sum of X plaquettes - sum of Z stars + xi * sum Z_q."""
    lat = PlanarLattice(spec.M, spec.N)
    n = lat.n
    terms = [(-1.0, _label(n, p, "X")) for p in lat.plaquettes()]
    terms += [(-1.0, _label(n, s, "Z")) for s in lat.stars()]
    if spec.xi != 0:
        terms += [(float(spec.xi), _label(n, [q], "Z")) for q in range(n)]
    return Hamiltonian(terms, n=n)


def pc_zero_order_energy(M: int, N: int) -> float:
    return -float(M * N + (M - 1) * (N - 1) + 2 * (M + N - 2) + 4)


def pc_ground_tableau(M: int, N: int) -> StabilizerTableau:
    """Unperturbed ground state: +1 eigenstate of every plaquette and star."""
    lat = PlanarLattice(M, N)
    gens = ["+" + _label(lat.n, p, "X") for p in lat.plaquettes()]
    z_rows = []
    for s in lat.stars():
        row = np.zeros(lat.n, dtype=np.uint8)
        row[s] = 1
        z_rows.append(row)
    # keep an independent subset of the stars (their product is the identity)
    chosen = []
    for s, row in zip(lat.stars(), z_rows):
        trial = chosen + [row]
        if gf2_rank(np.array(trial)) == len(trial):
            chosen.append(row)
            gens.append("+" + _label(lat.n, s, "Z"))
    return StabilizerTableau.from_stabilizers(gens)


# ---------------------------------------------------------------------------
# SU(3) and Z2

@dataclass(frozen=True)
class SU3Spec:
    m: float
    x: float = 0.8

    def __post_init__(self):
        if not self.x > 0:
            raise ValueError("SU(3) coupling x must be positive")


def su3_hamiltonian(spec: SU3Spec) -> Hamiltonian:
    kinetic = [(-0.5, "XZZ"), (-0.5, "ZXZ"), (-0.5, "ZZX")]
    mass = [(3 * spec.m, "III")] + [(-spec.m, p) for p in ("ZII", "IZI", "IIZ")]
    e = 1.0 / (6 * spec.x)
    electric = [(3 * e, "III")] + [(-e, p) for p in ("ZZI", "ZIZ", "IZZ")]
    return Hamiltonian(kinetic + mass + electric, n=3)


def su3_number_operator() -> Hamiltonian:
    """N = 3 - sum Z_i, so that the mass term is m * N."""
    return Hamiltonian([(3.0, "III"), (-1.0, "ZII"), (-1.0, "IZI"), (-1.0, "IIZ")])


def su3_pair_number_operator() -> Hamiltonian:
    """N' = (1/3) sum_{i<j} (1 - Z_i)(1 - Z_j), expanded into Pauli terms."""
    terms = []
    for i, j in itertools.combinations(range(3), 2):
        zi = _label(3, [i], "Z")
        zj = _label(3, [j], "Z")
        zz = _label(3, [i, j], "Z")
        terms += [(1 / 3, "III"), (-1 / 3, zi), (-1 / 3, zj), (1 / 3, zz)]
    return Hamiltonian(terms, n=3)


@dataclass(frozen=True)
class Z2Spec:
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("Z2 coupling lambda must be positive")


def z2_hamiltonian(spec: Z2Spec | float) -> Hamiltonian:
    lam = spec.lam if isinstance(spec, Z2Spec) else Z2Spec(float(spec)).lam
    terms = [(lam, "XXXX")] + [(1.0 / lam, _label(4, [q], "Z")) for q in range(4)]
    return Hamiltonian(terms, n=4)


def z2_plaquette_operator() -> Hamiltonian:
    return Hamiltonian([(1.0, "XXXX")])


def z2_field_operator() -> Hamiltonian:
    """Mean single-link Z, i.e. (1/4) sum_i Z_i."""
    return Hamiltonian([(0.25, _label(4, [q], "Z")) for q in range(4)])


def z2_exact_gs(lam: float) -> tuple[float, np.ndarray]:
    """Closed-form ground energy and state (basis order |0000> ... |1111>)."""
    if not lam > 0:
        raise ValueError("Z2 coupling lambda must be positive")
    root = math.sqrt(16 + lam ** 4)
    energy = -math.sqrt(16 / lam ** 2 + lam ** 2)
    a = (4 - root) / lam ** 2
    state = np.zeros(16, dtype=complex)
    state[0] = a
    state[15] = 1.0
    state *= math.sqrt(0.5 + 2 / root)
    return energy, state


# ---------------------------------------------------------------------------
# LiH

# four-qubit LiH at 1.6 A, parity mapping with frozen core
_LIH_TERMS = """
IIIZ -0.0938  IIZX -0.00318  IIIX 0.00318  IIXX -0.00125  IIYY 0.00125
IIZZ -0.212  IIXZ 0.0192  IIXI 0.0192  IIZI 0.358  IZII 0.0938
ZXII 0.00318  IXII 0.00318  XXII -0.00125  YYII 0.00125  ZZII -0.212
XZII -0.0192  XIII 0.0192  ZIII -0.358  IZIZ -0.122  IZZX 0.0121
IZIX -0.0121  IZXX 0.0317  IZYY -0.0317  IXIZ 0.0121  ZXIZ 0.0121
IXZX -0.00327  ZXZX -0.00327  IXIX 0.00327  ZXIX 0.00327  IXXX -0.00865
ZXXX -0.00865  IXYY 0.00865  ZXYY 0.00865  YYIZ 0.0317  XXIZ -0.0317
YYZX -0.00865  XXZX 0.00865  YYIX 0.00865  XXIX -0.00865  YYXX -0.031
XXXX 0.031  YYYY 0.031  XXYY -0.031  ZZIZ 0.0559  ZZZX 0.00187
ZZIX -0.00187  ZZXX 0.0031  ZZYY -0.0031  XIIZ 0.0128  XZIZ -0.0128
XIZX -0.00235  XZZX 0.00235  XIIX 0.00235  XZIX -0.00235  XIXX -0.00798
XZXX 0.00797  XIYY 0.00797  XZYY -0.00797  ZIIZ 0.113  ZIZX -0.0108
ZIIX 0.0108  ZIXX -0.0336  ZIYY 0.0336  IZZZ -0.0559  IZXZ -0.0128
IZXI -0.0128  IXZZ -0.00187  ZXZZ -0.00187  IXXZ 0.00235  ZXXZ 0.00235
IXXI 0.00235  ZXXI 0.00235  YYZZ -0.0031  XXZZ 0.0031  YYXZ 0.00798
XXXZ -0.00798  YYXI 0.00798  XXXI -0.00798  ZZZZ 0.0845  ZZXZ -0.00899
ZZXI -0.00899  XIZZ -0.00899  XZZZ 0.00899  XIXZ 0.00661  XZXZ -0.00661
XIXI 0.00661  XZXI -0.00661  ZIZZ 0.0604  ZIXZ 0.011  ZIXI 0.011
IZZI 0.113  IXZI -0.0108  ZXZI -0.0108  YYZI -0.0336  XXZI 0.0336
ZZZI -0.0604  XIZI -0.011  XZZI -0.011  ZIZI -0.113  IIII -7.012
"""
_LIH_SHA256 = "873771aed1c1fe8d641c9b1c4e0580c281feb40f75bcbe47f89555af60d62c5b"
LIH_REFERENCE_E0 = -7.881072044030926


def _lih_pairs():
    tok = _LIH_TERMS.split()
    return [(tok[i], float(tok[i + 1])) for i in range(0, len(tok), 2)]


def _lih_digest() -> str:
    canon = ";".join(f"{label}:{coeff!r}" for label, coeff in _lih_pairs())
    return hashlib.sha256(canon.encode()).hexdigest()


def lih_hamiltonian() -> Hamiltonian:
    if _lih_digest() != _LIH_SHA256:
        raise RuntimeError("embedded LiH coefficient table failed its checksum")
    pairs = _lih_pairs()
    h = Hamiltonian([(c, label) for label, c in pairs])
    if len(h) != 100:
        raise RuntimeError(f"LiH table has {len(h)} distinct terms, expected 100")
    return h


# ---------------------------------------------------------------------------
# spectra

@dataclass
class Spectrum:
    energies: np.ndarray
    states: np.ndarray

    @property
    def e0(self) -> float:
        return float(self.energies[0])

    @property
    def e1(self) -> float:
        return float(self.energies[1]) if len(self.energies) > 1 else math.nan

    @property
    def e2(self) -> float:
        return float(self.energies[2]) if len(self.energies) > 2 else math.nan

    @property
    def gap(self) -> float:
        return self.e1 - self.e0

    @property
    def ground_state(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def near_degenerate(self) -> bool:
        return self.gap < DEGENERACY_THRESHOLD

    def summary(self) -> dict:
        return {"E0": self.e0, "E1": self.e1, "E2": self.e2, "E_g": self.gap,
                "near_degenerate": bool(self.near_degenerate)}


def exact_diagonalize(h: Hamiltonian, max_qubits: int = DEFAULT_MATRIX_CAP) -> Spectrum:
    mat = to_matrix(h, max_qubits)
    w, v = scipy.linalg.eigh(mat)
    return Spectrum(w, v)


def expectation_value(h: Hamiltonian, state: np.ndarray) -> float:
    psi = np.asarray(state, dtype=complex)
    return float(np.real(np.vdot(psi, to_matrix(h) @ psi)))


def model_observables(name: str, state: np.ndarray) -> dict:
    if name == "su3":
        return {"N": expectation_value(su3_number_operator(), state),
                "N_prime": expectation_value(su3_pair_number_operator(), state)}
    if name == "z2":
        return {"plaquette": expectation_value(z2_plaquette_operator(), state),
                "field": expectation_value(z2_field_operator(), state)}
    return {}


# ---------------------------------------------------------------------------
# perturbation theory

def pc_perturbative_energy(M: int, N: int, xi: float) -> float:
    """Second-order ground energy of the perturbed planar code.

    The first-order shift vanishes; the second-order term is a sum over
    states of the unperturbed Hamiltonian.
    """
    return pc_zero_order_energy(M, N) + pc_second_order_coefficient(M, N) * xi ** 2


_SECOND_ORDER_CACHE: dict = {}


def pc_second_order_coefficient(M: int, N: int) -> float:
    key = (M, N)
    if key not in _SECOND_ORDER_CACHE:
        h0 = planar_code_hamiltonian(PlanarCodeSpec(M, N, 0.0))
        n = h0.n
        spec = exact_diagonalize(h0)
        e = spec.energies
        if e[1] - e[0] < DEGENERACY_THRESHOLD:
            raise ValueError("unperturbed ground state is degenerate")
        v = Hamiltonian([(1.0, _label(n, [q], "Z")) for q in range(n)])
        g = spec.ground_state
        amps = spec.states.conj().T @ (to_matrix(v) @ g)
        first = float(np.real(amps[0]))
        if abs(first) > 1e-9:
            raise ValueError("first-order correction does not vanish")
        _SECOND_ORDER_CACHE[key] = float(np.sum(np.abs(amps[1:]) ** 2 / (e[0] - e[1:])))
    return _SECOND_ORDER_CACHE[key]


# ---------------------------------------------------------------------------
# graph ansatz descriptions

SUPPORTED_LATTICES = {(1, 1), (1, 2), (2, 1), (2, 2)}


@dataclass
class GraphAnsatzSpec:
    """Graph state plus variational slots and the classes that share angles.

    ``rotation_classes[k]`` gives, for rotation layer k, the class index of
    each qubit's RY slot; ``edge_classes`` gives per modification layer the
    class of every edge. Class indices are global across all slots.
    """

    n: int
    edges: list
    local_cliffords: list
    layers: int
    rotation_classes: list
    edge_classes: list
    reference: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_params(self) -> int:
        used = set()
        for row in self.rotation_classes + self.edge_classes:
            used.update(row)
        return len(used)

    @property
    def n_slots(self) -> int:
        return sum(len(r) for r in self.rotation_classes) + len(self.edges) * (2 * self.layers - 1)


def _orbits(perms, items, act):
    seen = {}
    classes = []
    for it in items:
        if it in seen:
            continue
        orbit = {act(p, it) for p in perms}
        k = len(classes)
        classes.append(orbit)
        for o in orbit:
            seen[o] = k
    return seen


def graph_automorphisms(n: int, edges, colors=None) -> list[tuple]:
    """All vertex permutations preserving adjacency and vertex colors (backtracking)."""
    colors = list(colors) if colors is not None else [0] * n
    nbr = [set() for _ in range(n)]
    for a, b in edges:
        nbr[a].add(b)
        nbr[b].add(a)
    sig = [(colors[q], len(nbr[q])) for q in range(n)]
    out = []
    perm = [-1] * n
    used = [False] * n

    def extend(q):
        if q == n:
            out.append(tuple(perm))
            return
        for t in range(n):
            if used[t] or sig[t] != sig[q]:
                continue
            if any((perm[r] in nbr[t]) != (r in nbr[q]) for r in range(q)):
                continue
            perm[q] = t
            used[t] = True
            extend(q + 1)
            used[t] = False
        perm[q] = -1

    extend(0)
    return out


def pc_graph_ansatz(M: int, N: int, L: int = 1) -> GraphAnsatzSpec:
    """Graph form of the unperturbed ground state with symmetry-shared slots.

    Two RY rotation layers per qubit (one before and one after the
    modifications) and one modification angle per edge per layer. Vertices
    and edges related by a graph automorphism that preserves the local
    Cliffords share an angle.
    """
    if (M, N) not in SUPPORTED_LATTICES:
        raise ValueError(f"unsupported lattice {(M, N)}")
    if L < 1:
        raise ValueError("L must be at least 1")
    lat = PlanarLattice(M, N)
    tab = pc_ground_tableau(M, N)
    graph = to_graph_state(tab, order=_pivot_order(lat))
    edges = graph.edges()
    lcs = list(graph.local_cliffords)
    perms = graph_automorphisms(lat.n, edges, lcs)
    vclass = _orbits(perms, range(lat.n), lambda p, q: p[q])
    eclass = _orbits(perms, [tuple(sorted(e)) for e in edges], lambda p, e: tuple(sorted((p[e[0]], p[e[1]]))))
    n_v = max(vclass.values()) + 1
    n_e = max(eclass.values()) + 1
    rot = [[vclass[q] for q in range(lat.n)], [n_v + vclass[q] for q in range(lat.n)]]
    base = 2 * n_v
    edge_layers = [[base + l * n_e + eclass[tuple(sorted(e))] for e in edges] for l in range(L)]
    return GraphAnsatzSpec(lat.n, edges, lcs, L, rot, edge_layers)


def _pivot_order(lat: PlanarLattice) -> list[int]:
    # pivot on each plaquette's top edge so that the graph follows the lattice
    tops = [lat.h[r, c] for r in range(lat.M) for c in range(lat.N)]
    return tops + [q for q in range(lat.n) if q not in tops]
