"""Shot-based energy estimation with readout and self-mitigation.

Each qubit-wise commuting group is measured with its own copy of the state
circuit followed by basis-change gates. A term shared by several groups is
averaged over them with the ratios stored on the group.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .pauli import Hamiltonian, MeasurementGroup, PauliString, group_commuting, qubitwise_compatible
from .statevector import (
    TWO_QUBIT,
    DynamicCircuit,
    Instruction,
    NoiseModel,
    QuantumState,
    reduced_state,
    run_counts,
    run_exact,
)

MIN_MITIGATION_VALUE = 0.05
MAX_CONDITION = 1e12


# ---------------------------------------------------------------------------
# readout calibration

@dataclass
class CalibrationMatrix:
    """Column-stochastic map: ``matrix[x_meas, x_prep]``."""

    n: int
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        dim = 1 << self.n
        if self.matrix.shape != (dim, dim):
            raise ValueError(f"calibration matrix must be {dim}x{dim}")
        if np.any(self.matrix < -1e-12) or np.any(self.matrix > 1 + 1e-12):
            raise ValueError("calibration entries must lie in [0, 1]")
        if not np.allclose(self.matrix.sum(axis=0), 1.0, atol=1e-9):
            raise ValueError("calibration columns must sum to 1")

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.matrix))

    def to_text(self) -> str:
        rows = [str(self.n)]
        rows += [" ".join(repr(float(v)) for v in row) for row in self.matrix]
        return "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CalibrationMatrix":
        lines = [l for l in text.splitlines() if l.strip()]
        n = int(lines[0])
        return cls(n, np.array([[float(v) for v in l.split()] for l in lines[1:]]))

    @classmethod
    def identity(cls, n: int) -> "CalibrationMatrix":
        return cls(n, np.eye(1 << n))


def build_calibration_matrix(n: int, noise: NoiseModel | None, shots: int, rng=None,
                             qubits=None) -> CalibrationMatrix:
    """Prepare every basis state on ``qubits`` and histogram the readout."""
    if n > 10:
        raise ValueError("calibration is limited to 10 qubits")
    qubits = list(range(n)) if qubits is None else list(qubits)
    rng = np.random.default_rng() if rng is None else rng
    sub = NoiseModel(0.0, {i: noise.flips(q) for i, q in enumerate(qubits)}) if noise else None
    dim = 1 << n
    mat = np.zeros((dim, dim))
    for x in range(dim):
        c = DynamicCircuit(n, n)
        for q in range(n):
            if (x >> (n - 1 - q)) & 1:
                c.gate("X", q)
        for q in range(n):
            c.measure(q, q)
        counts = run_counts(c, shots, sub, rng)
        for bits, k in counts.items():
            mat[int(bits, 2), x] += k
        mat[:, x] /= shots
    return CalibrationMatrix(n, mat)


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u * k > css - 1)[0][-1]
    tau = (css[rho] - 1) / (rho + 1)
    return np.maximum(v - tau, 0.0)


def counts_to_vector(counts: dict, n: int) -> np.ndarray:
    vec = np.zeros(1 << n)
    for bits, k in counts.items():
        vec[int(bits, 2)] += k
    return vec


def mitigate_counts(cal: CalibrationMatrix, counts, max_iter: int = 20000, tol: float = 1e-13) -> np.ndarray:
    """Closest valid distribution: argmin ||M p - c|| over the probability simplex.

    ``counts`` is a dict of bitstrings or a vector; solved by accelerated
    projected gradient, which is deterministic.
    """
    c = counts_to_vector(counts, cal.n) if isinstance(counts, dict) else np.asarray(counts, dtype=float)
    if c.shape != (1 << cal.n,):
        raise ValueError("counts dimension does not match calibration matrix")
    total = c.sum()
    if total <= 0:
        raise ValueError("no counts to mitigate")
    c = c / total
    m = cal.matrix
    if cal.condition_number > MAX_CONDITION:
        raise ValueError("calibration matrix is numerically singular")
    try:
        direct = np.linalg.solve(m, c)
    except np.linalg.LinAlgError:
        direct = None
    if direct is not None and np.all(direct >= 0):
        return direct / direct.sum()
    step = 1.0 / np.linalg.norm(m, 2) ** 2
    p = _project_simplex(c.copy())
    y = p.copy()
    t = 1.0
    for _ in range(max_iter):
        grad = m.T @ (m @ y - c)
        p_new = _project_simplex(y - step * grad)
        t_new = (1 + math.sqrt(1 + 4 * t * t)) / 2
        y = p_new + ((t - 1) / t_new) * (p_new - p)
        if np.max(np.abs(p_new - p)) < tol:
            p = p_new
            break
        p, t = p_new, t_new
    return p


# ---------------------------------------------------------------------------
# Pauli twirling

def _conjugate_pauli(gate: str, a: str, b: str) -> tuple[str, str]:
    """Paulis (a', b') with G (a x b) G^dagger = +-(a' x b') for G in {CX, CZ}."""
    x = [a in "XY", b in "XY"]
    z = [a in "ZY", b in "ZY"]
    if gate == "CX":
        x = [x[0], x[1] ^ x[0]]
        z = [z[0] ^ z[1], z[1]]
    else:
        z = [z[0] ^ x[1], z[1] ^ x[0]]
    sym = {(0, 0): "I", (1, 0): "X", (1, 1): "Y", (0, 1): "Z"}
    return sym[(int(x[0]), int(z[0]))], sym[(int(x[1]), int(z[1]))]


def pauli_twirl_cx(circuit: DynamicCircuit, rng) -> DynamicCircuit:
    """Dress every unconditional CX (and CZ) with a random Pauli pair and its
    propagated partner, so the ideal action is unchanged up to global phase."""
    out = DynamicCircuit(circuit.n_qubits, circuit.n_cbits)
    for ins in circuit.instructions:
        if ins.kind == "gate" and ins.name in TWO_QUBIT:
            a, b = "IXYZ"[rng.integers(4)], "IXYZ"[rng.integers(4)]
            pa, pb = _conjugate_pauli(ins.name, a, b)
            for sym, q in zip((a, b), ins.qubits):
                if sym != "I":
                    out.gate(sym, q)
            out.instructions.append(ins)
            for sym, q in zip((pa, pb), ins.qubits):
                if sym != "I":
                    out.gate(sym, q)
        else:
            out.instructions.append(ins)
    return out


# ---------------------------------------------------------------------------
# self-mitigation

def self_mitigate(phys_meas: float, mitig_meas: float, kappa: float = 1.0) -> float:
    """Rescale by the mitigation run whose ideal value is +1."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if abs(mitig_meas) < MIN_MITIGATION_VALUE:
        raise ValueError(f"mitigation value {mitig_meas:.3g} is too small to divide by")
    return phys_meas / mitig_meas ** kappa


def propagate_self_mitigation_error(phys: tuple, mitig: tuple, kappa: float = 1.0) -> float:
    pm, pv = phys
    mm, mv = mitig
    if abs(mm) < MIN_MITIGATION_VALUE:
        raise ValueError(f"mitigation value {mm:.3g} is too small to divide by")
    return (1 / mm) ** (2 * kappa) * pv + kappa ** 2 * (pm / mm ** (kappa + 1)) ** 2 * mv


_CLIFFORD_ROT = {
    # RX, RY, RZ at multiples of pi/2 as gate words (global phase ignored)
    "RZ": ["", "S", "Z", "SSS"],
    "RX": ["", "HSH", "X", "HSSSH"],
    "RY": ["", "SSSHSHS", "Y", "SSSHSSSHS"],
}


def _snap(theta: float) -> int:
    return int(round(theta / (math.pi / 2))) % 4


def snap_circuit(circuit: DynamicCircuit, mode: str = "nearest") -> DynamicCircuit:
    """Replace every rotation by a Clifford: nearest multiple of pi/2, or 0."""
    out = DynamicCircuit(circuit.n_qubits, circuit.n_cbits)
    for ins in circuit.instructions:
        if ins.name in _CLIFFORD_ROT:
            k = _snap(ins.params[0]) if mode == "nearest" else 0
            for g in _CLIFFORD_ROT[ins.name][k]:
                out.instructions.append(Instruction(ins.kind, g, ins.qubits, (), ins.cbit,
                                                    ins.condition, ins.value))
        else:
            out.instructions.append(ins)
    return out


def _data_unitary(circuit: DynamicCircuit, data: list) -> np.ndarray | None:
    """Map on ``data`` qubits of a deterministic circuit (all-zero branch)."""
    n = len(data)
    others = [q for q in range(circuit.n_qubits) if q not in data]
    n_meas = sum(1 for i in circuit.instructions if i.kind in ("measure", "reset"))
    cols = []
    for b in range(1 << n):
        amps = np.zeros(1 << circuit.n_qubits, dtype=complex)
        idx = 0
        for k, q in enumerate(data):
            if (b >> (n - 1 - k)) & 1:
                idx |= 1 << (circuit.n_qubits - 1 - q)
        amps[idx] = 1
        try:
            state, _ = run_exact(circuit, forced=[0] * n_meas, initial=QuantumState(amps, circuit.n_qubits))
        except ValueError:
            return None
        psi = np.transpose(state.amplitudes.reshape((2,) * circuit.n_qubits), data + others)
        psi = psi.reshape(1 << n, -1)
        # the other qubits are in a definite basis state after measurement/reset
        j = int(np.argmax(np.linalg.norm(psi, axis=0)))
        cols.append(psi[:, j])
    mat = np.array(cols).T
    mat = mat / np.linalg.norm(mat[:, 0])
    if not np.allclose(mat.conj().T @ mat, np.eye(1 << n), atol=1e-8):
        return None
    return mat


_STAB_PREP = [
    (np.array([1, 0]), ""), (np.array([0, 1]), "X"),
    (np.array([1, 1]) / math.sqrt(2), "H"), (np.array([1, -1]) / math.sqrt(2), "XH"),
    (np.array([1, 1j]) / math.sqrt(2), "HS"), (np.array([1, -1j]) / math.sqrt(2), "XHS"),
]


def _product_preparation(psi: np.ndarray, n: int) -> list | None:
    """Single-qubit stabilizer-state words whose product equals ``psi``."""
    state = QuantumState(psi, n)
    words = []
    prod = np.ones(1, dtype=complex)
    for q in range(n):
        rho = reduced_state(state, [q])
        best = max(_STAB_PREP, key=lambda sw: np.real(sw[0].conj() @ rho @ sw[0]))
        if np.real(best[0].conj() @ rho @ best[0]) < 1 - 1e-8:
            return None
        words.append(best[1])
        prod = np.kron(prod, best[0])
    if abs(np.vdot(prod, psi)) < 1 - 1e-8:
        return None
    return words


def _eigenstate(basis: PauliString) -> np.ndarray:
    vec = np.ones(1, dtype=complex)
    single = {"I": _STAB_PREP[0][0], "Z": _STAB_PREP[0][0], "X": _STAB_PREP[2][0], "Y": _STAB_PREP[4][0]}
    for c in basis.ops:
        vec = np.kron(vec, single[c])
    return vec


def mitigation_circuit(circuit: DynamicCircuit, basis: PauliString, data=None) -> DynamicCircuit:
    """Clifford twin of ``circuit`` whose output is the +1 eigenstate of ``basis``.

    Rotations are snapped to Clifford angles (nearest first, all-zero as a
    fallback) and the input is the product state that the snapped circuit
    maps onto that eigenstate. The two-qubit gate content is unchanged, so
    the CX-count ratio is 1.
    """
    data = list(range(basis.n)) if data is None else list(data)
    target = _eigenstate(basis)
    for mode in ("nearest", "zero"):
        snapped = snap_circuit(circuit, mode)
        u = _data_unitary(snapped, data)
        if u is None:
            continue
        words = _product_preparation(u.conj().T @ target, len(data))
        if words is None:
            continue
        out = DynamicCircuit(circuit.n_qubits, circuit.n_cbits)
        for q, w in zip(data, words):
            for g in w:
                out.gate(g, q)
        out.instructions += snapped.instructions
        return out
    raise ValueError("no product-state input makes the snapped circuit reach the measured eigenstate")


# ---------------------------------------------------------------------------
# estimation

@dataclass
class MitigationConfig:
    readout: bool = False
    calibration_shots: int = 10_000
    self_mitigation: bool = False
    kappa: float = 1.0
    twirl: bool = False
    twirl_seed: int | None = None

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")


@dataclass
class GroupEstimate:
    basis: str
    shots: int
    mean: float
    variance: float
    term_means: dict
    factors: dict = field(default_factory=dict)


@dataclass
class EstimateResult:
    mean: float
    variance: float
    groups: list
    shots: list
    flags: list = field(default_factory=list)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)

    def term_mean(self, index: int, h: Hamiltonian | None = None) -> float:
        """Ratio-weighted mean of one term over the groups that measured it."""
        total = 0.0
        for g in self.groups:
            if index in g.term_means:
                total += g.term_means[index][1] * g.term_means[index][0]
        return total


def allocate_shots(total: int, k: int) -> list[int]:
    if total < k:
        raise ValueError(f"{total} shots cannot cover {k} groups")
    base, extra = divmod(total, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def measurement_circuit(circuit: DynamicCircuit, basis: PauliString, data=None) -> tuple[DynamicCircuit, list]:
    """Append basis changes and readout of ``data``; returns circuit and readout cbits."""
    data = list(range(basis.n)) if data is None else list(data)
    offset = circuit.n_cbits
    out = DynamicCircuit(circuit.n_qubits, offset + len(data), list(circuit.instructions))
    for q, c in zip(data, basis.ops):
        if c == "X":
            out.h(q)
        elif c == "Y":
            for g in "SSSH":
                out.gate(g, q)
    cbits = []
    for k, q in enumerate(data):
        out.measure(q, offset + k)
        cbits.append(offset + k)
    return out, cbits


def _marginal(counts: dict, cbits: list) -> dict:
    out: dict = {}
    for bits, k in counts.items():
        key = "".join(bits[c] for c in cbits)
        out[key] = out.get(key, 0) + k
    return out


def _eigen_table(strings, n: int) -> np.ndarray:
    """``table[j, b]`` = eigenvalue of string j on basis outcome b (+-1)."""
    idx = np.arange(1 << n)
    table = np.empty((len(strings), 1 << n))
    for j, p in enumerate(strings):
        mask = 0
        for q, c in enumerate(p.ops):
            if c != "I":
                mask |= 1 << (n - 1 - q)
        parity = np.array([bin(int(v)).count("1") & 1 for v in (idx & mask)])
        table[j] = 1 - 2 * parity
    return table


def _moments(table: np.ndarray, probs: np.ndarray):
    mean = table @ probs
    cov = (table * probs) @ table.T - np.outer(mean, mean)
    return mean, cov


def variance_with_covariance(h: Hamiltonian, groups, group_counts, shots=None) -> float:
    """Sum over groups of Var(per-shot group value)/N_k.

    The per-shot value of group k is sum_j c_j R_kj o_j, so its variance
    expands into the coefficient-weighted variances of the members plus the
    pairwise covariances estimated from the same shots.
    """
    total = 0.0
    for k, (g, counts) in enumerate(zip(groups, group_counts)):
        n_k = sum(counts.values()) if shots is None else shots[k]
        if n_k <= 0:
            raise ValueError("every group needs counts")
        for j, _ in g.members:
            if not qubitwise_compatible(g.basis, h.terms[j].string):
                raise ValueError(f"term {h.terms[j].string} is not compatible with basis {g.basis}")
        probs = counts_to_vector(counts, h.n)
        probs = probs / probs.sum()
        strings = [h.terms[j].string for j, _ in g.members]
        a = np.array([h.terms[j].coeff * r for j, r in g.members])
        _, cov = _moments(_eigen_table(strings, h.n), probs)
        var = float(np.sum(a ** 2 * np.diag(cov)))
        for i in range(len(a)):
            for l in range(i + 1, len(a)):
                var += 2 * a[i] * a[l] * cov[i, l]
        total += var / n_k
    return total


def estimate_energy(h: Hamiltonian, circuit: DynamicCircuit, shots: int, noise: NoiseModel | None = None,
                    mitigation: MitigationConfig | None = None, rng=None, groups=None, data=None,
                    calibration: CalibrationMatrix | None = None) -> EstimateResult:
    """Estimate <h> on the data qubits of ``circuit`` from sampled counts."""
    if len(h.terms) == 0:
        raise ValueError("empty Hamiltonian")
    rng = np.random.default_rng() if rng is None else rng
    mitigation = mitigation or MitigationConfig()
    data = list(range(h.n)) if data is None else list(data)
    groups = group_commuting(h) if groups is None else groups
    flags = []
    if not groups:
        return EstimateResult(h.constant, 0.0, [], [], flags)
    alloc = allocate_shots(shots, len(groups))
    if mitigation.readout and calibration is None:
        calibration = build_calibration_matrix(h.n, noise, mitigation.calibration_shots, rng, qubits=data)
    twirl_rng = np.random.default_rng(mitigation.twirl_seed) if mitigation.twirl_seed is not None else rng
    inv = np.linalg.inv(calibration.matrix) if (mitigation.readout and calibration is not None) else None

    mean = h.constant
    variance = 0.0
    results = []
    for g, n_k in zip(groups, alloc):
        strings = [h.terms[j].string for j, _ in g.members]
        a = np.array([h.terms[j].coeff * r for j, r in g.members])
        table = _eigen_table(strings, h.n)

        def sample(circ):
            if mitigation.twirl:
                circ = pauli_twirl_cx(circ, twirl_rng)
            mc, cbits = measurement_circuit(circ, g.basis, data)
            raw = _marginal(run_counts(mc, n_k, noise, rng), cbits)
            vec = counts_to_vector(raw, h.n) / n_k
            if inv is not None:
                probs = mitigate_counts(calibration, raw)
                # per-shot values linearized through the inverse calibration
                shot_table = table @ inv
            else:
                probs = vec
                shot_table = table
            means = table @ probs
            _, cov = _moments(shot_table, vec)
            return means, cov

        x, cov_x = sample(circuit)
        factors = {}
        if mitigation.self_mitigation:
            f, cov_f = sample(mitigation_circuit(circuit, g.basis, data))
            kap = mitigation.kappa
            scale = np.ones(len(a))
            for i, (j, _) in enumerate(g.members):
                if abs(f[i]) < MIN_MITIGATION_VALUE:
                    flags.append(f"term {j}: mitigation value {f[i]:.3g} too small, left unmitigated")
                    continue
                scale[i] = f[i] ** -kap
                factors[j] = float(f[i])
            corrected = x * scale
            u = a * scale
            w = np.array([a[i] * kap * x[i] * f[i] ** (-kap - 1) if (g.members[i][0] in factors) else 0.0
                          for i in range(len(a))])
            var_k = (u @ cov_x @ u + w @ cov_f @ w) / n_k
            x = corrected
        else:
            var_k = (a @ cov_x @ a) / n_k
        if var_k < 0:
            flags.append(f"group {g.basis}: negative variance {var_k:.3g} clamped to 0")
            warnings.warn("negative variance estimate clamped to zero")
            var_k = 0.0
        g_mean = float(a @ x)
        mean += g_mean
        variance += float(var_k)
        results.append(GroupEstimate(g.basis.ops, n_k, g_mean, float(var_k),
                                     {j: (float(x[i]), r) for i, (j, r) in enumerate(g.members)}, factors))
    return EstimateResult(float(mean), float(variance), results, alloc, flags)


def exact_term_expectations(h: Hamiltonian, rho: np.ndarray) -> np.ndarray:
    from .pauli import pauli_matrix

    return np.array([np.real(np.trace(rho @ pauli_matrix(t.string))) for t in h.terms])
