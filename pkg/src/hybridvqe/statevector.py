"""Dense statevector simulation of dynamic circuits.

Gates follow the half-angle convention, e.g. ``RY(t) = exp(-i t Y / 2)``.
Qubit 0 is the most significant bit of an amplitude index and the leftmost
character of every bitstring printed or serialized by this module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .pauli import Hamiltonian, PauliString, pauli_action

GATE_NAMES = ("H", "S", "X", "Y", "Z", "RX", "RY", "RZ", "CZ", "CX")
TWO_QUBIT = ("CZ", "CX")
PARAMETRIC = ("RX", "RY", "RZ")

_SQ2 = 1 / np.sqrt(2)
_FIXED = {
    "H": np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex),
    "S": np.array([[1, 0], [0, 1j]], dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "CZ": np.diag([1, 1, 1, -1]).astype(complex),
    "CX": np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex),
}

ZERO_PROBABILITY = 1e-14


def gate_matrix(name: str, params=()) -> np.ndarray:
    name = name.upper()
    if name in _FIXED:
        return _FIXED[name]
    if name not in PARAMETRIC:
        raise ValueError(f"unknown gate {name!r}")
    (theta,) = params
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    if name == "RX":
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if name == "RY":
        return np.array([[c, -s], [s, c]], dtype=complex)
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=complex)


class QuantumState:
    """Pure state on ``n`` qubits. Single owner; operations return new states."""

    def __init__(self, amplitudes, n: int | None = None):
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        if n is None:
            n = int(round(np.log2(amps.size)))
        if amps.size != 1 << n:
            raise ValueError("amplitude count must be 2**n")
        self.n = n
        self.amplitudes = amps

    @classmethod
    def zero(cls, n: int) -> "QuantumState":
        amps = np.zeros(1 << n, dtype=complex)
        amps[0] = 1
        return cls(amps, n)

    @classmethod
    def from_bitstring(cls, bits: str) -> "QuantumState":
        amps = np.zeros(1 << len(bits), dtype=complex)
        amps[int(bits, 2)] = 1
        return cls(amps, len(bits))

    @classmethod
    def plus(cls, n: int) -> "QuantumState":
        return cls(np.full(1 << n, 2 ** (-n / 2), dtype=complex), n)

    @classmethod
    def random(cls, n: int, rng) -> "QuantumState":
        v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
        return cls(v / np.linalg.norm(v), n)

    def copy(self) -> "QuantumState":
        return QuantumState(self.amplitudes.copy(), self.n)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def tensor(self, other: "QuantumState") -> "QuantumState":
        return QuantumState(np.kron(self.amplitudes, other.amplitudes), self.n + other.n)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def __repr__(self):
        return f"QuantumState(n={self.n})"


def _apply_matrix(amps: np.ndarray, n: int, mat: np.ndarray, qubits) -> np.ndarray:
    k = len(qubits)
    psi = amps.reshape((2,) * n)
    op = mat.reshape((2,) * (2 * k))
    out = np.tensordot(op, psi, axes=(list(range(k, 2 * k)), list(qubits)))
    return np.moveaxis(out, list(range(k)), list(qubits)).reshape(-1)


def apply_gate(state: QuantumState, name: str, qubits, params=()) -> QuantumState:
    qubits = tuple(int(q) for q in np.atleast_1d(qubits))
    name = name.upper()
    mat = gate_matrix(name, params)
    if mat.shape[0] != 1 << len(qubits):
        raise ValueError(f"gate {name} acts on {mat.shape[0].bit_length() - 1} qubits, got {qubits}")
    if len(set(qubits)) != len(qubits) or any(q < 0 or q >= state.n for q in qubits):
        raise ValueError(f"invalid qubits {qubits} for a {state.n}-qubit state")
    return QuantumState(_apply_matrix(state.amplitudes, state.n, mat, qubits), state.n)


def apply_unitary(state: QuantumState, mat: np.ndarray, qubits) -> QuantumState:
    return QuantumState(_apply_matrix(state.amplitudes, state.n, np.asarray(mat), tuple(qubits)), state.n)


def apply_pauli(state: QuantumState, p: PauliString) -> QuantumState:
    if p.n != state.n:
        raise ValueError("Pauli length does not match state")
    idx = np.arange(1 << state.n)
    rows, phases = pauli_action(p, idx)
    out = np.empty_like(state.amplitudes)
    out[rows] = phases * state.amplitudes
    return QuantumState(out, state.n)


def probability_one(state: QuantumState, qubit: int) -> float:
    psi = state.amplitudes.reshape((2,) * state.n)
    return float(np.sum(np.abs(np.take(psi, 1, axis=qubit)) ** 2))


def project(state: QuantumState, qubit: int, outcome: int) -> tuple[float, QuantumState]:
    """Return (probability, renormalized post-measurement state)."""
    psi = state.amplitudes.reshape((2,) * state.n).copy()
    sl = [slice(None)] * state.n
    sl[qubit] = 1 - outcome
    psi[tuple(sl)] = 0
    p = float(np.sum(np.abs(psi) ** 2))
    if p <= ZERO_PROBABILITY:
        return 0.0, state
    return p, QuantumState(psi.reshape(-1) / np.sqrt(p), state.n)


def measure(state: QuantumState, qubit: int, rng=None, forced: int | None = None):
    """Projective Z measurement; returns ``(outcome, collapsed state)``.

    With ``forced`` the outcome is prescribed, and a zero-probability branch
    raises ``ValueError``.
    """
    if forced is None:
        if rng is None:
            raise ValueError("measure needs an rng or a forced outcome")
        p1 = probability_one(state, qubit)
        outcome = int(rng.random() < p1)
    else:
        outcome = int(forced)
    p, post = project(state, qubit, outcome)
    if p == 0.0:
        raise ValueError(f"forced outcome {outcome} on qubit {qubit} has zero probability")
    return outcome, post


@dataclass(frozen=True)
class Instruction:
    """One circuit step.

    ``kind`` is ``gate``, ``measure``, ``reset`` or ``conditional``. A
    conditional applies its gate when the parity of ``condition`` cbits equals
    ``value``.
    """

    kind: str
    name: str = ""
    qubits: tuple = ()
    params: tuple = ()
    cbit: int | None = None
    condition: tuple = ()
    value: int = 1

    def is_two_qubit(self) -> bool:
        return self.kind in ("gate", "conditional") and self.name in TWO_QUBIT

    def __str__(self):
        q = ",".join(map(str, self.qubits))
        p = "(" + ",".join(f"{v:.6g}" for v in self.params) + ")" if self.params else ""
        if self.kind == "gate":
            return f"{self.name}{p} {q}"
        if self.kind == "measure":
            return f"MEASURE {q} -> c{self.cbit}"
        if self.kind == "reset":
            return f"RESET {q}"
        cond = "^".join(f"c{c}" for c in self.condition)
        return f"IF {cond}=={self.value} {self.name}{p} {q}"


@dataclass
class DynamicCircuit:
    n_qubits: int
    n_cbits: int = 0
    instructions: list = field(default_factory=list)

    def _check_qubits(self, qubits):
        for q in qubits:
            if not 0 <= q < self.n_qubits:
                raise ValueError(f"qubit {q} out of range")

    def _check_arity(self, name, qubits):
        want = 2 if name in TWO_QUBIT else 1
        if len(qubits) != want or len(set(qubits)) != want:
            raise ValueError(f"{name} needs {want} distinct qubit(s), got {qubits}")

    def gate(self, name: str, *qubits, params=()):
        name = name.upper()
        if name not in GATE_NAMES:
            raise ValueError(f"unknown gate {name!r}")
        self._check_arity(name, qubits)
        self._check_qubits(qubits)
        self.instructions.append(Instruction("gate", name, tuple(qubits), tuple(float(p) for p in params)))
        return self

    def h(self, q):
        return self.gate("H", q)

    def cz(self, a, b):
        return self.gate("CZ", a, b)

    def cx(self, a, b):
        return self.gate("CX", a, b)

    def rx(self, theta, q):
        return self.gate("RX", q, params=(theta,))

    def ry(self, theta, q):
        return self.gate("RY", q, params=(theta,))

    def rz(self, theta, q):
        return self.gate("RZ", q, params=(theta,))

    def measure(self, qubit: int, cbit: int):
        self._check_qubits([qubit])
        if not 0 <= cbit < self.n_cbits:
            raise ValueError(f"cbit {cbit} out of range")
        self.instructions.append(Instruction("measure", qubits=(qubit,), cbit=cbit))
        return self

    def reset(self, qubit: int):
        self._check_qubits([qubit])
        self.instructions.append(Instruction("reset", qubits=(qubit,)))
        return self

    def conditional(self, cbits, name: str, *qubits, params=(), value: int = 1):
        name = name.upper()
        if name not in GATE_NAMES:
            raise ValueError(f"unknown gate {name!r}")
        self._check_arity(name, qubits)
        self._check_qubits(qubits)
        self.instructions.append(
            Instruction("conditional", name, tuple(qubits), tuple(float(p) for p in params),
                        condition=tuple(cbits), value=int(value))
        )
        return self

    def validate(self):
        written = set()
        for ins in self.instructions:
            if ins.kind == "measure":
                written.add(ins.cbit)
            elif ins.kind == "conditional":
                missing = [c for c in ins.condition if c not in written]
                if missing:
                    raise ValueError(f"conditional reads unwritten cbit(s) {missing}")
        return self

    def compose(self, other: "DynamicCircuit", qubit_map=None, cbit_offset: int = 0):
        """Append ``other`` with its qubits renamed through ``qubit_map``."""
        qubit_map = list(range(other.n_qubits)) if qubit_map is None else list(qubit_map)
        for ins in other.instructions:
            qs = tuple(qubit_map[q] for q in ins.qubits)
            cb = None if ins.cbit is None else ins.cbit + cbit_offset
            cond = tuple(c + cbit_offset for c in ins.condition)
            self.instructions.append(Instruction(ins.kind, ins.name, qs, ins.params, cb, cond, ins.value))
        return self

    def count(self, names=TWO_QUBIT) -> int:
        return sum(1 for ins in self.instructions if ins.kind in ("gate", "conditional") and ins.name in names)

    def copy(self) -> "DynamicCircuit":
        return DynamicCircuit(self.n_qubits, self.n_cbits, list(self.instructions))

    def __str__(self):
        head = f"# qubits={self.n_qubits} cbits={self.n_cbits}\n"
        return head + "".join(f"{ins}\n" for ins in self.instructions)


@dataclass
class NoiseModel:
    """Two-qubit depolarizing noise plus per-qubit readout flips.

    ``readout_flip[q] = (P(read 1 | prep 0), P(read 0 | prep 1))``; qubits
    missing from the mapping read out perfectly.
    """

    two_qubit_depolarizing_p: float = 0.0
    readout_flip: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.two_qubit_depolarizing_p <= 1:
            raise ValueError("depolarizing probability must lie in [0, 1]")
        if not isinstance(self.readout_flip, dict):
            self.readout_flip = dict(enumerate(self.readout_flip))
        for q, pair in self.readout_flip.items():
            if len(pair) != 2 or not all(0 <= v <= 1 for v in pair):
                raise ValueError(f"readout flip for qubit {q} must be two probabilities")

    def flips(self, qubit: int) -> tuple[float, float]:
        return tuple(self.readout_flip.get(qubit, (0.0, 0.0)))

    @classmethod
    def uniform_readout(cls, n: int, p10: float, p01: float, depolarizing: float = 0.0):
        return cls(depolarizing, {q: (p10, p01) for q in range(n)})


def spawn_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent stream for task ``index`` of a run seeded with ``master_seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(index)]))


_PAULI_2Q = [a + b for a in "IXYZ" for b in "IXYZ"]


def _insert_pauli(state: QuantumState, label: str, qubits) -> QuantumState:
    for sym, q in zip(label, qubits):
        if sym != "I":
            state = apply_gate(state, sym, q)
    return state


def _condition_holds(ins: Instruction, record) -> bool:
    bits = []
    for c in ins.condition:
        if record[c] is None:
            raise ValueError(f"conditional reads unwritten cbit c{c}")
        bits.append(record[c])
    return (sum(bits) % 2) == ins.value


def _initial(circuit: DynamicCircuit, initial) -> QuantumState:
    if initial is None:
        return QuantumState.zero(circuit.n_qubits)
    if initial.n != circuit.n_qubits:
        raise ValueError("initial state size does not match circuit")
    return initial.copy()


def _with_final_readout(circuit: DynamicCircuit) -> DynamicCircuit:
    """Circuits without measurements read every qubit into cbit q."""
    if any(ins.kind == "measure" for ins in circuit.instructions):
        return circuit
    c = DynamicCircuit(circuit.n_qubits, max(circuit.n_cbits, circuit.n_qubits), list(circuit.instructions))
    for q in range(circuit.n_qubits):
        c.measure(q, q)
    return c


def run_exact(circuit: DynamicCircuit, rng=None, forced=None, initial=None, noise=None):
    """Run one trajectory; returns ``(state, record)``.

    ``forced`` prescribes measurement outcomes in program order; otherwise
    ``rng`` draws them. Unwritten cbits read as ``None`` in the record.
    """
    state = _initial(circuit, initial)
    record = [None] * circuit.n_cbits
    forced = None if forced is None else list(forced)
    p_dep = noise.two_qubit_depolarizing_p if noise else 0.0
    k = 0
    for ins in circuit.instructions:
        if ins.kind == "gate" or (ins.kind == "conditional" and _condition_holds(ins, record)):
            state = apply_gate(state, ins.name, ins.qubits, ins.params)
            if p_dep > 0 and ins.name in TWO_QUBIT and rng.random() < p_dep:
                state = _insert_pauli(state, _PAULI_2Q[rng.integers(1, 16)], ins.qubits)
        elif ins.kind == "measure":
            f = None
            if forced is not None:
                if k >= len(forced):
                    raise ValueError("not enough forced outcomes")
                f = forced[k]
            outcome, state = measure(state, ins.qubits[0], rng, f)
            record[ins.cbit] = outcome
            k += 1
        elif ins.kind == "reset":
            if forced is None:
                outcome, state = measure(state, ins.qubits[0], rng)
            else:
                p1 = probability_one(state, ins.qubits[0])
                outcome, state = measure(state, ins.qubits[0], None, int(p1 > 0.5))
            if outcome:
                state = apply_gate(state, "X", ins.qubits[0])
    return state, record


def branches(circuit: DynamicCircuit, initial=None, insertions=None, tail_readout: bool = True):
    """Enumerate every measurement branch exactly.

    Returns a list of ``(probability, record, state)``. ``insertions`` maps an
    instruction index to a two-qubit Pauli label applied right after that
    gate whenever it executes. With ``tail_readout`` a trailing block of
    measurements on distinct qubits is folded into a single probability table
    instead of branching, and the returned state is the pre-readout state.
    """
    insertions = insertions or {}
    instrs = circuit.instructions
    stop = len(instrs)
    if tail_readout:
        seen = set()
        while stop > 0 and instrs[stop - 1].kind == "measure" and instrs[stop - 1].qubits[0] not in seen:
            seen.add(instrs[stop - 1].qubits[0])
            stop -= 1
    live = [(1.0, _initial(circuit, initial), [None] * circuit.n_cbits)]
    for i, ins in enumerate(instrs[:stop]):
        nxt = []
        for prob, state, record in live:
            if ins.kind == "gate" or (ins.kind == "conditional" and _condition_holds(ins, record)):
                state = apply_gate(state, ins.name, ins.qubits, ins.params)
                if i in insertions:
                    state = _insert_pauli(state, insertions[i], ins.qubits)
                nxt.append((prob, state, record))
            elif ins.kind == "conditional":
                nxt.append((prob, state, record))
            else:
                q = ins.qubits[0]
                for outcome in (0, 1):
                    p, post = project(state, q, outcome)
                    if p == 0.0:
                        continue
                    rec = list(record)
                    if ins.kind == "measure":
                        rec[ins.cbit] = outcome
                    elif outcome:
                        post = apply_gate(post, "X", q)
                    nxt.append((prob * p, post, rec))
        live = nxt
    tail = instrs[stop:]
    if not tail:
        return [(p, tuple(r), s) for p, s, r in live]
    out = []
    n = circuit.n_qubits
    for prob, state, record in live:
        probs = state.probabilities()
        for idx in np.flatnonzero(probs > ZERO_PROBABILITY):
            rec = list(record)
            for ins in tail:
                rec[ins.cbit] = (int(idx) >> (n - 1 - ins.qubits[0])) & 1
            out.append((prob * float(probs[idx]), tuple(rec), state))
    return out


def record_distribution(circuit: DynamicCircuit, initial=None, insertions=None) -> dict:
    dist: dict = {}
    for p, rec, _ in branches(circuit, initial, insertions):
        key = tuple(0 if b is None else b for b in rec)
        dist[key] = dist.get(key, 0.0) + p
    return dist


def _cbit_sources(circuit: DynamicCircuit) -> dict:
    src = {}
    for ins in circuit.instructions:
        if ins.kind == "measure":
            src[ins.cbit] = ins.qubits[0]
    return src


def run_counts(circuit: DynamicCircuit, shots: int, noise: NoiseModel | None = None, rng=None, initial=None) -> dict:
    """Sample ``shots`` classical records; returns ``{bitstring: count}``.

    Depolarizing faults are drawn per shot and shots sharing a fault pattern
    are simulated together, exactly, through ``branches``. Readout flips act
    on the reported bits only, so feed-forward sees the true outcomes.
    """
    if shots < 0:
        raise ValueError("shots must be non-negative")
    circuit = _with_final_readout(circuit).validate()
    rng = np.random.default_rng() if rng is None else rng
    locs = [i for i, ins in enumerate(circuit.instructions) if ins.is_two_qubit()]
    p_dep = noise.two_qubit_depolarizing_p if noise else 0.0
    if p_dep > 0 and locs and shots:
        hit = rng.random((shots, len(locs))) < p_dep
        codes = np.where(hit, rng.integers(1, 16, size=(shots, len(locs))), 0)
        patterns, weights = np.unique(codes, axis=0, return_counts=True)
    else:
        patterns, weights = np.zeros((1, len(locs)), dtype=int), np.array([shots])
    rows = []
    for pattern, w in zip(patterns, weights):
        ins_map = {locs[j]: _PAULI_2Q[c] for j, c in enumerate(pattern) if c}
        dist = record_distribution(circuit, initial, ins_map)
        keys = list(dist)
        probs = np.array([dist[k] for k in keys])
        draws = rng.multinomial(int(w), probs / probs.sum())
        for k, d in zip(keys, draws):
            if d:
                rows.append(np.repeat(np.array(k, dtype=np.uint8)[None, :], d, axis=0))
    if not rows:
        return {}
    bits = np.concatenate(rows, axis=0)
    if noise is not None and noise.readout_flip:
        for cbit, q in _cbit_sources(circuit).items():
            p10, p01 = noise.flips(q)
            if p10 == 0 and p01 == 0:
                continue
            u = rng.random(bits.shape[0])
            col = bits[:, cbit]
            flip = np.where(col == 0, u < p10, u < p01)
            bits[:, cbit] = col ^ flip
    uniq, cnt = np.unique(bits, axis=0, return_counts=True)
    return {"".join(map(str, row)): int(c) for row, c in zip(uniq, cnt)}


def run(circuit: DynamicCircuit, mode: str = "exact", shots: int | None = None, noise=None,
        rng=None, seed: int | None = None, initial=None, forced=None):
    """Dispatch to ``run_exact`` (returns state, record) or ``run_counts``."""
    if rng is None and seed is not None:
        rng = np.random.default_rng(seed)
    circuit.validate()
    if mode == "exact":
        if rng is None and forced is None:
            rng = np.random.default_rng()
        return run_exact(circuit, rng, forced, initial, noise)
    if mode == "counts":
        if shots is None:
            raise ValueError("counts mode needs a shot count")
        return run_counts(circuit, shots, noise, rng, initial)
    raise ValueError(f"unknown mode {mode!r}")


def expectation_exact(state: QuantumState, p: PauliString) -> float:
    if p.n != state.n:
        raise ValueError("Pauli length does not match state")
    idx = np.arange(1 << state.n)
    rows, phases = pauli_action(p, idx)
    val = np.vdot(state.amplitudes[rows], phases * state.amplitudes)
    return float(val.real)


def expectation(state: QuantumState, h: Hamiltonian) -> float:
    return sum(t.coeff * expectation_exact(state, t.string) for t in h.terms)


def fidelity(a: QuantumState, b: QuantumState) -> float:
    if a.n != b.n:
        raise ValueError("states have different qubit counts")
    f = abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2
    return float(min(1.0, max(0.0, f)))


def reduced_state(state: QuantumState, keep) -> np.ndarray:
    """Density matrix on the ``keep`` qubits (in the given order)."""
    keep = list(keep)
    rest = [q for q in range(state.n) if q not in keep]
    psi = np.transpose(state.amplitudes.reshape((2,) * state.n), keep + rest)
    psi = psi.reshape(1 << len(keep), -1)
    return psi @ psi.conj().T


def counts_to_json(counts: dict) -> str:
    """Serialize counts with sorted bitstring keys (qubit 0 leftmost)."""
    return json.dumps({k: int(counts[k]) for k in sorted(counts)}, separators=(",", ":"))


def counts_from_json(text: str) -> dict:
    data = json.loads(text)
    return {str(k): int(v) for k, v in data.items()}
