"""Measurement-based patterns: construction, corrections, reduction, compilation.

A pattern prepares every non-input qubit in |+>, applies an ordered Clifford
prefix (CZ edges plus local Cliffords), measures the non-output qubits in
order and finally applies Pauli byproducts to the outputs.

An ``R`` measurement at angle ``phi`` projects onto (|0> + (-1)^s e^{i phi}|1>)/sqrt2
for outcome ``s`` and is lowered to ``RZ(-phi)``, ``H``, Z readout. The
effective angle is negated when the parity of the ``s_domain`` signals is odd;
a measurement's signal is its raw outcome XOR the parity of its ``t_domain``.

Corrections are derived, never transcribed: for every measured qubit we look
for a stabilizer of the Choi state (inputs maximally entangled with reference
qubits) that has no support on the references, anticommutes with the measured
observable and is trivial on earlier non-Pauli measurements. Its remaining
Pauli components become the adaptivity domains and output byproducts.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .pauli import PauliString
from .statevector import (
    DynamicCircuit,
    QuantumState,
    apply_gate,
    measure as sv_measure,
    probability_one,
)
from .tableau import (
    StabilizerTableau,
    gf2_solve,
    invert_word,
    simplify_word,
    to_graph_state,
)

PAULI_BASES = ("X", "Y", "Z")
_PAULI_WORD = {"X": "HSSH", "Y": "HSSHSS", "Z": "SS"}


@dataclass(frozen=True)
class Measurement:
    """Measurement of one qubit.

    ``basis`` is X, Y, Z or R. An R angle is ``offset + scale * params[parameter]``
    once bound; X and Y are the R measurements at 0 and pi/2.
    """

    basis: str
    offset: float = 0.0
    parameter: str | None = None
    scale: float = 1.0
    s_domain: frozenset = frozenset()
    t_domain: frozenset = frozenset()

    def __post_init__(self):
        if self.basis not in ("X", "Y", "Z", "R"):
            raise ValueError(f"unknown measurement basis {self.basis!r}")

    def is_pauli(self) -> bool:
        return self.basis in PAULI_BASES

    def angle(self, params=None) -> float:
        if self.basis == "X":
            return 0.0
        if self.basis == "Y":
            return math.pi / 2
        if self.parameter is None:
            return self.offset
        if params is None or self.parameter not in params:
            raise ValueError(f"measurement angle needs a value for {self.parameter!r}")
        return self.offset + self.scale * params[self.parameter]

    def angle_text(self) -> str:
        if self.parameter is None:
            return repr(self.offset)
        s = {1.0: "", -1.0: "-"}.get(self.scale, f"{self.scale!r}*")
        text = f"{s}{self.parameter}"
        if self.offset:
            text = f"{self.offset!r}+{text}"
        return text


@dataclass
class Pattern:
    qubits: list
    inputs: list
    outputs: list
    prefix: list
    measurements: dict
    order: list
    byproducts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def edges(self) -> list[tuple]:
        return [tuple(op[1:]) for op in self.prefix if op[0] == "CZ"]

    @property
    def roles(self) -> dict:
        out = {}
        for q in self.qubits:
            if q in self.inputs and q in self.outputs:
                out[q] = "input,output"
            elif q in self.inputs:
                out[q] = "input"
            elif q in self.outputs:
                out[q] = "output"
            else:
                out[q] = "body"
        return out

    def entangling_count(self) -> int:
        return sum(1 for op in self.prefix if len(op) == 3)

    def validate(self):
        qs = set(self.qubits)
        if len(qs) != len(self.qubits):
            raise ValueError("duplicate qubit labels")
        for q in list(self.inputs) + list(self.outputs):
            if q not in qs:
                raise ValueError(f"unknown qubit {q}")
        measured = set(self.measurements)
        if measured & set(self.outputs):
            raise ValueError("output qubits must stay unmeasured")
        if measured | set(self.outputs) != qs:
            raise ValueError("every non-output qubit needs a measurement")
        if sorted(self.order, key=str) != sorted(measured, key=str):
            raise ValueError("order must list each measured qubit once")
        seen_pairs = set()
        for op in self.prefix:
            if any(q not in qs for q in op[1:]):
                raise ValueError(f"prefix op {op} references an unknown qubit")
            if op[0] == "CZ":
                pair = frozenset(op[1:])
                if len(pair) != 2 or pair in seen_pairs:
                    raise ValueError(f"invalid or repeated edge {op[1:]}")
                seen_pairs.add(pair)
        done = set()
        for q in self.order:
            m = self.measurements[q]
            if not (m.s_domain | m.t_domain) <= done:
                raise ValueError(f"measurement of {q} depends on a later outcome (cyclic order)")
            done.add(q)
        for o, (xs, zs) in self.byproducts.items():
            if o not in self.outputs or not (set(xs) | set(zs)) <= measured:
                raise ValueError(f"invalid byproduct on {o}")
        return self

    def parameters(self) -> set:
        return {m.parameter for m in self.measurements.values() if m.parameter}

    def bind(self, **values) -> "Pattern":
        ms = {}
        for q, m in self.measurements.items():
            if m.parameter in values:
                m = replace(m, offset=m.angle(values), parameter=None, scale=1.0)
            ms[q] = m
        return replace(self, measurements=ms)

    def relabel(self, mapping: dict) -> "Pattern":
        f = lambda q: mapping.get(q, q)  # noqa: E731
        ms = {f(q): replace(m, s_domain=frozenset(map(f, m.s_domain)), t_domain=frozenset(map(f, m.t_domain)))
              for q, m in self.measurements.items()}
        by = {f(o): (frozenset(map(f, xs)), frozenset(map(f, zs))) for o, (xs, zs) in self.byproducts.items()}
        prefix = [(op[0],) + tuple(f(q) for q in op[1:]) for op in self.prefix]
        return Pattern([f(q) for q in self.qubits], [f(q) for q in self.inputs], [f(q) for q in self.outputs],
                       prefix, ms, [f(q) for q in self.order], by)


@dataclass(frozen=True)
class GadgetSpec:
    """Pauli gadget exp(-i theta/2 P) with P the tensor product of ``axis``."""

    n: int
    axis: str
    theta: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("gadget needs at least one body qubit")
        if not self.axis:
            raise ValueError("empty gadget axis")
        if len(self.axis) != self.n:
            raise ValueError(f"axis {self.axis!r} does not have {self.n} symbols")
        if any(c not in "XYZ" for c in self.axis.upper()):
            raise ValueError("gadget axis must be built from X, Y and Z")
        object.__setattr__(self, "axis", self.axis.upper())


# basis change C with C P C^dagger = Z, as a word applied left to right
_TO_Z = {"Z": "", "X": "H", "Y": "SSSH"}


def _word_ops(word: str, q) -> list:
    return [(g, q) for g in word]


def gadget_pattern(spec: GadgetSpec, parameter: str | None = None) -> Pattern:
    """Star-graph pattern: body qubits ``0..n-1`` (inputs and outputs), ancilla ``n``.

    The ancilla is measured at angle ``-theta``; with the R convention above
    this realizes exp(-i theta/2 P) rather than its inverse.
    """
    n = spec.n
    anc = n
    prefix = []
    for q, c in enumerate(spec.axis):
        prefix += _word_ops(_TO_Z[c], q)
    prefix += [("CZ", q, anc) for q in range(n)]
    prefix.append(("H", anc))
    for q, c in enumerate(spec.axis):
        prefix += _word_ops(invert_word(_TO_Z[c]), q)
    if parameter is None:
        m = Measurement("R", offset=-float(spec.theta))
    else:
        m = Measurement("R", parameter=parameter, scale=-1.0)
    body = list(range(n))
    p = Pattern(body + [anc], body, body, prefix, {anc: m}, [anc])
    return derive_corrections(p)


def identity_pattern(n: int) -> Pattern:
    q = list(range(n))
    return Pattern(q, q, list(q), [], {}, [])


def j_pattern(angle: float = 0.0) -> Pattern:
    """One-qubit teleportation step realizing H RZ(-angle)."""
    m = Measurement("X") if angle == 0 else Measurement("R", offset=float(angle))
    return derive_corrections(Pattern([0, 1], [0], [1], [("CZ", 0, 1)], {0: m}, [0]))


def rz_pattern(theta=0.0, parameter: str | None = None) -> Pattern:
    """RZ(theta) as two teleportation steps; the first carries the angle."""
    if parameter is None:
        m0 = Measurement("R", offset=-float(theta))
    else:
        m0 = Measurement("R", parameter=parameter, scale=-1.0)
    p = Pattern([0, 1, 2], [0], [2], [("CZ", 0, 1), ("CZ", 1, 2)], {0: m0, 1: Measurement("X")}, [0, 1])
    return derive_corrections(p)


def cx_pattern() -> Pattern:
    """CX with control 0 and target 1; the target moves 1 -> 2 -> 3."""
    prefix = [("CZ", 1, 2), ("CZ", 0, 2), ("CZ", 2, 3)]
    p = Pattern([0, 1, 2, 3], [0, 1], [0, 3], prefix, {1: Measurement("X"), 2: Measurement("X")}, [1, 2])
    return derive_corrections(p)


def embed(p: Pattern, wires: list, n_wires: int) -> Pattern:
    """Place ``p`` on ``wires`` of an ``n_wires`` register; other wires pass through."""
    if len(wires) != len(p.inputs) or len(p.inputs) != len(p.outputs):
        raise ValueError("embedding needs a square pattern and one wire per input")
    base = n_wires
    mapping = {}
    for w, q in zip(wires, p.inputs):
        mapping[q] = w
    for q in p.qubits:
        if q not in mapping:
            mapping[q] = base
            base += 1
    inner = p.relabel(mapping)
    outputs = list(range(n_wires))
    for w, o in zip(wires, inner.outputs):
        outputs[w] = o
    qubits = sorted(set(inner.qubits) | set(range(n_wires)))
    return derive_corrections(
        Pattern(qubits, list(range(n_wires)), outputs, inner.prefix, inner.measurements, inner.order))


def concatenate(p1: Pattern, p2: Pattern) -> Pattern:
    """Run ``p1`` then ``p2``, feeding each output of ``p1`` into the matching input of ``p2``."""
    if len(p1.outputs) != len(p2.inputs):
        raise ValueError(f"arity mismatch: {len(p1.outputs)} outputs vs {len(p2.inputs)} inputs")
    mapping = dict(zip(p2.inputs, p1.outputs))
    nxt = max((q for q in p1.qubits if isinstance(q, int)), default=-1) + 1
    for q in p2.qubits:
        if q not in mapping:
            mapping[q] = nxt
            nxt += 1
    b = p2.relabel(mapping)
    qubits = list(p1.qubits) + [q for q in b.qubits if q not in set(p1.qubits)]
    ms = {q: replace(m, s_domain=frozenset(), t_domain=frozenset())
          for q, m in list(p1.measurements.items()) + list(b.measurements.items())}
    merged = Pattern(qubits, list(p1.inputs), list(b.outputs), list(p1.prefix) + list(b.prefix), ms,
                     list(p1.order) + list(b.order))
    return derive_corrections(merged)


# ---------------------------------------------------------------------------
# stabilizer bookkeeping

def _choi_tableau(p: Pattern):
    """Choi state of the pattern's Clifford prefix: references then pattern qubits."""
    n_in = len(p.inputs)
    index = {q: n_in + i for i, q in enumerate(p.qubits)}
    t = StabilizerTableau(n_in + len(p.qubits))
    for r, q in enumerate(p.inputs):
        t.apply("H", r)
        t.apply("CX", r, index[q])
    for q in p.qubits:
        if q not in p.inputs:
            t.apply("H", index[q])
    for op in p.prefix:
        t.apply(op[0], *[index[q] for q in op[1:]])
    return t, index


def _find_stabilizer(t: StabilizerTableau, zero_cols, one_cols):
    """Find a stabilizer-group element (as x, z bits) meeting linear constraints.

    ``zero_cols``/``one_cols`` are lists of (x-or-z, column) pairs, plus
    symplectic constraints given as ``("anti", x, z)`` in ``one_cols``.
    """
    sx, sz, _ = t.stabilizer_rows()
    rows, rhs = [], []
    for kind, col in zero_cols:
        rows.append((sx if kind == "x" else sz)[:, col])
        rhs.append(0)
    for item in one_cols:
        if item[0] == "anti":
            _, px, pz = item
            rows.append(((sx @ pz) + (sz @ px)) % 2)
        else:
            kind, col = item
            rows.append((sx if kind == "x" else sz)[:, col])
        rhs.append(1)
    coeffs = gf2_solve(np.array(rows, dtype=np.uint8), np.array(rhs, dtype=np.uint8))
    if coeffs is None:
        return None
    return (coeffs @ sx) % 2, (coeffs @ sz) % 2


def _anticommutes(x, z, basis):
    px, pz = {"X": (1, 0), "Y": (1, 1), "Z": (0, 1)}[basis]
    return (x * pz + z * px) % 2 == 1


def derive_corrections(p: Pattern) -> Pattern:
    """Recompute adaptivity domains and byproducts; Pauli measurements go first."""
    pauli = [q for q in p.order if p.measurements[q].is_pauli()]
    other = [q for q in p.order if not p.measurements[q].is_pauli()]
    order = pauli + other
    t, index = _choi_tableau(p)
    n_ref = len(p.inputs)
    ref_cols = [(k, c) for c in range(n_ref) for k in ("x", "z")]
    s_dom = {q: set() for q in order}
    t_dom = {q: set() for q in order}
    xby = {o: set() for o in p.outputs}
    zby = {o: set() for o in p.outputs}

    def spread(source, x, z, later):
        for j in later:
            c = index[j]
            m = p.measurements[j]
            if m.is_pauli():
                if _anticommutes(x[c], z[c], m.basis):
                    t_dom[j] ^= {source}
            else:
                if x[c]:
                    s_dom[j] ^= {source}
                if z[c]:
                    t_dom[j] ^= {source}
        for o in p.outputs:
            c = index[o]
            if x[c]:
                xby[o] ^= {source}
            if z[c]:
                zby[o] ^= {source}

    for i, q in enumerate(pauli):
        c = index[q]
        basis = p.measurements[q].basis
        px = np.zeros(t.n, dtype=np.uint8)
        pz = np.zeros(t.n, dtype=np.uint8)
        px[c] = basis in "XY"
        pz[c] = basis in "ZY"
        found = _find_stabilizer(t, ref_cols, [("anti", px, pz)])
        if found is None:
            _, det = _measure_any(t, c, basis)
            if not det:
                raise ValueError(f"no correction exists for the measurement of qubit {q}")
            continue
        spread(q, found[0], found[1], pauli[i + 1:] + other)
        _measure_any(t, c, basis)
    for i, k in enumerate(other):
        c = index[k]
        zero = ref_cols + [("x", c)] + [(kind, index[j]) for j in other[:i] for kind in ("x", "z")]
        found = _find_stabilizer(t, zero, [("z", c)])
        if found is None:
            raise ValueError(f"no correction exists for the measurement of qubit {k}")
        spread(k, found[0], found[1], other[i + 1:])
    ms = {q: replace(p.measurements[q], s_domain=frozenset(s_dom[q]), t_domain=frozenset(t_dom[q]))
          for q in order}
    by = {o: (frozenset(xby[o]), frozenset(zby[o])) for o in p.outputs if xby[o] or zby[o]}
    return Pattern(list(p.qubits), list(p.inputs), list(p.outputs), list(p.prefix), ms, order, by)


def _measure_any(t: StabilizerTableau, col: int, basis: str):
    """Measure with outcome 0 when random; deterministic outcomes are kept."""
    return t.measure(col, basis, rng=_ZeroRng())


class _ZeroRng:
    def integers(self, *args, **kwargs):
        return 0


# ---------------------------------------------------------------------------
# dense simulation

def _signal_parity(signals: dict, domain) -> int:
    return sum(signals[q] for q in domain) % 2


def simulate_pattern(p: Pattern, input_state: QuantumState | None = None, forced=None, rng=None,
                     params=None, return_outcomes: bool = False):
    """Run the pattern on a dense state; returns the (normalized) output state.

    ``forced`` maps measured qubits to raw outcomes; others are drawn from
    ``rng``. Impossible forced outcomes raise ``ValueError``.
    """
    n_in = len(p.inputs)
    if input_state is None:
        input_state = QuantumState.plus(n_in) if n_in else QuantumState(np.ones(1), 0)
    if input_state.n != n_in:
        raise ValueError(f"pattern has {n_in} inputs, state has {input_state.n} qubits")
    labels = list(p.inputs) + [q for q in p.qubits if q not in p.inputs]
    state = input_state
    if len(labels) > n_in:
        state = state.tensor(QuantumState.plus(len(labels) - n_in)) if n_in else QuantumState.plus(len(labels))
    pos = {q: i for i, q in enumerate(labels)}
    for op in p.prefix:
        state = apply_gate(state, op[0], [pos[q] for q in op[1:]])
    forced = forced or {}
    signals = {}
    raw = {}
    for q in p.order:
        m = p.measurements[q]
        i = pos[q]
        if m.basis != "Z":
            phi = m.angle(params)
            if _signal_parity(signals, m.s_domain):
                phi = -phi
            state = apply_gate(state, "RZ", i, (-phi,))
            state = apply_gate(state, "H", i)
        outcome, state = sv_measure(state, i, rng, forced.get(q))
        raw[q] = outcome
        signals[q] = outcome ^ _signal_parity(signals, m.t_domain)
        state, labels = _drop_qubit(state, labels, q, outcome)
        pos = {l: k for k, l in enumerate(labels)}
    for o, (xs, zs) in p.byproducts.items():
        if _signal_parity(signals, zs):
            state = apply_gate(state, "Z", pos[o])
        if _signal_parity(signals, xs):
            state = apply_gate(state, "X", pos[o])
    perm = [pos[o] for o in p.outputs]
    amps = np.transpose(state.amplitudes.reshape((2,) * state.n), perm).reshape(-1) if state.n else state.amplitudes
    out = QuantumState(amps / np.linalg.norm(amps), len(p.outputs))
    return (out, raw) if return_outcomes else out


def _drop_qubit(state: QuantumState, labels: list, q, outcome: int):
    i = labels.index(q)
    psi = np.take(state.amplitudes.reshape((2,) * state.n), outcome, axis=i)
    new = [l for l in labels if l != q]
    return QuantumState(psi.reshape(-1), state.n - 1), new


def pattern_unitary(p: Pattern, forced=None, params=None) -> np.ndarray:
    """Linear map of one outcome branch (default all-zero), columns per input basis state."""
    n_in = len(p.inputs)
    forced = {q: 0 for q in p.order} if forced is None else forced
    cols = []
    norm = None
    for b in range(1 << n_in):
        e = np.zeros(1 << n_in, dtype=complex)
        e[b] = 1
        col = _simulate_unnormalized(p, QuantumState(e, n_in), forced, params)
        cols.append(col)
    mat = np.array(cols).T
    norm = np.linalg.norm(mat[:, 0])
    return mat / norm


def _simulate_unnormalized(p, state, forced, params):
    labels = list(p.inputs) + [q for q in p.qubits if q not in p.inputs]
    n_in = len(p.inputs)
    if len(labels) > n_in:
        state = state.tensor(QuantumState.plus(len(labels) - n_in))
    pos = {q: i for i, q in enumerate(labels)}
    for op in p.prefix:
        state = apply_gate(state, op[0], [pos[q] for q in op[1:]])
    signals = {}
    for q in p.order:
        m = p.measurements[q]
        i = pos[q]
        if m.basis != "Z":
            phi = m.angle(params)
            if _signal_parity(signals, m.s_domain):
                phi = -phi
            state = apply_gate(state, "RZ", i, (-phi,))
            state = apply_gate(state, "H", i)
        outcome = forced[q]
        signals[q] = outcome ^ _signal_parity(signals, m.t_domain)
        state, labels = _drop_qubit(state, labels, q, outcome)
        pos = {l: k for k, l in enumerate(labels)}
    for o, (xs, zs) in p.byproducts.items():
        if _signal_parity(signals, zs):
            state = apply_gate(state, "Z", pos[o])
        if _signal_parity(signals, xs):
            state = apply_gate(state, "X", pos[o])
    perm = [pos[o] for o in p.outputs]
    return np.transpose(state.amplitudes.reshape((2,) * state.n), perm).reshape(-1)


# ---------------------------------------------------------------------------
# reduction

def reduce(p: Pattern) -> tuple[Pattern, list]:
    """Eliminate every Pauli-measured qubit by stabilizer simulation.

    Pauli outcomes are forced to 0 (deterministic ones keep their value) and
    the resulting Clifford map onto the kept qubits is re-expressed as a
    prefix acting on |input> (x) |+...+>. The kept qubits are the outputs,
    whose first ``len(inputs)`` entries become the new inputs, and the
    non-Pauli measured qubits. Returns the reduced pattern and its prefix.
    """
    p = derive_corrections(p)
    removed = [q for q in p.order if p.measurements[q].is_pauli()]
    if not removed:
        return p, list(p.prefix)
    n_in = len(p.inputs)
    if n_in > len(p.outputs):
        raise ValueError("cannot reduce a pattern with more inputs than outputs")
    t, index = _choi_tableau(p)
    for q in removed:
        _measure_any(t, index[q], p.measurements[q].basis)
    ancillas = [q for q in p.order if q not in removed]
    kept = list(p.outputs) + ancillas
    choi = t.restrict(list(range(n_in)) + [index[q] for q in kept])
    new_inputs = list(p.outputs[:n_in])

    plus = choi.copy()
    for r in range(n_in):
        plus.measure(r, "X", forced=0)
    plus_k = plus.restrict(list(range(n_in, n_in + len(kept))))
    graph = to_graph_state(plus_k, order=list(range(len(kept))))
    ops = _graph_ops(graph, kept, new_inputs)
    ops = _fix_frame(choi, ops, kept, new_inputs)
    if ops is None:
        ops = _synthesize(choi, kept, new_inputs)
    reduced = Pattern(kept, new_inputs, list(p.outputs), ops,
                      {q: replace(p.measurements[q], s_domain=frozenset(), t_domain=frozenset()) for q in ancillas},
                      ancillas)
    return derive_corrections(reduced), ops


def _graph_ops(graph, kept, inputs):
    ops = []
    for i, j in graph.edges():
        ops.append(("CZ", kept[i], kept[j]))
    for i, word in enumerate(graph.local_cliffords):
        ops += _word_ops(word, kept[i])
    return ops


def _prefix_choi(ops, kept, inputs):
    n_in = len(inputs)
    idx = {q: n_in + i for i, q in enumerate(kept)}
    t = StabilizerTableau(n_in + len(kept))
    for r, q in enumerate(inputs):
        t.apply("H", r)
        t.apply("CX", r, idx[q])
    for q in kept:
        if q not in inputs:
            t.apply("H", idx[q])
    for op in ops:
        t.apply(op[0], *[idx[q] for q in op[1:]])
    return t


def _fix_frame(choi, ops, kept, inputs):
    """Append the Pauli frame that makes ``ops`` reproduce ``choi`` exactly, if any."""
    cand = _prefix_choi(ops, kept, inputs)
    n_in = len(inputs)
    gens = choi.generators()
    diffs = []
    for g in gens:
        s = cand.sign_of(g)
        if s is None:
            return None
        diffs.append(0 if s == 1 else 1)
    if not any(diffs):
        return ops
    # Pauli P on kept qubits flips the sign of g iff they anticommute
    a = []
    for g in gens:
        x, z = PauliString(g[1:]).symplectic()
        a.append(np.concatenate([z[n_in:], x[n_in:]]))
    sol = gf2_solve(np.array(a), np.array(diffs))
    if sol is None:
        return None
    k = len(kept)
    out = list(ops)
    for i, q in enumerate(kept):
        px, pz = sol[i], sol[k + i]
        if px or pz:
            out += _word_ops(_PAULI_WORD[{(1, 0): "X", (0, 1): "Z", (1, 1): "Y"}[(int(px), int(pz))]], q)
    return _compress(out)


def _compress(ops):
    """Merge runs of single-qubit gates per qubit and cancel trivial words."""
    out = []
    pending = {}
    order = []

    def flush(q):
        w = simplify_word(pending.pop(q, ""))
        out.extend((g, q) for g in w)

    for op in ops:
        if len(op) == 2 and op[0] in ("H", "S"):
            q = op[1]
            if q not in pending:
                order.append(q)
            pending[q] = pending.get(q, "") + op[0]
        else:
            for q in op[1:]:
                if q in pending:
                    flush(q)
            out.append(op)
    for q in list(pending):
        flush(q)
    return out


def _synthesize(choi: StabilizerTableau, kept, inputs):
    """Greedy Clifford synthesis: gates on kept qubits that turn the Choi state
    into Bell pairs (reference i, input slot i) times |+> on the rest; the
    prefix is their inverse."""
    t = choi.copy()
    n_in = len(inputs)
    k = len(kept)
    slot = {i: n_in + kept.index(q) for i, q in enumerate(inputs)}
    gates = []

    def g(name, *qs):
        t.apply(name, *qs)
        gates.append((name,) + qs)

    ref_cols = []
    for r in range(n_in):
        ref_cols += [r, t.n + r]
    fixed = set()
    for i in range(n_in):
        target = slot[i]
        for which in ("x", "z"):
            t.row_reduce(ref_cols + list(range(t.n)) + list(range(t.n, 2 * t.n)))
            sx, sz, _ = t.stabilizer_rows()
            row = [j for j in range(t.n) if (sx[j, i] if which == "x" else sz[j, i])
                   and not (sz[j, i] if which == "x" else sx[j, i])]
            j = row[0]
            supp = [c for c in range(n_in, t.n) if c not in fixed and (sx[j, c] or sz[j, c])]
            if which == "x":
                if target not in supp:
                    q = supp[0]
                    g("CX", q, target), g("CX", target, q), g("CX", q, target)
                    continue_again = True
                else:
                    continue_again = False
                if continue_again:
                    t.row_reduce(ref_cols + list(range(t.n)) + list(range(t.n, 2 * t.n)))
                    sx, sz, _ = t.stabilizer_rows()
                    j = [jj for jj in range(t.n) if sx[jj, i] and not sz[jj, i]][0]
                    supp = [c for c in range(n_in, t.n) if c not in fixed and (sx[j, c] or sz[j, c])]
                if sz[j, target] and sx[j, target]:
                    g("S", target)
                elif sz[j, target]:
                    g("H", target)
                for c in supp:
                    if c == target:
                        continue
                    sx, sz, _ = t.stabilizer_rows()
                    if sz[j, c] and sx[j, c]:
                        g("S", c)
                    elif sz[j, c]:
                        g("H", c)
                    g("CX", target, c)
            else:
                if sx[j, target]:
                    for name in "HSH":
                        g(name, target)
                for c in supp:
                    if c == target:
                        continue
                    sx, sz, _ = t.stabilizer_rows()
                    if sx[j, c] and sz[j, c]:
                        g("S", c)
                        g("H", c)
                    elif sx[j, c]:
                        g("H", c)
                    g("CX", c, target)
        fixed.add(target)
    rest = [c for c in range(n_in, t.n) if c not in fixed]
    if rest:
        sub = t.restrict(rest)
        gf = to_graph_state(sub)
        for idx, word in enumerate(gf.local_cliffords):
            for name in invert_word(word):
                g(name, rest[idx])
        for a, b in gf.edges():
            g("CZ", rest[a], rest[b])
    for i in range(n_in):
        c = slot[i]
        if t.sign_of("+" + _label(t.n, {i: "X", c: "X"})) == -1:
            g("Z", c)
        if t.sign_of("+" + _label(t.n, {i: "Z", c: "Z"})) == -1:
            g("X", c)
    for c in rest:
        if t.sign_of("+" + _label(t.n, {c: "X"})) == -1:
            g("Z", c)
    label_of = {n_in + i: q for i, q in enumerate(kept)}
    ops = []
    for op in reversed(gates):
        name = op[0]
        qs = [label_of[c] for c in op[1:]]
        if name == "S":
            ops += [("S", qs[0])] * 3
        elif name in ("X", "Z"):
            ops += _word_ops(_PAULI_WORD[name], qs[0])
        else:
            ops.append((name, *qs))
    return _compress(ops)


def _label(n, symbols: dict) -> str:
    return "".join(symbols.get(i, "I") for i in range(n))


# ---------------------------------------------------------------------------
# compilation

def _expand(signals_expr: dict, domain) -> frozenset:
    out = set()
    for q in domain:
        out ^= signals_expr[q]
    return frozenset(out)


def compile_to_circuit(p: Pattern, params=None) -> DynamicCircuit:
    """Dynamic circuit for a reduced pattern.

    Data qubits come first in output order, then the measured ancillas, each
    measured into its own cbit. Byproducts become conditionals on the parity
    of the relevant cbits.
    """
    if any(m.is_pauli() for m in p.measurements.values()):
        raise ValueError("pattern still has Pauli measurements; reduce it first")
    if list(p.outputs[: len(p.inputs)]) != list(p.inputs):
        raise ValueError("inputs must be the leading outputs of a reduced pattern")
    labels = list(p.outputs) + list(p.order)
    pos = {q: i for i, q in enumerate(labels)}
    c = DynamicCircuit(len(labels), len(p.order))
    for q in labels:
        if q not in p.inputs:
            c.h(pos[q])
    for op in p.prefix:
        c.gate(op[0], *[pos[q] for q in op[1:]])
    expr = {}
    for k, q in enumerate(p.order):
        m = p.measurements[q]
        phi = m.angle(params)
        flips = _expand(expr, m.s_domain)
        c.rz(-phi, pos[q])
        if flips:
            c.conditional(sorted(flips), "RZ", pos[q], params=(2 * phi,))
        c.h(pos[q])
        c.measure(pos[q], k)
        expr[q] = frozenset({k}) ^ _expand(expr, m.t_domain)
    for o in p.outputs:
        xs, zs = p.byproducts.get(o, (frozenset(), frozenset()))
        zc = _expand(expr, zs)
        xc = _expand(expr, xs)
        if zc:
            c.conditional(sorted(zc), "Z", pos[o])
        if xc:
            c.conditional(sorted(xc), "X", pos[o])
    return c


def compile_gadget(spec: GadgetSpec) -> DynamicCircuit:
    return compile_to_circuit(gadget_pattern(spec))


def gate_based_gadget(spec: GadgetSpec) -> DynamicCircuit:
    """Reference decomposition: basis change, CX ladder, RZ, ladder back."""
    n = spec.n
    c = DynamicCircuit(n, 0)
    for q, a in enumerate(spec.axis):
        for g in _TO_Z[a]:
            c.gate(g, q)
    for q in range(n - 1):
        c.cx(q, q + 1)
    c.rz(spec.theta, n - 1)
    for q in reversed(range(n - 1)):
        c.cx(q, q + 1)
    for q, a in enumerate(spec.axis):
        for g in invert_word(_TO_Z[a]):
            c.gate(g, q)
    return c


def gadget_unitary(spec: GadgetSpec) -> np.ndarray:
    from .pauli import pauli_matrix

    p = pauli_matrix(PauliString(spec.axis))
    return math.cos(spec.theta / 2) * np.eye(1 << spec.n) - 1j * math.sin(spec.theta / 2) * p


def zzz_chain_pattern(parameter: str = "theta") -> Pattern:
    """CX(1,2) CX(2,3) RZ_3 CX(2,3) CX(1,2) built by concatenating elementary patterns."""
    steps = [
        embed(cx_pattern(), [0, 1], 3),
        embed(cx_pattern(), [1, 2], 3),
        embed(rz_pattern(parameter=parameter), [2], 3),
        embed(cx_pattern(), [1, 2], 3),
        embed(cx_pattern(), [0, 1], 3),
    ]
    out = steps[0]
    for s in steps[1:]:
        out = concatenate(out, s)
    return out


# ---------------------------------------------------------------------------
# text format

def pattern_to_text(p: Pattern) -> str:
    lines = ["QUBITS"]
    for q in p.qubits:
        lines.append(f"{q} {p.roles[q]}")
    lines.append("EDGES")
    lines += [f"{a} {b}" for a, b in p.edges]
    if any(op[0] != "CZ" for op in p.prefix):
        lines.append("CLIFFORD")
        lines += [" ".join(map(str, op)) for op in p.prefix]
    lines.append("MEASURE")
    for q in p.order:
        m = p.measurements[q]
        parts = [str(q), m.basis]
        if m.basis == "R":
            parts.append(m.angle_text())
        if m.s_domain:
            parts.append("s=" + ",".join(map(str, sorted(m.s_domain))))
        if m.t_domain:
            parts.append("t=" + ",".join(map(str, sorted(m.t_domain))))
        lines.append(" ".join(parts))
    lines.append("BYPRODUCT")
    for o in p.outputs:
        if o in p.byproducts:
            xs, zs = p.byproducts[o]
            parts = [str(o)]
            if xs:
                parts.append("X=" + ",".join(map(str, sorted(xs))))
            if zs:
                parts.append("Z=" + ",".join(map(str, sorted(zs))))
            lines.append(" ".join(parts))
    lines.append("ORDER")
    lines.append(" ".join(map(str, p.order)))
    return "\n".join(lines) + "\n"


_SECTIONS = ("QUBITS", "EDGES", "CLIFFORD", "MEASURE", "BYPRODUCT", "ORDER")


def _parse_angle(text: str) -> dict:
    try:
        return {"offset": float(text)}
    except ValueError:
        pass
    m = re.fullmatch(r"(?:([-+0-9.eE]+)\+)?(-)?(?:([-+0-9.eE]+)\*)?([A-Za-z_]\w*)", text)
    if not m:
        raise ValueError(f"cannot parse angle {text!r}")
    offset, neg, scale, name = m.groups()
    s = float(scale) if scale else 1.0
    return {"offset": float(offset or 0.0), "parameter": name, "scale": -s if neg else s}


def _ints(text: str) -> frozenset:
    return frozenset(int(v) for v in text.split(",") if v)


def pattern_from_text(text: str, derive: bool = True) -> Pattern:
    """Parse the section format written by ``pattern_to_text``.

    Missing BYPRODUCT or domain entries are derived when ``derive`` is set.
    """
    sec = None
    qubits, inputs, outputs, edges, clifford = [], [], [], [], []
    ms, by, order = {}, {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.upper() in _SECTIONS:
            sec = line.upper()
            continue
        parts = line.split()
        try:
            if sec == "QUBITS":
                q = int(parts[0])
                roles = parts[1].split(",") if len(parts) > 1 else ["body"]
                qubits.append(q)
                if "input" in roles:
                    inputs.append(q)
                if "output" in roles:
                    outputs.append(q)
            elif sec == "EDGES":
                edges.append(("CZ", int(parts[0]), int(parts[1])))
            elif sec == "CLIFFORD":
                clifford.append((parts[0].upper(),) + tuple(int(v) for v in parts[1:]))
            elif sec == "MEASURE":
                q = int(parts[0])
                basis = parts[1].upper()
                kw = {}
                rest = parts[2:]
                if basis == "R":
                    kw.update(_parse_angle(rest[0]))
                    rest = rest[1:]
                for item in rest:
                    key, _, val = item.partition("=")
                    kw["s_domain" if key == "s" else "t_domain"] = _ints(val)
                ms[q] = Measurement(basis, **kw)
            elif sec == "BYPRODUCT":
                o = int(parts[0])
                xs = zs = frozenset()
                for item in parts[1:]:
                    key, _, val = item.partition("=")
                    if key.upper() == "X":
                        xs = _ints(val)
                    else:
                        zs = _ints(val)
                by[o] = (xs, zs)
            elif sec == "ORDER":
                order += [int(v) for v in parts]
            else:
                raise ValueError("content outside a section")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if not order:
        order = [q for q in qubits if q in ms]
    prefix = clifford if clifford else edges
    p = Pattern(qubits, inputs, outputs, prefix, ms, order, by)
    if derive and not by and not any(m.s_domain or m.t_domain for m in ms.values()):
        p = derive_corrections(p)
    return p
