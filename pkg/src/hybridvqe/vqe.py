"""Ansatz circuits, derivative-free optimizers and the VQE driver."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .estimation import EstimateResult, MitigationConfig, build_calibration_matrix, estimate_energy
from .mbqc import GadgetSpec, compile_gadget
from .models import GraphAnsatzSpec, Spectrum, exact_diagonalize
from .pauli import Hamiltonian, to_matrix
from .statevector import DynamicCircuit, NoiseModel, QuantumState, branches

# ---------------------------------------------------------------------------
# ansatz builders


def _check_length(theta, k: int):
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != k:
        raise ValueError(f"expected {k} parameters, got {theta.size}")
    return theta


def modification_layer(k: int) -> int:
    """Edge-class layer used by modification application ``k`` (0-based).

    L layers expand to 2L-1 applications: the first builds the graph and
    every later layer contributes two applications.
    """
    return (k + 1) // 2


def build_graph_modified_circuit(spec: GraphAnsatzSpec, theta) -> DynamicCircuit:
    """H layer, RY layer, 2L-1 rounds of RY(theta_e)-CZ per edge, RY layer, local Cliffords."""
    theta = _check_length(theta, spec.n_params)
    c = DynamicCircuit(spec.n, 0)
    for q in range(spec.n):
        c.h(q)
    for q in range(spec.n):
        c.ry(theta[spec.rotation_classes[0][q]], q)
    for k in range(2 * spec.layers - 1):
        classes = spec.edge_classes[modification_layer(k)]
        for (m, n), cls in zip(spec.edges, classes):
            c.ry(theta[cls], n)
            c.cz(m, n)
    for q in range(spec.n):
        c.ry(theta[spec.rotation_classes[1][q]], q)
    for q, word in enumerate(spec.local_cliffords):
        for g in word:
            c.gate(g, q)
    return c


def _append_gadget(c: DynamicCircuit, axis: str, angle: float, ancilla: int, cbit: int):
    g = compile_gadget(GadgetSpec(len(axis), axis, angle))
    c.compose(g, list(range(len(axis))) + [ancilla], cbit_offset=cbit)


@dataclass
class GadgetLayout:
    """Slot layout of a gadget stack.

    ``pre`` and ``between`` are per-qubit class indices of RY layers,
    ``gadget`` the class of each gadget angle, ``post`` a list of
    ``(gate, classes)`` closing layers (gate is RX, RY or RZ).
    """

    n: int
    axes: list
    pre: list
    between: list
    gadget: list
    post: list

    @property
    def layers(self) -> int:
        return len(self.axes)

    @property
    def n_params(self) -> int:
        used = set(self.pre) | set(self.gadget)
        for row in self.between:
            used |= set(row)
        for _, row in self.post:
            used |= set(row)
        return len(used)


def lih_layout(L: int, axis: str = "ZZZZ") -> GadgetLayout:
    """Free RY layer, then L gadgets with a free RY layer between them and a free RX layer last (5L+4)."""
    if L < 1:
        raise ValueError("L must be at least 1")
    n = len(axis)
    nxt = iter(range(10_000))
    pre = [next(nxt) for _ in range(n)]
    gadget, between = [], []
    for layer in range(L):
        gadget.append(next(nxt))
        if layer < L - 1:
            between.append([next(nxt) for _ in range(n)])
    post = [("RX", [next(nxt) for _ in range(n)])]
    return GadgetLayout(n, [axis] * L, pre, between, gadget, post)


def symmetric_layout(n: int, axis: str) -> GadgetLayout:
    """Shared RY on every qubit, one gadget, then shared RY and shared RZ: 4 parameters."""
    return GadgetLayout(n, [axis], [0] * n, [], [1], [("RY", [2] * n), ("RZ", [3] * n)])


def build_gadget_ansatz(layout: GadgetLayout, theta) -> DynamicCircuit:
    """Gadget stack on ``n`` data qubits plus one ancilla reset between gadgets."""
    theta = _check_length(theta, layout.n_params)
    n = layout.n
    for axis in layout.axes:
        if len(axis) != n:
            raise ValueError(f"gadget axis {axis!r} does not act on {n} qubits")
    c = DynamicCircuit(n + 1, layout.layers)
    for q in range(n):
        c.ry(theta[layout.pre[q]], q)
    for k, axis in enumerate(layout.axes):
        if k > 0:
            c.reset(n)
        _append_gadget(c, axis, theta[layout.gadget[k]], n, k)
        if k < layout.layers - 1:
            for q in range(n):
                c.ry(theta[layout.between[k][q]], q)
    for gate, row in layout.post:
        for q in range(n):
            c.gate(gate, q, params=(theta[row[q]],))
    return c


@dataclass
class Ansatz:
    """A parameterized circuit family with its data qubits."""

    kind: str
    spec: object
    name: str = ""

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    @property
    def n_data(self) -> int:
        return self.spec.n

    def circuit(self, theta) -> DynamicCircuit:
        if self.kind == "graph-modified":
            return build_graph_modified_circuit(self.spec, theta)
        if self.kind == "gadget-stack":
            return build_gadget_ansatz(self.spec, theta)
        raise ValueError(f"unknown ansatz kind {self.kind!r}")

    def slot_map(self) -> list:
        """Class index of every variational slot in circuit order."""
        s = self.spec
        if self.kind == "graph-modified":
            slots = list(s.rotation_classes[0])
            for k in range(2 * s.layers - 1):
                slots += list(s.edge_classes[modification_layer(k)])
            return slots + list(s.rotation_classes[1])
        slots = list(s.pre)
        for k in range(s.layers):
            slots.append(s.gadget[k])
            if k < s.layers - 1:
                slots += list(s.between[k])
        for _, row in s.post:
            slots += list(row)
        return slots


# ---------------------------------------------------------------------------
# exact output of a (dynamic) circuit


def output_density_matrix(circuit: DynamicCircuit, n_data: int) -> np.ndarray:
    """Branch-weighted state of the first ``n_data`` qubits (ancillas traced out)."""
    dim = 1 << n_data
    rho = np.zeros((dim, dim), dtype=complex)
    for p, _, state in branches(circuit, tail_readout=False):
        psi = state.amplitudes.reshape(dim, -1)
        rho += p * (psi @ psi.conj().T)
    return rho


def output_state(circuit: DynamicCircuit, n_data: int) -> np.ndarray:
    """Dominant eigenvector of the output; exact for deterministic circuits."""
    w, v = np.linalg.eigh(output_density_matrix(circuit, n_data))
    return v[:, -1]


def entanglement_of_formation(state) -> float:
    psi = np.asarray(state.amplitudes if isinstance(state, QuantumState) else state, dtype=complex).ravel()
    if psi.size != 4:
        raise ValueError("entanglement of formation needs a two-qubit state")
    psi = psi / np.linalg.norm(psi)
    yy = np.array([[0, 0, 0, -1], [0, 0, 1, 0], [0, 1, 0, 0], [-1, 0, 0, 0]])
    conc = min(1.0, abs(np.vdot(psi, yy @ psi.conj())))
    x = (1 + math.sqrt(max(0.0, 1 - conc * conc))) / 2
    if x >= 1.0:
        return 0.0
    return float(-x * math.log2(x) - (1 - x) * math.log2(1 - x))


# ---------------------------------------------------------------------------
# optimizers


@dataclass
class OptimizerConfig:
    method: str = "local"  # "local" or "direct"
    max_iters: int = 100
    initial: list | None = None
    bounds: list | None = None
    global_iters: int = 50
    rho_begin: float = 0.5
    rho_end: float = 1e-6
    seed: int | None = None

    def __post_init__(self):
        if self.method not in ("local", "direct"):
            raise ValueError(f"unknown optimizer {self.method!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.method == "direct" and not self.bounds:
            raise ValueError("the global optimizer needs bounds")


class _Budget:
    """Objective wrapper that records every call and enforces a budget."""

    def __init__(self, f, limit: int, trace: list):
        self.f = f
        self.limit = limit
        self.trace = trace
        self.calls = 0

    @property
    def exhausted(self) -> bool:
        return self.calls >= self.limit

    def __call__(self, x) -> float:
        x = np.array(x, dtype=float)
        val = float(self.f(x))
        if math.isnan(val):
            raise FloatingPointError(f"objective returned NaN at {x.tolist()}")
        self.calls += 1
        self.trace.append((x, val))
        return val


def optimize_local(f, x0, max_iters: int = 100, rho_begin: float = 0.5, rho_end: float = 1e-6,
                   trace: list | None = None):
    """Linear-model trust-region descent without derivatives.

    A simplex of d+1 points defines a linear model; each iteration spends one
    evaluation on either a model step of length rho or a geometry repair,
    and rho halves when a step fails on a well-shaped simplex.
    Returns ``(best_x, trace)`` with one ``(x, f)`` entry per call.
    """
    trace = [] if trace is None else trace
    fb = _Budget(f, max_iters, trace)
    x0 = np.array(x0, dtype=float).ravel()
    d = x0.size
    rho = rho_begin
    pts = [x0]
    vals = [fb(x0)]
    for i in range(d):
        if fb.exhausted:
            break
        e = np.zeros(d)
        e[i] = rho
        pts.append(x0 + e)
        vals.append(fb(x0 + e))
    cycle = 0
    while not fb.exhausted and len(pts) == d + 1 and rho > rho_end:
        b = int(np.argmin(vals))
        xb, fbest = pts[b], vals[b]
        others = [i for i in range(d + 1) if i != b]
        dist = [np.linalg.norm(pts[i] - xb) for i in others]
        diff = np.array([pts[i] - xb for i in others])
        dv = np.array([vals[i] - fbest for i in others])
        well_shaped = max(dist) <= 2.5 * rho and abs(np.linalg.det(diff / max(dist))) > 1e-3
        try:
            g = np.linalg.solve(diff, dv)
        except np.linalg.LinAlgError:
            g = None
        if g is not None and np.linalg.norm(g) > 0 and np.all(np.isfinite(g)):
            xn = xb - rho * g / np.linalg.norm(g)
            fn = fb(xn)
            if fn < fbest:
                # swap out the vertex that is worst after the move
                worst = max(others, key=lambda i: (vals[i], np.linalg.norm(pts[i] - xn)))
                pts[worst], vals[worst] = xn, fn
                continue
            far = others[int(np.argmax(dist))]
            if np.linalg.norm(xn - xb) < dist[others.index(far)] or not well_shaped:
                pts[far], vals[far] = xn, fn
            if well_shaped:
                rho *= 0.5
            continue
        if not well_shaped:
            far = others[int(np.argmax(dist))]
            e = np.zeros(d)
            e[cycle % d] = rho
            cycle += 1
            xn = xb + e
            pts[far], vals[far] = xn, fb(xn)
        else:
            rho *= 0.5
    if not trace:
        raise ValueError("no objective evaluations were made")
    best = min(trace, key=lambda t: t[1])
    return best[0], trace


def _hull_lower_right(points):
    """Indices of the lower-right convex hull of (size, value) points."""
    pts = sorted(points, key=lambda t: (t[0], t[1]))
    hull = []
    for p in pts:
        while len(hull) >= 2:
            (x1, y1, _), (x2, y2, _) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    # keep the part from the minimum value onwards
    k = int(np.argmin([h[1] for h in hull]))
    return hull[k:]


def optimize_direct(f, bounds, global_iters: int = 50, local_iters: int = 50, eps: float = 1e-4,
                    trace: list | None = None, x0=None):
    """Dividing rectangles over ``bounds`` for ``global_iters`` evaluations, then local refinement.

    ``x0``, when given, is evaluated first (it counts against the global
    budget) and competes with the rectangle centres for the local start.
    """
    lo = np.array([b[0] for b in bounds], dtype=float)
    hi = np.array([b[1] for b in bounds], dtype=float)
    if lo.size == 0 or np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)) or np.any(hi <= lo):
        raise ValueError("bounds must be finite with lower < upper")
    trace = [] if trace is None else trace
    fb = _Budget(f, max(1, global_iters), trace)
    d = lo.size

    def point(u):
        return lo + u * (hi - lo)

    # each rectangle: [center in unit cube, side levels (side = 3^-level), value]
    if x0 is not None:
        fb(np.clip(np.asarray(x0, dtype=float), lo, hi))
    rects = [[np.full(d, 0.5), np.zeros(d, dtype=int), fb(point(np.full(d, 0.5)))]]
    while not fb.exhausted:
        sizes = {}
        for i, (c, lev, v) in enumerate(rects):
            size = 0.5 * float(np.linalg.norm(3.0 ** -lev))
            key = round(size, 12)
            if key not in sizes or v < rects[sizes[key]][2]:
                sizes[key] = i
        cand = [(s, rects[i][2], i) for s, i in sizes.items()]
        hull = _hull_lower_right(cand)
        fmin = min(r[2] for r in rects)
        chosen = []
        for j, (s, v, i) in enumerate(hull):
            if j + 1 < len(hull):
                slope = (hull[j + 1][1] - v) / (hull[j + 1][0] - s)
                if v - slope * s > fmin - eps * abs(fmin) and j > 0:
                    continue
            chosen.append(i)
        for i in chosen:
            if fb.exhausted:
                break
            c, lev, v = rects[i]
            longest = np.flatnonzero(lev == lev.min())
            delta = 3.0 ** -(lev.min() + 1)
            samples = []
            for k in longest:
                vals = []
                for sgn in (1, -1):
                    if fb.exhausted:
                        break
                    u = c.copy()
                    u[k] += sgn * delta
                    vals.append((u, fb(point(u))))
                samples.append((k, vals))
            samples.sort(key=lambda kv: min((v for _, v in kv[1]), default=math.inf))
            new_lev = lev.copy()
            for k, vals in samples:
                new_lev[k] += 1
                for u, fv in vals:
                    rects.append([u, new_lev.copy(), fv])
            rects[i][1] = new_lev
    best = min(trace, key=lambda t: t[1])
    if local_iters > 0:
        span = float(np.min(hi - lo))
        optimize_local(f, best[0], local_iters, rho_begin=span / 18, trace=trace)
    best = min(trace, key=lambda t: t[1])
    return best[0], trace


# ---------------------------------------------------------------------------
# driver


@dataclass
class VQERunRecord:
    thetas: list
    energies: list
    sigmas: list
    e_opt: float
    theta_opt: list
    fidelity: float
    rel_err: float
    e0: float
    e1: float
    e2: float
    gap: float
    observables: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def iterations(self) -> int:
        return len(self.energies)

    def best_so_far(self) -> list:
        return list(np.minimum.accumulate(self.energies))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "VQERunRecord":
        return cls(**json.loads(text))

    def csv_row(self, param) -> dict:
        return {"param": param, "E_vqe": self.e_opt, "sigma": self.sigmas[self.energies.index(self.e_opt)],
                "E0": self.e0, "E1": self.e1, "E2": self.e2, "rel_err": self.rel_err,
                "fidelity": self.fidelity, "iters": self.iterations, "seed": self.seed}


CSV_COLUMNS = ["param", "E_vqe", "sigma", "E0", "E1", "E2", "rel_err", "fidelity", "iters", "seed"]


def records_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def run_vqe(h: Hamiltonian, ansatz: Ansatz, optimizer: OptimizerConfig, shots: int | None = None,
            noise: NoiseModel | None = None, mitigation: MitigationConfig | None = None, seed: int | None = None,
            observables: dict | None = None, spectrum: Spectrum | None = None,
            gap: float | None = None) -> VQERunRecord:
    """Minimize <h> over the ansatz.

    ``shots=None`` uses the exact branch-averaged expectation as objective;
    otherwise every call estimates the energy from sampled counts.
    ``gap`` overrides the spectral gap used for the relative error.
    """
    if h.n != ansatz.n_data:
        raise ValueError("Hamiltonian and ansatz act on different qubit counts")
    rng = np.random.default_rng(seed)
    spectrum = spectrum or exact_diagonalize(h)
    hmat = to_matrix(h)
    sigmas: list = []
    calibration = None
    if shots is not None and mitigation is not None and mitigation.readout:
        calibration = build_calibration_matrix(h.n, noise, mitigation.calibration_shots, rng)

    def objective(theta):
        circ = ansatz.circuit(theta)
        if shots is None:
            rho = output_density_matrix(circ, ansatz.n_data)
            sigmas.append(0.0)
            return float(np.real(np.trace(rho @ hmat)))
        est: EstimateResult = estimate_energy(h, circ, shots, noise, mitigation, rng, calibration=calibration)
        sigmas.append(est.sigma)
        return est.mean

    x0 = optimizer.initial if optimizer.initial is not None else np.zeros(ansatz.n_params)
    x0 = _check_length(x0, ansatz.n_params)
    trace: list = []
    if optimizer.method == "local":
        best, trace = optimize_local(objective, x0, optimizer.max_iters, optimizer.rho_begin,
                                     optimizer.rho_end, trace)
    else:
        best, trace = optimize_direct(objective, optimizer.bounds, optimizer.global_iters,
                                      optimizer.max_iters, trace=trace, x0=optimizer.initial)
    energies = [float(v) for _, v in trace]
    k = int(np.argmin(energies))
    rho = output_density_matrix(ansatz.circuit(trace[k][0]), ansatz.n_data)
    g = spectrum.ground_state
    fid = float(min(1.0, max(0.0, np.real(np.vdot(g, rho @ g)))))
    obs = {}
    for name, op in (observables or {}).items():
        obs[name] = float(np.real(np.trace(rho @ to_matrix(op))))
    e_g = spectrum.gap if gap is None else gap
    config = {"ansatz": ansatz.kind, "name": ansatz.name, "n_params": ansatz.n_params,
              "method": optimizer.method, "max_iters": optimizer.max_iters,
              "global_iters": optimizer.global_iters, "shots": shots,
              "noise": None if noise is None else asdict(noise),
              "mitigation": None if mitigation is None else asdict(mitigation)}
    return VQERunRecord(
        thetas=[t.tolist() for t, _ in trace], energies=energies, sigmas=[float(s) for s in sigmas],
        e_opt=energies[k], theta_opt=trace[k][0].tolist(), fidelity=fid,
        rel_err=abs(energies[k] - spectrum.e0) / e_g, e0=spectrum.e0, e1=spectrum.e1, e2=spectrum.e2,
        gap=float(e_g), observables=obs, config=json.loads(json.dumps(config, default=str)), seed=seed)
