import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from hybridvqe import cli
from hybridvqe.models import (
    SU3Spec,
    exact_diagonalize,
    lih_hamiltonian,
    pc_graph_ansatz,
    planar_code_hamiltonian,
    PlanarCodeSpec,
    su3_hamiltonian,
    z2_hamiltonian,
)
from hybridvqe.pauli import to_matrix
from hybridvqe.statevector import QuantumState, apply_gate
from hybridvqe.vqe import (
    Ansatz,
    OptimizerConfig,
    VQERunRecord,
    build_gadget_ansatz,
    build_graph_modified_circuit,
    entanglement_of_formation,
    lih_layout,
    optimize_direct,
    optimize_local,
    output_density_matrix,
    output_state,
    records_to_csv,
    run_vqe,
    symmetric_layout,
)

# ---------------------------------------------------------------------------
# entanglement of formation


def test_eof_product_and_bell():
    assert entanglement_of_formation(np.kron([1, 0], [0, 1])) == 0.0
    assert entanglement_of_formation(np.array([1, 0, 0, 1]) / math.sqrt(2)) == pytest.approx(1.0)


def _modified_pair(theta):
    psi = apply_gate(QuantumState.plus(2), "RY", [1], (theta,))
    return apply_gate(psi, "CZ", [0, 1])


def test_eof_of_modified_cz_sweep():
    thetas = np.linspace(0, 2 * math.pi, 41)
    eof = np.array([entanglement_of_formation(_modified_pair(t)) for t in thetas])
    assert eof[0] == pytest.approx(1.0) and eof[-1] == pytest.approx(1.0)
    assert entanglement_of_formation(_modified_pair(math.pi / 2)) == pytest.approx(0.0, abs=1e-12)
    assert np.all((eof >= -1e-12) & (eof <= 1 + 1e-12))
    # period pi in theta
    np.testing.assert_allclose(eof[:21], eof[20:], atol=1e-10)


def test_eof_rejects_wrong_size():
    with pytest.raises(ValueError):
        entanglement_of_formation(np.ones(8) / math.sqrt(8))


# ---------------------------------------------------------------------------
# ansatz builders


@pytest.mark.parametrize("M,N", [(1, 1), (2, 1)])
def test_graph_ansatz_at_zero_is_code_ground_state(M, N):
    spec = pc_graph_ansatz(M, N, 1)
    psi = output_state(build_graph_modified_circuit(spec, np.zeros(spec.n_params)), spec.n)
    gs = exact_diagonalize(planar_code_hamiltonian(PlanarCodeSpec(M, N, 0.0))).ground_state
    assert abs(np.vdot(gs, psi)) ** 2 == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("L", [1, 2, 3])
def test_graph_ansatz_cz_count(L):
    spec = pc_graph_ansatz(2, 1, L)
    circ = build_graph_modified_circuit(spec, np.zeros(spec.n_params))
    assert circ.count(("CZ",)) == len(spec.edges) * (2 * L - 1)


def _rotation_angles(circ):
    return [ins.params[0] for ins in circ.instructions if ins.name in ("RX", "RY", "RZ")]


@pytest.mark.parametrize("kind", ["graph", "lih"])
def test_parameter_sharing_diff(kind):
    if kind == "graph":
        ansatz = Ansatz("graph-modified", pc_graph_ansatz(2, 1, 2))
    else:
        ansatz = Ansatz("gadget-stack", lih_layout(2))
    slots = ansatz.slot_map()
    base = np.linspace(0.1, 0.9, ansatz.n_params)
    ref = _rotation_angles(ansatz.circuit(base))
    for cls in range(ansatz.n_params):
        bumped = base.copy()
        bumped[cls] += 0.5
        got = _rotation_angles(ansatz.circuit(bumped))
        changed = [i for i, (a, b) in enumerate(zip(ref, got)) if a != b]
        assert changed == [i for i, s in enumerate(slots) if s == cls]


def test_symmetric_layouts():
    z2 = symmetric_layout(4, "XXXX")
    su3 = symmetric_layout(3, "ZZZ")
    assert z2.n_params == 4 and su3.n_params == 4
    assert len(Ansatz("gadget-stack", z2).slot_map()) == 3 * 4 + 1
    assert len(Ansatz("gadget-stack", su3).slot_map()) == 3 * 3 + 1


@pytest.mark.parametrize("L", [1, 2, 3])
def test_lih_layout_size(L):
    layout = lih_layout(L)
    assert layout.n_params == 5 * L + 4
    circ = build_gadget_ansatz(layout, np.zeros(layout.n_params))
    assert circ.n_qubits == 5
    assert circ.count(("CZ",)) == 4 * L


def test_gadget_ansatz_errors():
    with pytest.raises(ValueError):
        build_gadget_ansatz(lih_layout(1), np.zeros(3))
    with pytest.raises(ValueError):
        lih_layout(0)
    bad = lih_layout(1)
    bad.axes = ["ZZZ"]
    with pytest.raises(ValueError):
        build_gadget_ansatz(bad, np.zeros(bad.n_params))


def test_gadget_ansatz_matches_dense_oracle():
    layout = symmetric_layout(4, "XXXX")
    theta = np.array([0.3, 1.1, -0.4, 0.8])
    rho = output_density_matrix(build_gadget_ansatz(layout, theta), 4)
    psi = oracles.kron(*[oracles.ry(0.3)] * 4)[:, 0]
    psi = oracles.pauli_rotation("XXXX", 1.1) @ psi
    psi = oracles.kron(*[oracles.rz(0.8) @ oracles.ry(-0.4)] * 4) @ psi
    np.testing.assert_allclose(rho, np.outer(psi, psi.conj()), atol=1e-10)


# ---------------------------------------------------------------------------
# optimizers


def test_local_quadratic():
    x, trace = optimize_local(lambda v: (v[0] - 0.3) ** 2, [0.0], 50)
    assert abs(x[0] - 0.3) < 1e-3
    assert len(trace) <= 50


def test_local_noisy_quadratic():
    hits = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        x, _ = optimize_local(lambda v: (v[0] - 0.3) ** 2 + rng.normal(0, 1e-3), [0.0], 50)
        hits += abs(x[0] - 0.3) < 0.05
    assert hits >= 45


def test_local_multidimensional():
    target = np.array([0.5, -1.0, 2.0])
    x, _ = optimize_local(lambda v: float(np.sum((v - target) ** 2)), np.zeros(3), 200)
    np.testing.assert_allclose(x, target, atol=1e-3)


def test_direct_quadratic():
    x, _ = optimize_direct(lambda v: (v[0] - 0.3) ** 2, [(0.0, 1.0)], 50, 50)
    assert abs(x[0] - 0.3) < 1e-3


def test_direct_rastrigin():
    f = lambda v: 10 + v[0] ** 2 - 10 * math.cos(2 * math.pi * v[0])
    x, trace = optimize_direct(f, [(-2.0, 2.0)], 50, 50)
    assert f(x) < 1e-2
    assert len(trace) <= 100


def test_direct_bad_bounds():
    with pytest.raises(ValueError):
        optimize_direct(lambda v: 0.0, [(1.0, 0.0)])
    with pytest.raises(ValueError):
        optimize_direct(lambda v: 0.0, [(0.0, math.inf)])


def test_nan_objective_aborts():
    with pytest.raises(FloatingPointError):
        optimize_local(lambda v: math.nan, [0.0], 10)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=3))
def test_local_best_so_far_is_monotone(x0):
    _, trace = optimize_local(lambda v: float(np.sum(np.sin(3 * v) + v ** 2)), x0, 40)
    vals = [v for _, v in trace]
    assert np.all(np.diff(np.minimum.accumulate(vals)) <= 0)


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig("newton")
    with pytest.raises(ValueError):
        OptimizerConfig("direct")
    with pytest.raises(ValueError):
        OptimizerConfig("local", 0)


# ---------------------------------------------------------------------------
# driver


def test_z2_vqe_converges():
    prob = cli.build_problem("z2", 2.0)
    rec = run_vqe(prob.h, prob.ansatz, OptimizerConfig("local", 100, prob.initial), seed=1)
    assert rec.e_opt == pytest.approx(-math.sqrt(8), rel=1e-2)
    assert all(e >= rec.e0 - 1e-9 for e in rec.energies)
    assert rec.iterations <= 100


def test_su3_vqe_number_observable():
    prob = cli.build_problem("su3", -1.0)
    rec = run_vqe(prob.h, prob.ansatz, OptimizerConfig("local", 100, prob.initial), seed=1,
                  observables=prob.observables)
    assert rec.observables["N"] == pytest.approx(5.822, abs=0.2)
    assert all(e >= rec.e0 - 1e-9 for e in rec.energies)


def test_pc_vqe_small_field():
    prob = cli.build_problem("pc", 0.1)
    rec = run_vqe(prob.h, prob.ansatz, OptimizerConfig("direct", 50, prob.initial, prob.bounds, 50), seed=1)
    assert rec.rel_err <= 0.17
    assert rec.iterations <= 100


def test_lih_shot_mode_trace():
    prob = cli.build_problem("lih", None, {"layers": 1})
    rec = run_vqe(prob.h, prob.ansatz, OptimizerConfig("local", 99, prob.initial), shots=10_000, seed=3)
    assert rec.iterations == 99
    best = rec.best_so_far()
    assert np.all(np.diff(best) <= 0)
    assert all(s > 0 for s in rec.sigmas)
    assert 0.0 <= rec.fidelity <= 1.0
    assert rec.rel_err == pytest.approx(abs(rec.e_opt - rec.e0) / rec.gap)


def test_run_is_deterministic_under_seed():
    prob = cli.build_problem("z2", 1.0)
    runs = [run_vqe(prob.h, prob.ansatz, OptimizerConfig("local", 20, prob.initial), shots=500, seed=9)
            for _ in range(2)]
    assert runs[0].energies == runs[1].energies
    assert runs[0].thetas == runs[1].thetas


def test_gap_override():
    prob = cli.build_problem("z2", 1.0)
    rec = run_vqe(prob.h, prob.ansatz, OptimizerConfig("local", 5, prob.initial), gap=2.0)
    assert rec.gap == 2.0
    assert rec.rel_err == pytest.approx(abs(rec.e_opt - rec.e0) / 2.0)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        run_vqe(su3_hamiltonian(SU3Spec(0.1)), Ansatz("gadget-stack", symmetric_layout(4, "XXXX")),
                OptimizerConfig())


def test_record_round_trips(tmp_path):
    prob = cli.build_problem("z2", 1.0)
    rec = run_vqe(prob.h, prob.ansatz, OptimizerConfig("local", 8, prob.initial), seed=2)
    back = VQERunRecord.from_json(rec.to_json())
    assert back == rec
    text = records_to_csv([rec.csv_row(1.0)])
    header, row = text.strip().split("\n")
    assert header == "param,E_vqe,sigma,E0,E1,E2,rel_err,fidelity,iters,seed"
    fields = dict(zip(header.split(","), row.split(",")))
    assert float(fields["E_vqe"]) == rec.e_opt
    assert abs(float(fields["E_vqe"]) - float(fields["E0"])) / rec.gap == pytest.approx(float(fields["rel_err"]))


def test_exact_mode_matches_dense_energy():
    h = z2_hamiltonian(1.3)
    ansatz = Ansatz("gadget-stack", symmetric_layout(4, "XXXX"))
    theta = [0.2, 0.7, 1.9, -0.3]
    rec = run_vqe(h, ansatz, OptimizerConfig("local", 1, theta))
    rho = output_density_matrix(ansatz.circuit(theta), 4)
    assert rec.energies[0] == pytest.approx(float(np.real(np.trace(rho @ to_matrix(h)))))


def test_lih_hamiltonian_size_matches_layout():
    assert lih_hamiltonian().n == lih_layout(1).n
