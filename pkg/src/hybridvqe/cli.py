"""Command-line front end: ``hybridvqe model|pattern|vqe|sweep|selftest``."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import mbqc, models, vqe
from .estimation import MitigationConfig
from .statevector import NoiseModel, branches

SEED_ENV = "HYBRIDVQE_SEED"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2, 3

GAP_RULES = ("E1-E0", "E2-E1")
MODEL_PARAMS = {"z2": "lam", "su3": "m", "pc": "xi", "lih": None}
MODEL_DEFAULTS = {"z2": 1.0, "su3": -1.0, "pc": 0.0, "lih": None}


class ConfigError(ValueError):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}")


# ---------------------------------------------------------------------------
# problems


@dataclass
class Problem:
    h: object
    ansatz: vqe.Ansatz
    initial: list
    method: str = "local"
    bounds: list | None = None
    observables: dict = field(default_factory=dict)


Z2_INITIAL = [3.07, 5.56, 1.11, 4.17]


def build_hamiltonian(name: str, value=None, options=None):
    options = options or {}
    if name == "z2":
        return models.z2_hamiltonian(float(value if value is not None else options.get("lam", 1.0)))
    if name == "su3":
        m = value if value is not None else options.get("m", -1.0)
        return models.su3_hamiltonian(models.SU3Spec(float(m), float(options.get("x", 0.8))))
    if name == "pc":
        xi = value if value is not None else options.get("xi", 0.0)
        return models.planar_code_hamiltonian(
            models.PlanarCodeSpec(int(options.get("M", 2)), int(options.get("N", 1)), float(xi)))
    if name == "lih":
        return models.lih_hamiltonian()
    raise ConfigError(f"unknown model {name!r} (choose from {', '.join(MODEL_PARAMS)})")


def build_problem(name: str, value=None, options=None) -> Problem:
    """Hamiltonian, ansatz and default optimizer start for one model point."""
    options = options or {}
    h = build_hamiltonian(name, value, options)
    layers = int(options.get("layers", 1))
    if name == "z2":
        layout = vqe.symmetric_layout(4, options.get("axis", "XXXX"))
        obs = {"plaquette": models.z2_plaquette_operator(), "field": models.z2_field_operator()}
        return Problem(h, vqe.Ansatz("gadget-stack", layout, "z2"), list(Z2_INITIAL), observables=obs)
    if name == "su3":
        layout = vqe.symmetric_layout(3, options.get("axis", "ZZZ"))
        init = [math.pi, math.pi / 2, math.pi, math.pi / 2]
        obs = {"N": models.su3_number_operator(), "N_prime": models.su3_pair_number_operator()}
        return Problem(h, vqe.Ansatz("gadget-stack", layout, "su3"), init, observables=obs)
    if name == "lih":
        layout = vqe.lih_layout(layers, options.get("axis", "ZZZZ"))
        return Problem(h, vqe.Ansatz("gadget-stack", layout, "lih"), [0.1] * layout.n_params)
    spec = models.pc_graph_ansatz(int(options.get("M", 2)), int(options.get("N", 1)), layers)
    bounds = [(-math.pi / 2, 1.5 * math.pi)] * spec.n_params
    return Problem(h, vqe.Ansatz("graph-modified", spec, "pc"), [0.0] * spec.n_params, "direct", bounds)


# ---------------------------------------------------------------------------
# model


def cmd_model(args) -> int:
    options = {"M": args.m, "N": args.n, "x": args.x}
    value = {"z2": args.lam, "su3": args.mass, "pc": args.xi, "lih": None}.get(args.name)
    h = build_hamiltonian(args.name, value, options)
    spec = models.exact_diagonalize(h)
    out = {"model": args.name, "n_qubits": h.n, "n_terms": len(h.terms),
           "terms": [[t.coeff, t.string.ops] for t in h.terms], "constant": h.constant}
    out.update(spec.summary())
    out["observables"] = models.model_observables(args.name, spec.ground_state)
    print(json.dumps(out, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# pattern


def _load_pattern(path: str) -> mbqc.Pattern:
    p = Path(path)
    if not p.exists():
        builtin = resources.files("hybridvqe") / "data" / (p.name if p.suffix else p.name + ".pat")
        if not builtin.is_file():
            raise ConfigError(f"no such pattern file: {path}")
        return mbqc.pattern_from_text(builtin.read_text())
    return mbqc.pattern_from_text(p.read_text())


def circuit_fidelity(circuit, target: np.ndarray, n_data: int, seed: int = 7, trials: int = 2) -> float:
    """Worst fidelity of the circuit output with ``target @ psi`` over random inputs ``psi``.

    The data qubits are the leading qubits of ``circuit``; every other qubit
    starts in |0> and is traced out branch by branch.
    """
    from .statevector import QuantumState

    rng = np.random.default_rng(seed)
    n = circuit.n_qubits
    worst = 1.0
    for _ in range(trials):
        psi = QuantumState.random(n_data, rng).amplitudes
        full = np.kron(psi, np.eye(1 << (n - n_data))[0])
        want = target @ psi
        fid = 0.0
        for p, _, state in branches(circuit, QuantumState(full, n), tail_readout=False):
            out = state.amplitudes.reshape(1 << n_data, -1)
            fid += p * float(np.sum(np.abs(want.conj() @ out) ** 2))
        worst = min(worst, fid)
    return worst


def _same_up_to_phase(a, b) -> bool:
    return a.shape == b.shape and abs(abs(np.trace(a.conj().T @ b)) / a.shape[0] - 1) < 1e-9


def _verify_pattern(original: mbqc.Pattern, reduced: mbqc.Pattern, reference=None, grid: int = 16) -> bool:
    params = sorted(original.parameters())
    for k in range(grid):
        theta = 2 * math.pi * k / grid
        vals = {name: theta for name in params}
        ref = reference(theta) if reference else mbqc.pattern_unitary(original, params=vals)
        if not _same_up_to_phase(ref, mbqc.pattern_unitary(reduced, params=vals)):
            return False
        circ = mbqc.compile_to_circuit(reduced, vals)
        if circuit_fidelity(circ, ref, len(reduced.outputs)) < 1 - 1e-9:
            return False
    return True


def cmd_pattern(args) -> int:
    if args.action == "gadget":
        if args.n is None or args.axis is None:
            raise ConfigError("pattern gadget needs --n and --axis")
        spec = mbqc.GadgetSpec(args.n, args.axis, args.theta)
        pattern = mbqc.gadget_pattern(spec, parameter="theta")
        reference = lambda t: mbqc.gadget_unitary(mbqc.GadgetSpec(args.n, args.axis, t))
    else:
        if not args.file:
            raise ConfigError("pattern reduce needs a pattern file")
        pattern = _load_pattern(args.file)
        reference = None
    reduced, prefix = mbqc.reduce(pattern)
    print(f"# {len(pattern.qubits)} qubits -> {len(reduced.qubits)} qubits")
    print(mbqc.pattern_to_text(reduced), end="")
    values = {name: args.theta for name in reduced.parameters()}
    print("# circuit")
    print(mbqc.compile_to_circuit(reduced, values))
    if args.verify:
        if len(reduced.qubits) > 10:
            raise ConfigError("dense verification is limited to 10 qubits")
        ok = _verify_pattern(pattern, reduced, reference)
        print("verify:", "PASS" if ok else "FAIL")
        return EXIT_OK if ok else EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------------------
# vqe / sweep


def load_config(path: str | None, overrides: dict) -> dict:
    cfg: dict = {}
    if path:
        try:
            cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    if "model" not in cfg:
        raise ConfigError("config needs a model")
    if cfg["model"] not in MODEL_PARAMS:
        raise ConfigError(f"unknown model {cfg['model']!r}")
    if cfg.get("gap", "E1-E0") not in GAP_RULES:
        raise ConfigError(f"unknown gap rule {cfg['gap']!r} (choose from {', '.join(GAP_RULES)})")
    cfg.setdefault("seed", default_seed())
    return cfg


def _noise(cfg) -> NoiseModel | None:
    spec = cfg.get("noise")
    if not spec:
        return None
    flips = spec.get("readout", [0.0, 0.0])
    return NoiseModel.uniform_readout(32, float(flips[0]), float(flips[1]), float(spec.get("depolarizing", 0.0)))


def _mitigation(cfg) -> MitigationConfig | None:
    spec = cfg.get("mitigation")
    if not spec:
        return None
    return MitigationConfig(**spec)


def run_point(cfg: dict, value, seed: int) -> dict:
    """One VQE at one grid point; returns the record as a dict."""
    name = cfg["model"]
    options = dict(cfg.get("options", {}))
    prob = build_problem(name, value, options)
    opt = dict(cfg.get("optimizer", {}))
    method = opt.get("method", prob.method)
    initial = opt.get("initial", prob.initial)
    bounds = opt.get("bounds", prob.bounds)
    if method == "direct" and bounds is None:
        bounds = [(-math.pi, math.pi)] * prob.ansatz.n_params
    config = vqe.OptimizerConfig(method, int(opt.get("max_iters", 100)), initial, bounds,
                                 int(opt.get("global_iters", 50)), seed=seed)
    spectrum = models.exact_diagonalize(prob.h)
    gap = spectrum.e2 - spectrum.e1 if cfg.get("gap") == "E2-E1" else None
    rec = vqe.run_vqe(prob.h, prob.ansatz, config, cfg.get("shots"), _noise(cfg), _mitigation(cfg), seed,
                      prob.observables, spectrum, gap)
    rec.config.update({"model": name, "param": value, "options": options})
    return json.loads(rec.to_json())


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def point_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


def _csv_row(rec: dict, value) -> dict:
    k = rec["energies"].index(rec["e_opt"])
    return {"param": value, "E_vqe": rec["e_opt"], "sigma": rec["sigmas"][k], "E0": rec["e0"],
            "E1": rec["e1"], "E2": rec["e2"], "rel_err": rec["rel_err"], "fidelity": rec["fidelity"],
            "iters": len(rec["energies"]), "seed": rec["seed"]}


def run_sweep(cfg: dict, out_dir: Path, workers: int = 1) -> int:
    grid = cfg.get("grid")
    if grid is None:
        grid = [cfg.get("value", MODEL_DEFAULTS[cfg["model"]])]
    if not isinstance(grid, list) or not grid:
        raise ConfigError("sweep grid must be a nonempty list")
    seeds = [point_seed(cfg["seed"], i) for i in range(len(grid))]
    results: dict = {}
    failed = []
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futs = {i: pool.submit(run_point, cfg, v, s) for i, (v, s) in enumerate(zip(grid, seeds))}
            for i, fut in futs.items():
                try:
                    results[i] = fut.result()
                except Exception as exc:  # record and keep the finished points
                    failed.append((grid[i], repr(exc)))
    else:
        for i, (v, s) in enumerate(zip(grid, seeds)):
            try:
                results[i] = run_point(cfg, v, s)
            except Exception as exc:
                failed.append((v, repr(exc)))
    rows = []
    for i in sorted(results):
        _atomic_write(out_dir / f"point_{i:03d}.json", json.dumps(results[i], indent=2, sort_keys=True))
        rows.append(_csv_row(results[i], grid[i]))
    _atomic_write(out_dir / "summary.csv", vqe.records_to_csv(rows))
    for v, msg in failed:
        print(f"point {v} failed: {msg}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def _overrides(args) -> dict:
    return {"model": args.model, "shots": args.shots, "seed": args.seed}


def cmd_vqe(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    if args.value is not None:
        cfg["grid"] = [args.value]
    elif "grid" in cfg and len(cfg["grid"]) > 1:
        cfg["grid"] = cfg["grid"][:1]
    return run_sweep(cfg, Path(args.output), 1)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    if args.grid:
        cfg["grid"] = [float(v) for v in args.grid.split(",") if v.strip()]
    if "grid" not in cfg or not cfg["grid"]:
        raise ConfigError("sweep grid must be a nonempty list")
    return run_sweep(cfg, Path(args.output), args.workers)


# ---------------------------------------------------------------------------
# selftest


def cmd_selftest(args) -> int:
    checks = []
    rng = np.random.default_rng(default_seed())
    for n, axis in ((1, "Z"), (2, "XY"), (3, "ZZZ")):
        theta = float(rng.uniform(0, 2 * math.pi))
        spec = mbqc.GadgetSpec(n, axis, theta)
        fid = circuit_fidelity(mbqc.compile_gadget(spec), mbqc.gadget_unitary(spec), n)
        checks.append((f"gadget {axis}", fid > 1 - 1e-9))
    big = _load_pattern("zzz15")
    reduced, _ = mbqc.reduce(big)
    checks.append(("15-qubit ZZZ pattern reduces to 4 qubits", len(reduced.qubits) == 4))
    e0 = models.exact_diagonalize(models.z2_hamiltonian(2.0)).e0
    checks.append(("z2 ground energy", abs(e0 + math.sqrt(8)) < 1e-10))
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if all(ok for _, ok in checks) else EXIT_VERIFY


# ---------------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridvqe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model", help="print terms and spectrum of a model")
    p.add_argument("name")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--mass", type=float, default=-1.0, help="reduced quark mass (su3)")
    p.add_argument("--x", type=float, default=0.8)
    p.add_argument("--m", type=int, default=2, help="lattice rows (pc)")
    p.add_argument("--n", type=int, default=1, help="lattice columns (pc)")
    p.add_argument("--xi", type=float, default=0.0)
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("pattern", help="reduce and compile a measurement pattern")
    p.add_argument("action", choices=["gadget", "reduce"])
    p.add_argument("file", nargs="?")
    p.add_argument("--n", type=int)
    p.add_argument("--axis")
    p.add_argument("--theta", type=float, default=0.7)
    p.add_argument("--verify", action="store_true")
    p.set_defaults(func=cmd_pattern)

    for name, func in (("vqe", cmd_vqe), ("sweep", cmd_sweep)):
        p = sub.add_parser(name, help=f"run a {'single VQE' if name == 'vqe' else 'parameter sweep'}")
        p.add_argument("config", nargs="?")
        p.add_argument("--model", choices=sorted(MODEL_PARAMS))
        p.add_argument("--shots", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--output", "-o", default="runs")
        if name == "vqe":
            p.add_argument("--value", type=float, help="model parameter (lambda, m or xi)")
        else:
            p.add_argument("--grid", help="comma separated parameter values")
            p.add_argument("--workers", type=int, default=1)
        p.set_defaults(func=func)

    p = sub.add_parser("selftest", help="quick consistency checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
