"""Command-line pipeline: compile, lower, simulate, sample, analyze, sweep, calibrate, report.

Configuration is a YAML file with the sections ``lattice``, ``compile``,
``device``, ``sim`` and ``output``. Data products go to ``--out-dir``;
diagnostics go to standard error, and wall-clock times only to the sidecar
``rydtwin.log`` so that repeated runs produce identical data files.

Exit codes: 2 invalid configuration, 3 search failure, 4 memory guard,
5 integrator instability.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import (
    classify_readout, cz_counts, dephasing_model, fidelity_report, per_layer_infidelity, rydberg_observables,
)
from .circuit import LOGICAL, NATIVE, Circuit, circuit_stats, dumps, load
from .compiler import (
    GLOBAL_GHZ, LOCAL_GHZ, CompileError, CompileRequest, SearchFailure, TruncationPolicy, compile_ghz,
    repetition_code_groups,
)
from .engine import (
    SINGLE_STATE, TWO_STATE, BackendConfig, EngineError, IntegratorInstability, MemoryGuardError, QutritState,
    run_ideal, run_pulse, sample_measurements,
)
from .lattice import LatticeError, LatticeSpec, build_lattice
from .physics import CalibrationError, DeviceParams, PhysicsError, calibrate_cz, device_from_dict, device_to_dict, load_device
from .scheduler import SchedulingError, lower_to_native

SCHEMA_VERSION = "rydtwin-output/1"
EXIT_CONFIG, EXIT_SEARCH, EXIT_MEMORY, EXIT_INSTABILITY = 2, 3, 4, 5

log = logging.getLogger("rydtwin")


class ConfigError(ValueError):
    pass


# --- configuration -----------------------------------------------------------------

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as f:
            cfg = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"config {path} is not valid YAML: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {}) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    return sec


def lattice_from_config(cfg: dict) -> LatticeSpec:
    sec = _section(cfg, "lattice")
    if "rows" not in sec:
        raise ConfigError("missing key lattice.rows")
    try:
        return LatticeSpec(kind=sec.get("kind", "square"), rows=int(sec["rows"]),
                           cols=int(sec.get("cols", sec["rows"])), spacing=float(sec.get("spacing_um", 3.0)))
    except (LatticeError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid lattice section: {e}") from e


def request_from_config(cfg: dict, r_g_sq: float | None = None, seed: int | None = None) -> CompileRequest:
    spec = lattice_from_config(cfg)
    sec = _section(cfg, "compile")
    if r_g_sq is None:
        if "r_g_sq_in_a2" not in sec:
            raise ConfigError("missing key compile.r_g_sq_in_a2")
        r_g_sq = sec["r_g_sq_in_a2"]
    pol = sec.get("policy", {}) or {}
    target = sec.get("target", GLOBAL_GHZ)
    groups = sec.get("groups")
    if target == LOCAL_GHZ:
        if groups in (None, "repetition"):
            groups = repetition_code_groups(build_lattice(spec))
        groups = tuple(tuple(int(s) for s in g) for g in groups)
    try:
        return CompileRequest(
            lattice=spec, r_g_sq=float(r_g_sq), mode=sec.get("mode", NATIVE), target=target, groups=groups,
            policy=TruncationPolicy(**pol), seed=int(sec.get("seed", 0) if seed is None else seed),
            phi=float(sec.get("phi", 0.0)), verify=bool(sec.get("verify", True)),
        )
    except (CompileError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid compile section: {e}") from e


def device_from_config(cfg: dict) -> DeviceParams:
    sec = _section(cfg, "device")
    try:
        if "profile" in sec:
            return load_device(sec["profile"])
        return device_from_dict(sec) if sec else DeviceParams()
    except (OSError, PhysicsError, KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid device section: {e}") from e


def backend_from_config(cfg: dict, args) -> tuple[str, bool, BackendConfig]:
    sec = _section(cfg, "sim")
    backend = args.backend or sec.get("backend", "ideal")
    if backend not in ("ideal", "pulse"):
        raise ConfigError(f"unknown backend {backend!r}")
    open_system = bool(args.open or sec.get("open", False))
    try:
        bc = BackendConfig(
            dt=float(args.dt if args.dt is not None else sec.get("dt", 0.001)),
            record_stride=int(sec.get("record_stride", 1)),
            snapshot_per_layer=bool(sec.get("snapshots", False)),
            seed=int(args.seed if args.seed is not None else sec.get("seed", 0)),
            layer_period=sec.get("layer_period_us"),
            allow_large=bool(sec.get("allow_large", False)),
        )
    except (EngineError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid sim section: {e}") from e
    return backend, open_system, bc


# --- output helpers -------------------------------------------------------------------

def _stamp(obj: dict, chash: str) -> dict:
    return {"schema_version": SCHEMA_VERSION, "config_hash": chash, "rydtwin": __version__, **obj}


def write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonify) + "\n")


def _jsonify(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(type(x))


def write_csv(path: Path, header, rows, chash: str) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# {SCHEMA_VERSION} config_hash={chash}\n")
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])


def save_state(path: Path, st: QutritState) -> None:
    np.savez(path, amps=st.amps, sites=np.asarray(st.sites), n_lattice=st.n_lattice)


def load_state(path) -> QutritState:
    with np.load(path) as z:
        return QutritState(z["amps"], tuple(int(s) for s in z["sites"]), int(z["n_lattice"]))


def _sidecar(out: Path, msg: str) -> None:
    with open(out / "rydtwin.log", "a") as f:
        f.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {msg}\n")


def _out_dir(args, cfg) -> Path:
    d = args.out_dir or _section(cfg, "output").get("dir", "rydtwin_out")
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _circuit_from(args, cfg) -> Circuit:
    path = getattr(args, "circuit", None) or _section(cfg, "sim").get("circuit")
    if path is None:
        raise ConfigError("no circuit given (use --circuit or sim.circuit)")
    try:
        return load(path)
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"cannot load circuit {path}: {e}") from e


# --- pipeline stages -----------------------------------------------------------------

def stage_compile(cfg, out: Path, chash: str, seed=None, r_g_sq=None, tag="") -> Circuit:
    req = request_from_config(cfg, r_g_sq=r_g_sq, seed=seed)
    res = compile_ghz(req)
    circ = res.circuit.with_metadata(config_hash=chash, schema_version=SCHEMA_VERSION)
    (out / f"circuit{tag}.json").write_text(dumps(circ) + "\n")
    rep = res.report.to_dict()
    wall = rep.pop("wall_time_s")
    rep["groups"] = res.plan.metadata["groups"]
    write_json(out / f"search_report{tag}.json", _stamp(rep, chash))
    _sidecar(out, f"compile{tag} depth={circ.depth} wall_time_s={wall:.3f}")
    log.info("compiled %s %dx%d r_g^2=%g: depth %d", req.lattice.kind, req.lattice.rows, req.lattice.cols,
             req.r_g_sq, circ.depth)
    return circ


def _target(circ: Circuit):
    groups = circ.metadata.get("groups")
    return groups if groups else None


def stage_simulate(circ: Circuit, cfg, args, out: Path, chash: str, tag="") -> dict:
    backend, open_system, bc = backend_from_config(cfg, args)
    device = device_from_config(cfg)
    t0 = time.perf_counter()
    target = _target(circ)
    if backend == "ideal":
        st = run_ideal(circ)
        rep = fidelity_report(st, circ, target)
        summary = {"backend": "ideal", "F": rep.F, "I": rep.I, "F_avg": rep.F_avg, "norm2": rep.norm2,
                   "P_R": 0.0, "T_R": 0.0}
    else:
        if circ.level != NATIVE:
            raise ConfigError("pulse backend needs a native circuit")
        rec = run_pulse(circ, device, bc, open_system)
        st = rec.final
        layers = None
        if bc.snapshot_per_layer:
            ideal = []
            run_ideal(circ, levels=3, snapshots=ideal)
            layers = per_layer_infidelity(rec.snapshots, ideal, cz_counts(circ))
            write_csv(out / f"layers{tag}.csv", ["layer", "I", "I_per_gate"], layers.rows(), chash)
        rep = fidelity_report(st, circ, target, layers)
        P_R, T_R = rydberg_observables(rec)
        summary = {"backend": "pulse", "open_system": open_system, "dt": bc.dt, "F": rep.F, "I": rep.I,
                   "F_avg": rep.F_avg, "norm2": rep.norm2, "P_R": P_R, "T_R": T_R,
                   "gamma": rec.metadata["gamma"], "r_i_um": rec.metadata["r_i_um"]}
        write_csv(out / f"series{tag}.csv", ["t_us", "norm", "sum_n"], rec.series_rows(), chash)
    summary.update(depth=circ.depth, n_cz=rep.n_cz)
    save_state(out / f"state{tag}.npz", st)
    write_json(out / f"run{tag}.json", _stamp(summary, chash))
    _sidecar(out, f"simulate{tag} backend={backend} wall_time_s={time.perf_counter() - t0:.3f}")
    print(f"F={summary['F']:.10f} P_R={summary['P_R']:.3e} T_R={summary['T_R']:.6f} "
          f"norm2={summary['norm2']:.12f}", file=sys.stderr)
    return summary


def _histogram_rows(hist):
    for k, v in hist.rows():
        yield (f"{k[0]}:{k[1]}" if isinstance(k, tuple) else str(k)), v


def stage_sample(st: QutritState, shots: int, scheme: str, seed: int, out: Path, chash: str):
    hist = sample_measurements(st, shots, scheme, seed)
    write_csv(out / "histogram.csv", ["bin", "count"], _histogram_rows(hist), chash)
    ro = classify_readout(hist)
    write_json(out / "readout.json", _stamp({
        "scheme": scheme, "shots": shots, "seed": seed, "ghz_mass": ro.ghz_mass, "error_mass": ro.error_mass,
        "coverage": ro.coverage, "reported_bins": [list(k) if isinstance(k, tuple) else k for k in ro.reported],
    }, chash))
    print(f"GHZ mass {ro.ghz_mass:.6f}, coverage of reported bins {ro.coverage:.6f}", file=sys.stderr)
    return hist, ro


# --- subcommands --------------------------------------------------------------------

def cmd_compile(args, cfg, out, chash):
    stage_compile(cfg, out, chash, seed=args.seed)


def cmd_lower(args, cfg, out, chash):
    circ = _circuit_from(args, cfg)
    if circ.level != LOGICAL:
        raise ConfigError("lower expects a logical circuit")
    r2 = _section(cfg, "compile").get("r_g_sq_in_a2", circ.metadata.get("r_g_sq"))
    if r2 is None:
        raise ConfigError("missing key compile.r_g_sq_in_a2")
    dev = device_from_config(cfg)
    nat = lower_to_native(circ, float(r2), dev.cz.phi).with_metadata(config_hash=chash)
    (out / "circuit_native.json").write_text(dumps(nat) + "\n")
    print(f"native depth {nat.depth}", file=sys.stderr)


def cmd_simulate(args, cfg, out, chash):
    stage_simulate(_circuit_from(args, cfg), cfg, args, out, chash)


def _shots_scheme(args, cfg):
    sec = _section(cfg, "sim")
    shots = int(args.shots if args.shots is not None else sec.get("shots", 1_000_000))
    scheme = args.scheme or sec.get("scheme", TWO_STATE)
    if scheme not in (TWO_STATE, SINGLE_STATE):
        raise ConfigError(f"unknown readout scheme {scheme!r}")
    seed = int(args.seed if args.seed is not None else sec.get("seed", 0))
    return shots, scheme, seed


def cmd_sample(args, cfg, out, chash):
    path = args.state or str(out / "state.npz")
    try:
        st = load_state(path)
    except OSError as e:
        raise ConfigError(f"cannot read state {path}: {e}") from e
    stage_sample(st, *_shots_scheme(args, cfg), out, chash)


def cmd_analyze(args, cfg, out, chash):
    circ = _circuit_from(args, cfg)
    dev = device_from_config(cfg)
    path = args.state or str(out / "state.npz")
    st = load_state(path)
    rep = fidelity_report(st, circ, _target(circ))
    obj = rep.to_dict()
    for tau in (0.2, 2.0):
        stats = circuit_stats(circ, tau)
        dm = dephasing_model(circ, tau, dev.t2_us)
        obj[f"tau_{tau:g}us"] = {"qgs": stats.qgs, "total_time_us": dm.total_time,
                                 "F_D_closed": dm.closed_form(), "F_D_estimate": dm.estimate()}
    s = circuit_stats(circ, dev.tau_layer_us)
    obj["stats"] = s.as_dict()
    write_json(out / "analysis.json", _stamp(obj, chash))
    print(f"F={rep.F:.10f} D={circ.depth} O1={s.avg_one:.3f} O2={s.avg_two:.3f}", file=sys.stderr)


def _sweep_row(payload):
    cfg, r2, args_dict, out, chash = payload
    args = argparse.Namespace(**args_dict)
    tag = f"_rg{r2:g}"
    try:
        circ = stage_compile(cfg, Path(out), chash, seed=args.seed, r_g_sq=r2, tag=tag)
        s = stage_simulate(circ, cfg, args, Path(out), chash, tag=tag)
        return [r2, circ.depth, s["F"], s["I"], s["P_R"], s["T_R"], s["norm2"], "ok"]
    except Exception as e:  # a failed row is reported, the sweep continues
        return [r2, "", "", "", "", "", "", f"failed: {type(e).__name__}: {e}"]


def cmd_sweep(args, cfg, out, chash):
    sec = _section(cfg, "sweep")
    values = sec.get("r_g_sq_in_a2")
    if not values:
        raise ConfigError("missing key sweep.r_g_sq_in_a2")
    values = sorted(float(v) for v in values)
    workers = max(1, int(os.environ.get("RYDTWIN_THREADS", "1")))
    ad = {k: getattr(args, k) for k in ("backend", "open", "dt", "seed")}
    payloads = [(cfg, v, ad, str(out), chash) for v in values]
    if workers > 1 and len(values) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(values))) as ex:
            rows = list(ex.map(_sweep_row, payloads))
    else:
        rows = [_sweep_row(p) for p in payloads]
    write_csv(out / "sweep.csv", ["r_g_sq", "D", "F", "I", "P_R", "T_R", "norm2", "status"], rows, chash)
    for r in rows:
        print(" ".join(str(x) for x in r), file=sys.stderr)


def cmd_calibrate(args, cfg, out, chash):
    dev = device_from_config(cfg)
    sec = _section(cfg, "calibrate")
    seed = int(args.seed if args.seed is not None else sec.get("seed", 0))
    res = calibrate_cz(dev, seed=seed, n_starts=int(sec.get("starts", 12)),
                       dt=float(args.dt if args.dt is not None else sec.get("dt", 0.001)))
    prof = device_to_dict(dev.with_(cz=res.pulse))
    prof["config_hash"] = chash
    with open(out / "device.yaml", "w") as f:
        yaml.safe_dump(prof, f, sort_keys=False)
    print(f"F_CZ={res.fidelity:.9f} phi_residual={res.phi:.3e} starts={res.starts}", file=sys.stderr)


def cmd_report(args, cfg, out, chash):
    """Full pipeline from one config: compile, simulate, sample, analyze."""
    circ = stage_compile(cfg, out, chash, seed=args.seed)
    summary = stage_simulate(circ, cfg, args, out, chash)
    st = load_state(out / "state.npz")
    shots, scheme, seed = _shots_scheme(args, cfg)
    _, ro = stage_sample(st, shots, scheme, seed, out, chash)
    stats = circuit_stats(circ, device_from_config(cfg).tau_layer_us)
    write_json(out / "report.json", _stamp({
        "depth": circ.depth, "stats": stats.as_dict(), "run": summary,
        "readout": {"ghz_mass": ro.ghz_mass, "coverage": ro.coverage},
    }, chash))


COMMANDS = {
    "compile": cmd_compile, "lower": cmd_lower, "simulate": cmd_simulate, "sample": cmd_sample,
    "analyze": cmd_analyze, "sweep": cmd_sweep, "calibrate": cmd_calibrate, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rydtwin", description="Rydberg-array GHZ digital twin")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir")
        p.add_argument("--backend", choices=("ideal", "pulse"))
        p.add_argument("--open", action="store_true")
        p.add_argument("--dt", type=float)
        p.add_argument("--shots", type=int)
        p.add_argument("--scheme", choices=(TWO_STATE, SINGLE_STATE))
        p.add_argument("--circuit")
        p.add_argument("--state")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        chash = config_hash(cfg)
        out = _out_dir(args, cfg)
        COMMANDS[args.command](args, cfg, out, chash)
    except (ConfigError, CompileError, LatticeError, SchedulingError, PhysicsError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (SearchFailure, CalibrationError) as e:
        print(f"search failed: {e}", file=sys.stderr)
        return EXIT_SEARCH
    except MemoryGuardError as e:
        print(f"memory guard: {e}", file=sys.stderr)
        return EXIT_MEMORY
    except IntegratorInstability as e:
        print(f"integrator instability: {e}", file=sys.stderr)
        return EXIT_INSTABILITY
    return 0


if __name__ == "__main__":
    sys.exit(main())
