"""Command line front end: ``sim run|spectrum|sweep|compare``.

Exit codes: 0 success, 1 configuration error, 2 truncation budget exceeded,
3 ``compare`` deviation above ``--tolerance``.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import yaml

from . import __version__
from .engine import EvolutionState, ObservableSeries, TruncationBudgetExceeded, run
from .model import BinOperators, ConfigError, ExperimentConfig, Setup
from .observables import (
    SPECTRUM_CONVENTION,
    NoOutputFluxError,
    circuit_entropy,
    default_recorders,
    delay_photon_distribution,
    g2_function,
    output_flux,
    output_spectrum,
    system_density,
)
from .oracle import integrate_two_atom_master_eq, mirror_effective_bloch

log = logging.getLogger("qdelay")

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_TOLERANCE = 0, 1, 2, 3
WORKERS_ENV = "SIM_WORKERS"

TOP_KEYS = {
    "setup", "gamma_L", "gamma_R", "chi", "omega1", "omega1_phase", "omega2", "omega2_phase",
    "delta1", "delta2", "phi", "tau", "dt", "d_ph", "d_max", "svd_cutoff", "t_max",
    "trunc_budget", "initial_system", "record_stride", "spectrum", "g2",
}
SPECTRUM_KEYS = {"nu_min", "nu_max", "n_nu", "M", "incoherent"}
G2_KEYS = {"p_max"}
ALIASES = {"omega": "omega1", "delta": "delta1"}


# ---------------------------------------------------------------- configuration


def config_from_mapping(data: Any) -> ExperimentConfig:
    """Validate a raw key/value mapping and build the configuration."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a key/value mapping")
    data = dict(data)
    for alias, key in ALIASES.items():
        if alias in data:
            if key in data:
                raise ConfigError(f"both {alias!r} and {key!r} given")
            data[key] = data.pop(alias)
    unknown = sorted(set(data) - TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for name, allowed in (("spectrum", SPECTRUM_KEYS), ("g2", G2_KEYS)):
        sub = data.get(name)
        if sub is None:
            data.pop(name, None)
            continue
        if not isinstance(sub, dict):
            raise ConfigError(f"{name} must be a mapping")
        bad = sorted(set(sub) - allowed)
        if bad:
            raise ConfigError(f"unknown keys in {name}: {', '.join(bad)}")
    if "setup" not in data or "tau" not in data or "dt" not in data:
        raise ConfigError("config needs at least setup, tau and dt")
    try:
        return ExperimentConfig.from_dict(data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def parse_config(path: str | os.PathLike) -> ExperimentConfig:
    """Read a YAML (or JSON) configuration file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return config_from_mapping(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(_plain(cfg.to_dict()), sort_keys=True)


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


# ---------------------------------------------------------------- output


def fmt(x: Any) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.12g}"


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class OutputDir:
    root: Path
    files: list[str] = field(default_factory=list)

    def write(self, name: str, text: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / name
        path.write_text(text)
        if name not in self.files:
            self.files.append(name)
        return path

    def manifest(self, cfg: ExperimentConfig, started: str, extra: dict | None = None) -> Path:
        body = {
            "version": __version__,
            "config": _plain(cfg.to_dict()),
            "started": started,
            "finished": _now(),
            "spectrum_convention": SPECTRUM_CONVENTION,
            "files": [{"name": n, "sha256": sha256_file(self.root / n)} for n in self.files],
        }
        body.update(extra or {})
        path = self.root / "manifest.json"
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return path


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def timeseries_csv(series: ObservableSeries) -> str:
    rows = []
    for t, rec in series.records.get("timeseries", []):
        rows.append([t, rec["pe1"], rec["pe2"], rec["n_delay"], rec["norm"], rec["disc_weight"]])
    return csv_text(["t", "pe1", "pe2", "n_delay", "norm", "disc_weight"], rows)


def entropy_csv(series: ObservableSeries) -> str:
    rows = []
    for t, prof in series.records.get("entropy", []):
        rows.extend([t, ta, s] for ta, s in zip(prof.t_A, prof.values))
    return csv_text(["t", "t_A", "S"], rows)


def photon_dist_csv(state: EvolutionState, cfg: ExperimentConfig, n_max: int | None = None) -> str:
    ops = BinOperators.for_config(cfg)
    n_max = cfg.ell * cfg.d_ph * cfg.n_modes if n_max is None else n_max
    n_max = min(n_max, 64)
    dist = delay_photon_distribution(state.chain, state.delay_window, ops.photon_counts, n_max)
    return csv_text(["N", "p_N"], [[n, p] for n, p in enumerate(dist.p)])


# ---------------------------------------------------------------- commands


def _simulate(cfg: ExperimentConfig) -> tuple[EvolutionState, ObservableSeries]:
    return run(cfg, default_recorders(cfg))


def cmd_run(cfg: ExperimentConfig, out: OutputDir) -> int:
    started = _now()
    state, series = _simulate(cfg)
    out.write("timeseries.csv", timeseries_csv(series))
    out.write("entropy.csv", entropy_csv(series))
    out.write("photon_dist.csv", photon_dist_csv(state, cfg))
    out.manifest(cfg, started, {"cumulative_discarded_weight": state.cumulative_discarded_weight})
    return EXIT_OK


def cmd_spectrum(cfg: ExperimentConfig, out: OutputDir) -> int:
    """Run, then write the output spectrum and g2 from the final state."""
    started = _now()
    state, series = _simulate(cfg)
    out.write("timeseries.csv", timeseries_csv(series))
    out.write("entropy.csv", entropy_csv(series))
    ops = BinOperators.for_config(cfg)
    sp = cfg.spectrum
    nu = np.linspace(sp.nu_min, sp.nu_max, sp.n_nu)
    extra: dict[str, Any] = {"cumulative_discarded_weight": state.cumulative_discarded_weight}
    # mode 0 is the mirror output or the L-propagating output of the two-atom circuit
    spec, meta = output_spectrum(
        state.chain, state.k, cfg.ell, nu, cfg.dt, ops.annihilate[0], sp.M, sp.incoherent
    )
    out.write("spectrum.csv", csv_text(["nu", "S_nu"], zip(nu, spec)))
    extra["spectrum"] = {k: v for k, v in meta.items() if k != "convention"}
    q = state.k - cfg.ell - 1
    p_max = cfg.g2.p_max if cfg.g2.p_max is not None else min(2 * cfg.ell, q + cfg.ell - 1)
    try:
        g2 = g2_function(state.chain, state.k, cfg.ell, p_max, ops.annihilate[0], cfg.dt)
        out.write("g2.csv", csv_text(["tprime", "g2"], zip(np.arange(p_max + 1) * cfg.dt, g2)))
    except NoOutputFluxError as exc:
        extra["g2"] = str(exc)
    out.manifest(cfg, started, extra)
    return EXIT_OK


def steady_state_summary(cfg: ExperimentConfig) -> dict[str, float]:
    """Final-window averages of one mirror run, used by the sweep."""
    state, series = _simulate(cfg)
    recs = [r for _, r in series.records.get("timeseries", [])]
    tail = recs[-max(1, len(recs) // 10):]
    ops = BinOperators.for_config(cfg)
    return {
        "pe_ss": float(np.mean([r["pe1"] for r in tail])),
        "flux_ss": output_flux(state.chain, state.k, cfg.ell, ops.annihilate[0], cfg.dt),
        "S_circuit_ss": circuit_entropy(state.chain, state.k, cfg.ell),
    }


def _sweep_cell(args: tuple[dict, float, float]) -> tuple[float, float, dict]:
    data, phi, gamma_tau = args
    cfg = ExperimentConfig.from_dict(data)
    cfg = cfg.replace(phi=phi, tau=gamma_tau / cfg.gamma)
    return phi, gamma_tau, steady_state_summary(cfg)


def cmd_sweep(
    cfg: ExperimentConfig,
    out: OutputDir,
    n_phi: int = 16,
    tau_values: Sequence[float] = (0.2, 1.0, 2.0, 4.0),
    workers: int = 1,
) -> int:
    """Steady state on a grid of feedback phases in ``[0, 2 pi)`` and delays ``gamma tau``."""
    started = _now()
    phis = [2 * math.pi * j / n_phi for j in range(n_phi)]
    base = cfg.to_dict()
    # validate every cell before spending time on any of them
    for gt in tau_values:
        cfg.replace(tau=gt / cfg.gamma)
    jobs = [(base, phi, gt) for gt in tau_values for phi in phis]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_sweep_cell, jobs))
    else:
        cells = [_sweep_cell(j) for j in jobs]
    cells.sort(key=lambda c: (c[1], c[0]))
    rows = [[phi, gt, r["pe_ss"], r["flux_ss"], r["S_circuit_ss"]] for phi, gt, r in cells]
    out.write("sweep.csv", csv_text(["phi", "gamma_tau", "pe_ss", "flux_ss", "S_circuit_ss"], rows))
    out.manifest(cfg, started, {"n_phi": n_phi, "tau_values": list(tau_values)})
    return EXIT_OK


def compare_deviation(cfg: ExperimentConfig) -> tuple[float, str]:
    """Largest deviation between the MPS run and the Markovian reference."""
    if cfg.setup is Setup.MIRROR:
        state, series = _simulate(cfg)
        recs = [r for _, r in series.records.get("timeseries", [])]
        pe = recs[-1]["pe1"] if recs else float(np.real(system_density(state.chain)[1, 1]))
        ref = float(np.real(mirror_effective_bloch(cfg)[1, 1]))
        return abs(pe - ref) / max(abs(ref), 1e-12), "relative steady-state p_e deviation"

    from .engine import Recorder

    rec = Recorder("rho", lambda st: system_density(st.chain), cfg.record_stride)
    _, series = run(cfg, [rec])
    times = np.concatenate([[0.0], series.times("rho")])
    ref = integrate_two_atom_master_eq(cfg, times)
    mps = np.array(series.values("rho"))
    dev = float(np.max(np.abs(mps - ref[1:]))) if mps.size else 0.0
    return dev, "max element deviation of the system density matrix"


def cmd_compare(cfg: ExperimentConfig, out: OutputDir, tolerance: float) -> int:
    started = _now()
    dev, what = compare_deviation(cfg)
    print(f"{what}: {dev:.6g} (tolerance {tolerance:g})")
    out.write("compare.csv", csv_text(["deviation", "tolerance"], [[dev, tolerance]]))
    out.manifest(cfg, started, {"deviation": dev, "measure": what})
    return EXIT_OK if dev <= tolerance else EXIT_TOLERANCE


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sim", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=["run", "spectrum", "sweep", "compare"])
    p.add_argument("--config", required=True, help="YAML or JSON configuration file")
    p.add_argument("--out-dir", default="out", help="directory for CSV files and manifest")
    p.add_argument("--tolerance", type=float, default=0.02, help="compare: allowed deviation")
    p.add_argument(
        "--workers",
        type=int,
        default=None,
        help=f"sweep: worker processes (default ${WORKERS_ENV} or 1)",
    )
    p.add_argument("--n-phi", type=int, default=16, help="sweep: number of feedback phases")
    p.add_argument(
        "--tau-values",
        type=lambda s: [float(x) for x in s.split(",")],
        default=[0.2, 1.0, 2.0, 4.0],
        help="sweep: comma-separated gamma*tau values",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    out = OutputDir(Path(args.out_dir))
    try:
        cfg = parse_config(args.config)
        if args.command == "run":
            return cmd_run(cfg, out)
        if args.command == "spectrum":
            return cmd_spectrum(cfg, out)
        if args.command == "compare":
            return cmd_compare(cfg, out, args.tolerance)
        workers = args.workers if args.workers is not None else int(os.environ.get(WORKERS_ENV, "1"))
        return cmd_sweep(cfg, out, args.n_phi, args.tau_values, max(1, workers))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TruncationBudgetExceeded as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as exc:
        # e.g. too few output bins for the requested spectrum window
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
