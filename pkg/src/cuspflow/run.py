"""Simulation driver: config in, reproducible artifact tree out.

Output layout under out_dir:

    config.echo        canonical re-serialisation of the parsed config
    diagnostics.csv    one row per sampled step (schema in diagnostics)
    certificate.json   growth-bound certificate + Gamma audit
    snapshots/*.csv    optional field dumps (node index, r, z, value)
    manifest.json      file checksums, run status, grid facts

Identical configs produce byte-identical CSV output: every reduction is a
fixed-order tree sum and floats are written with repr (shortest
round-trip).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .diagnostics import (
    BoundCertificate,
    DiagnosticsRecord,
    check_growth,
    csv_header,
    record,
)
from .domain import build_domain, generate_grid
from .elliptic import biot_savart
from .errors import CuspflowError
from .evolve import (
    FlowState,
    InitialCondition,
    advance,
    auto_dt,
    build_stepper,
    DT_OVER_DELTA_CAP,
)


@dataclass
class RunResult:
    config: RunConfig
    records: list[DiagnosticsRecord]
    certificate: BoundCertificate
    out_dir: Path
    final_state: FlowState = None
    aborted: bool = False
    error: str = ""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _write_snapshot(snap_dir: Path, state: FlowState, step: int):
    snap_dir.mkdir(parents=True, exist_ok=True)
    named = {
        "h": state.h,
        "omega": state.omega,
        "vr": state.v_r,
        "v3": state.v_3,
    }
    for name, fld in named.items():
        idx, rr, zz, vals = fld.to_records()
        lines = ["index,r,z,value"]
        lines.extend(
            f"{int(i)},{repr(float(a))},{repr(float(b))},{repr(float(v))}"
            for i, a, b, v in zip(idx, rr, zz, vals)
        )
        (snap_dir / f"step{step:06d}_{name}.csv").write_text("\n".join(lines) + "\n")


def resolve_dt(cfg: RunConfig, grid, state: FlowState) -> float:
    """auto = 0.25 delta^2 capped by the advective CFL bound of the initial
    data; an explicit dt is taken as given and validated by the stepper."""
    if cfg.dt == "auto":
        return auto_dt(grid, state.v_r, state.v_3, cfg.cfl)
    return float(cfg.dt)


def simulate(cfg: RunConfig, write: bool = True) -> RunResult:
    """Run the configured simulation; deterministic given the config."""
    cfg.validate()
    out_dir = Path(cfg.out_dir)
    if write:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.echo").write_text(cfg.echo())

    records: list[DiagnosticsRecord] = []
    gamma_mp_ok = True
    gamma_mp_margin = -math.inf
    gamma_boundary_max = 0.0
    aborted = False
    error_msg = ""
    state = None
    grid_facts = {}
    try:
        domain = build_domain(cfg.m, cfg.beta)
        grid = generate_grid(domain, cfg.refinement_p)
        grid_facts = {
            "delta": grid.delta,
            "n_active": grid.n_active,
            "snapped_heights": [float(h) for h in grid.snapped_heights],
        }
        state = InitialCondition(cfg.ic_kind, cfg.ic_amplitude).build(grid)
        if cfg.ic_kind == "streamfunction-swirl":
            # replace the seed b by the reconstruction used along the
            # trajectory, so the t = 0 diagnostics row is consistent with
            # every later row
            v_r, v_3, bs0 = biot_savart(state.omega, tol=1e-10)
            state = FlowState(0.0, state.h, state.omega, v_r, v_3)
            records.append(
                record(state, bs0.div_residual, bs0.line_integral_max, float("nan"), bs0.iterations)
            )
        else:
            records.append(record(state))
        gamma_boundary_max = _gamma_boundary_max(state)

        dt = resolve_dt(cfg, grid, state)
        n_steps = 0 if cfg.t_end <= 0 else math.ceil(cfg.t_end / dt - 1e-12)
        stepper = build_stepper(grid, dt, cfg.cfl)
        if write and cfg.snapshot_stride:
            _write_snapshot(out_dir / "snapshots", state, 0)

        for step in range(1, n_steps + 1):
            if state.t + dt > cfg.t_end + 1e-12:
                # shorter final step to land on t_end exactly
                dt_last = cfg.t_end - state.t
                if dt_last <= 1e-14:
                    break
                stepper = build_stepper(grid, dt_last, cfg.cfl)
            state, stats = advance(stepper, state, cfg.picard_max, cfg.picard_tol)
            margin = stats.gamma_interior_max - stats.gamma_bound
            gamma_mp_margin = max(gamma_mp_margin, margin)
            if margin > 1e-9 * max(1.0, abs(stats.gamma_bound)):
                gamma_mp_ok = False
            gamma_boundary_max = max(gamma_boundary_max, _gamma_boundary_max(state))
            if step % cfg.output_stride == 0 or step == n_steps:
                records.append(
                    record(
                        state,
                        stats.div_residual,
                        stats.line_integral_max,
                        stats.picard_factor,
                        stats.cg_iterations,
                    )
                )
            if write and cfg.snapshot_stride and step % cfg.snapshot_stride == 0:
                _write_snapshot(out_dir / "snapshots", state, step)
    except CuspflowError as exc:
        aborted = True
        error_msg = f"{type(exc).__name__}: {exc}"

    if records:
        certificate = check_growth(
            records,
            cfg.beta,
            gamma_mp_ok=gamma_mp_ok,
            gamma_boundary_max=gamma_boundary_max,
        )
    else:
        certificate = BoundCertificate(
            c_star=0.0, j0=1, lambda0=1000.0, growth_ok=False,
            measured_rate=0.0, gamma_mp_ok=gamma_mp_ok,
        )
    result = RunResult(
        config=cfg,
        records=records,
        certificate=certificate,
        out_dir=out_dir,
        final_state=state,
        aborted=aborted,
        error=error_msg,
    )
    if write:
        _write_artifacts(result, grid_facts=grid_facts)
    if aborted:
        raise CuspflowError(error_msg)
    return result


def _gamma_boundary_max(state: FlowState) -> float:
    grid = state.grid
    gam = state.gamma().values
    b = grid.boundary
    return float(np.abs(np.where(b, gam, 0.0)).max())


def _write_artifacts(result: RunResult, grid_facts: dict):
    out = result.out_dir
    out.mkdir(parents=True, exist_ok=True)
    lines = [csv_header()]
    lines.extend(rec.to_row() for rec in result.records)
    (out / "diagnostics.csv").write_text("\n".join(lines) + "\n")
    (out / "certificate.json").write_text(
        json.dumps(result.certificate.to_json_dict(), indent=2, sort_keys=True) + "\n"
    )
    files = {}
    for name in ("config.echo", "diagnostics.csv", "certificate.json"):
        p = out / name
        if p.exists():
            files[name] = _sha256(p)
    snap_dir = out / "snapshots"
    if snap_dir.is_dir():
        for p in sorted(snap_dir.glob("*.csv")):
            files[f"snapshots/{p.name}"] = _sha256(p)
    manifest = {
        "version": __version__,
        "status": "aborted" if result.aborted else "complete",
        "error": result.error,
        "grid": grid_facts,
        "files": files,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


# ---------------------------------------------------------------------------
# verification of a finished run (pure re-reading, no recomputation)

ENERGY_STEP_TOL = 1e-6  # per-step slack relative to E(0)


@dataclass
class VerifyReport:
    ok: bool
    failures: list = field(default_factory=list)

    def add(self, msg: str):
        self.ok = False
        self.failures.append(msg)


def read_diagnostics_csv(path: Path) -> list[DiagnosticsRecord]:
    text = path.read_text().strip().splitlines()
    if not text or text[0] != csv_header():
        raise CuspflowError(f"{path}: missing or wrong CSV header")
    out = []
    for line in text[1:]:
        parts = line.split(",")
        if len(parts) != len(DiagnosticsRecord.__dataclass_fields__):
            raise CuspflowError(f"{path}: malformed row {line!r}")
        vals = [float(x) for x in parts]
        vals[-1] = int(parts[-1])
        out.append(DiagnosticsRecord(*vals))
    return out


def verify_run(out_dir) -> VerifyReport:
    """Re-check a finished run from its emitted numbers only."""
    out = Path(out_dir)
    rep = VerifyReport(ok=True)
    manifest_path = out / "manifest.json"
    if not manifest_path.exists():
        rep.add("manifest.json missing")
        return rep
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("status") != "complete":
        rep.add(f"run status is {manifest.get('status')!r}")
    for name, digest in manifest.get("files", {}).items():
        p = out / name
        if not p.exists():
            rep.add(f"{name} listed in manifest but missing")
        elif _sha256(p) != digest:
            rep.add(f"{name} does not match its manifest checksum")

    try:
        records = read_diagnostics_csv(out / "diagnostics.csv")
    except (OSError, CuspflowError, ValueError) as exc:
        rep.add(f"diagnostics.csv unreadable: {exc}")
        return rep
    if not records:
        rep.add("diagnostics.csv has no rows")
        return rep

    for i, rec in enumerate(records):
        if not rec.is_sane():
            rep.add(f"row {i}: non-finite or negative diagnostic")
    e0 = records[0].E
    for i in range(1, len(records)):
        if records[i].E > records[i - 1].E + ENERGY_STEP_TOL * e0:
            rep.add(
                f"energy rises between rows {i-1} and {i}: "
                f"{records[i-1].E!r} -> {records[i].E!r}"
            )

    cert_path = out / "certificate.json"
    if not cert_path.exists():
        rep.add("certificate.json missing")
        return rep
    cert = json.loads(cert_path.read_text())
    try:
        beta = _beta_from_echo(out / "config.echo")
        fresh = check_growth(
            records,
            beta,
            gamma_mp_ok=cert.get("gamma_mp_ok", True),
            gamma_boundary_max=cert.get("gamma_boundary_max", 0.0),
        )
    except CuspflowError as exc:
        rep.add(f"growth re-evaluation failed: {exc}")
        return rep
    if fresh.growth_ok != cert.get("growth_ok"):
        rep.add("growth_ok in certificate disagrees with the CSV series")
    if fresh.j0 != cert.get("j0") or not math.isclose(
        fresh.lambda0, float(cert.get("lambda0", float("nan"))), rel_tol=1e-12
    ):
        rep.add("certificate constants (j0, lambda0) disagree with the CSV series")
    if not cert.get("gamma_mp_ok", False):
        rep.add("Gamma maximum-principle audit failed during the run")
    sup_gamma = max(rec.sup_gamma for rec in records)
    bound = 1.05 * (records[0].sup_gamma + cert.get("gamma_boundary_max", 0.0))
    if sup_gamma > bound + 1e-12:
        rep.add(
            f"sup_t |Gamma|_inf = {sup_gamma!r} exceeds the certified bound {bound!r}"
        )
    return rep


def _beta_from_echo(path: Path) -> float:
    for line in path.read_text().splitlines():
        if line.strip().startswith("beta"):
            return float(line.split("=", 1)[1].strip())
    raise CuspflowError(f"{path}: beta not found")
