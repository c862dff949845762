"""Per-step diagnostics and the explicit growth-bound bookkeeping.

Every quantity the a priori estimates track is measured here: energy and
its dissipation functional, the swirl invariants Gamma and v_theta, the
scaled vorticity norms |Omega|_2 and |J|_2, the weighted |v_r/r|_6, and
the reconstruction residuals.  The growth certificate evaluates

    j0 = smallest integer >= ln(4^2.1 * (2 C* + 2 C*^2)) / ((beta-1) ln 4)
    lambda0 = (2 C* + 2 C*^2) * 4^j0 + 1000

at the measured C* proxy and checks |Omega(t)|_2 + |J(t)|_2 against
exp(lambda0 t) in log space (lambda0 is astronomically large, so the
check is performed without ever exponentiating).

C* caveat: the true constant involves a non-constructive iteration bound;
the certificate substitutes the measured running sup of |Gamma|_inf and
flags that in its notes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError, UsageError
from .field import GridField, grad, integrate, laplacian_cyl, lp_norm, tree_sum

CSV_COLUMNS = (
    "t",
    "E",
    "dissipation",
    "sup_gamma",
    "sup_vtheta",
    "l2_omega",
    "l2_J",
    "l6_vr_over_r",
    "div_res",
    "line_int_max",
    "picard_factor",
    "cg_iters",
)


@dataclass
class DiagnosticsRecord:
    t: float
    E: float
    dissipation: float
    sup_gamma: float
    sup_vtheta: float
    l2_omega: float
    l2_J: float
    l6_vr_over_r: float
    div_res: float
    line_int_max: float
    picard_factor: float
    cg_iters: int

    def to_row(self) -> str:
        vals = [getattr(self, c) for c in CSV_COLUMNS]
        return ",".join(
            str(int(v)) if c == "cg_iters" else repr(float(v))
            for c, v in zip(CSV_COLUMNS, vals)
        )

    def is_sane(self) -> bool:
        vals = [getattr(self, c) for c in CSV_COLUMNS if c != "picard_factor"]
        finite = all(math.isfinite(float(v)) for v in vals)
        nonneg = all(
            float(getattr(self, c)) >= 0.0
            for c in (
                "E",
                "dissipation",
                "sup_gamma",
                "sup_vtheta",
                "l2_omega",
                "l2_J",
                "l6_vr_over_r",
                "div_res",
                "line_int_max",
            )
        )
        return finite and nonneg


def csv_header() -> str:
    return ",".join(CSV_COLUMNS)


def record(
    state,
    div_res: float = 0.0,
    line_int_max: float = 0.0,
    picard_factor: float = float("nan"),
    cg_iters: int = 0,
) -> DiagnosticsRecord:
    """Measure one state.  Reconstruction stats are passed through from the
    step that produced the state (single source of truth)."""
    grid = state.grid
    rr = grid.rr()
    v_theta = state.v_theta()
    speed2 = GridField(
        grid, state.v_r.values**2 + v_theta.values**2 + state.v_3.values**2
    )
    energy = integrate(speed2, 0)

    dvr_dr, dvr_dz = grad(state.v_r)
    dv3_dr, dv3_dz = grad(state.v_3)
    dh_dr, dh_dz = grad(state.h)
    dvt_dz = rr * dh_dz.values  # dz v_theta, exact since r is constant in z
    dissipand = (
        dvr_dr.values**2
        + dvr_dz.values**2
        + dv3_dr.values**2
        + dv3_dz.values**2
        + (rr * dh_dr.values) ** 2
        + dvt_dz**2
        + np.where(grid.active, (state.v_r.values / rr) ** 2, 0.0)
    )
    dissipation = integrate(GridField(grid, dissipand), 0)

    gamma = state.gamma()
    J = state.J()
    vr_over_r = GridField(grid, np.where(grid.active, state.v_r.values / rr, 0.0))
    return DiagnosticsRecord(
        t=state.t,
        E=energy,
        dissipation=dissipation,
        sup_gamma=gamma.max_abs(),
        sup_vtheta=v_theta.max_abs(),
        l2_omega=lp_norm(state.omega, 2),
        l2_J=lp_norm(J, 2),
        l6_vr_over_r=lp_norm(vr_over_r, 6),
        div_res=div_res,
        line_int_max=line_int_max,
        picard_factor=picard_factor,
        cg_iters=cg_iters,
    )


@dataclass
class BoundCertificate:
    c_star: float
    j0: int
    lambda0: float
    growth_ok: bool
    measured_rate: float
    gamma_mp_ok: bool = True
    gamma_boundary_max: float = 0.0
    notes: str = (
        "C* is the measured running sup of |Gamma|_inf, a computable proxy for "
        "the constant that the estimates define through a non-constructive "
        "iteration bound."
    )

    def to_json_dict(self) -> dict:
        return asdict(self)


LN4 = math.log(4.0)


def compute_j0_lambda0(c_star: float, beta: float) -> tuple[int, float]:
    """Evaluate the explicit growth constants at a measured C*.

    Plain float evaluation; the ceiling is taken with a 1e-9 backoff so
    arguments that are exact integers in exact arithmetic (e.g. C* = 1,
    beta = 1.1 giving 31) do not round up spuriously.
    """
    if beta <= 1.0:
        raise ParameterError(f"beta must exceed 1, got {beta}")
    if c_star < 0.0 or not math.isfinite(c_star):
        raise ParameterError(f"C* must be finite and >= 0, got {c_star}")
    coeff = 2.0 * c_star + 2.0 * c_star**2
    if coeff <= 0.0:
        j0 = 1
    else:
        raw = (2.1 * LN4 + math.log(coeff)) / ((beta - 1.0) * LN4)
        j0 = max(1, math.ceil(raw - 1e-9))
    lambda0 = coeff * 4.0**j0 + 1000.0
    return j0, lambda0


def check_growth(
    records: list[DiagnosticsRecord],
    beta: float,
    slack: float = 0.05,
    gamma_mp_ok: bool = True,
    gamma_boundary_max: float = 0.0,
) -> BoundCertificate:
    """Evaluate the exponential Omega/J bound along a trajectory.

    growth_ok is true iff  |Omega|_2 + |J|_2 <= (1+slack) e^{lambda0 t} *
    (initial sum)  at every sample, compared in log space.  The measured
    exponential rate (least-squares slope of the log sum) is reported
    alongside, since lambda0 is far from sharp at desk scale.
    """
    if not records:
        raise UsageError("check_growth needs a nonempty record series")
    c_star = max(rec.sup_gamma for rec in records)
    j0, lambda0 = compute_j0_lambda0(c_star, beta)
    s0 = records[0].l2_omega + records[0].l2_J
    ok = True
    ts, logs = [], []
    for rec in records:
        s = rec.l2_omega + rec.l2_J
        if s > 0:
            if s0 == 0.0:
                ok = False  # grew out of nothing: bound with zero initial fails
            else:
                lhs = math.log(s)
                rhs = math.log1p(slack) + math.log(s0) + lambda0 * (rec.t - records[0].t)
                if lhs > rhs:
                    ok = False
            ts.append(rec.t)
            logs.append(math.log(s))
    if len(ts) >= 2 and (ts[-1] > ts[0]):
        a = np.polyfit(np.asarray(ts), np.asarray(logs), 1)
        rate = float(a[0])
    else:
        rate = 0.0
    return BoundCertificate(
        c_star=c_star,
        j0=j0,
        lambda0=lambda0,
        growth_ok=ok,
        measured_rate=rate,
        gamma_mp_ok=gamma_mp_ok,
        gamma_boundary_max=gamma_boundary_max,
    )


def _interior_l2(grid, values) -> float:
    w = grid.quad_weights(0)
    mask = grid.interior
    return math.sqrt(tree_sum(np.where(mask, w * values**2, 0.0)))


def _midpoint(a: GridField, b: GridField, family=None) -> GridField:
    return GridField(a.grid, 0.5 * (a.values + b.values), family or "none")


def residual_system_3_13(
    state_prev, state_next, dt: float
) -> tuple[float, float, float]:
    """Interior L2 residuals of the coupled (J, Omega, omega_3) system.

    Each equation is discretised at the temporal midpoint with centered
    differences; the residual measures how consistently the simulated
    trajectory satisfies the continuum system, and shrinks under joint
    space-time refinement.
    """
    grid = state_prev.grid
    if state_next.grid is not grid:
        raise UsageError("states live on different grids")
    rr = grid.rr()
    dt = float(dt)

    h_m = _midpoint(state_prev.h, state_next.h, "neumann-all")
    om_m = _midpoint(state_prev.omega, state_next.omega, "dirichlet-all")
    vr_m = _midpoint(state_prev.v_r, state_next.v_r, "mixed-vr")
    v3_m = _midpoint(state_prev.v_3, state_next.v_3, "mixed-v3")

    J_prev, J_next = state_prev.J(), state_next.J()
    J_m = _midpoint(J_prev, J_next)
    dJ_dt = (J_next.values - J_prev.values) / dt
    dom_dt = (state_next.omega.values - state_prev.omega.values) / dt

    # vorticity components at the midpoint: omega_r = r J, omega_3 = r dr h + 2 h
    dh_dr, _ = grad(h_m)
    omega_r = rr * J_m.values
    omega_3 = rr * dh_dr.values + 2.0 * h_m.values
    om3_of = lambda s: rr * grad(s.h)[0].values + 2.0 * s.h.values
    dom3_dt = (om3_of(state_next) - om3_of(state_prev)) / dt

    v_theta = rr * h_m.values
    f = GridField(grid, np.where(grid.active, vr_m.values / rr, 0.0))
    df_dr, df_dz = grad(f)

    def transport(field_gf):
        lap = laplacian_cyl(field_gf).values
        d_dr, d_dz = grad(field_gf)
        adv = vr_m.values * d_dr.values + v3_m.values * d_dz.values
        return lap, adv, d_dr.values

    lapJ, advJ, dJ_dr = transport(J_m)
    res_J = lapJ - advJ + (2.0 / rr) * dJ_dr + (
        omega_r * df_dr.values + omega_3 * df_dz.values
    ) - dJ_dt

    lapO, advO, dO_dr = transport(om_m)
    res_O = lapO - advO + (2.0 / rr) * dO_dr - (2.0 * v_theta / rr) * J_m.values - dom_dt

    om3_gf = GridField(grid, np.where(grid.active, omega_3, 0.0))
    lap3, adv3, _ = transport(om3_gf)
    dv3_dr, dv3_dz = grad(v3_m)
    res_3 = lap3 - adv3 + omega_r * dv3_dr.values + omega_3 * dv3_dz.values - dom3_dt

    return (
        _interior_l2(grid, np.where(grid.active, res_J, 0.0)),
        _interior_l2(grid, np.where(grid.active, res_O, 0.0)),
        _interior_l2(grid, np.where(grid.active, res_3, 0.0)),
    )


def check_vr_identity(state) -> float:
    """Interior L2 residual of (Lap + (2/r) dr)(v_r/r) = dz Omega."""
    grid = state.grid
    rr = grid.rr()
    f = GridField(grid, np.where(grid.active, state.v_r.values / rr, 0.0))
    lap = laplacian_cyl(f).values
    df_dr, _ = grad(f)
    _, dom_dz = grad(state.omega)
    res = lap + (2.0 / rr) * df_dr.values - dom_dz.values
    return _interior_l2(grid, np.where(grid.active, res, 0.0))
