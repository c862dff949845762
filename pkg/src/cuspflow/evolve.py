"""Time advancement of the reduced system (h, Omega) with Picard coupling.

One step realises the construction diagram b => v_theta => Omega => b~:
with b frozen, h and Omega take one IMEX step each, the meridional
velocity is re-solved from Omega, and the loop repeats until b stops
moving (a contraction for small dt).

The h-step is performed on Gamma = r^2 h = r v_theta, whose equation

    dt Gamma + b.grad Gamma = Lap Gamma - (2/r) dr Gamma
                            = r dr( (1/r) dr Gamma ) + dzz Gamma

has no zeroth-order term and a conservative r^{-1}-weighted flux form.
Written that way, explicit upwind advection under CFL plus backward-Euler
diffusion is a monotone update: the interior maximum of Gamma^{n+1} cannot
exceed max(max Gamma^n, boundary Gamma^{n+1}).  The slip condition
dr h = 0 on vertical walls turns into the Robin flux dr Gamma = 2 Gamma / r,
which enters as a diagonal boundary term (growth on the outer wall at
r = 1, decay on the step walls).  Division by r^2 returns h; the potential
term -(2 v_r/r) h of the h-equation is carried exactly by this change of
variables.

The Omega-step splits three ways so the pure-diffusion update is a strict
contraction of the r-weighted L2 norm: explicit upwind advection and
vortex stretching, an implicit tridiagonal solve for the antisymmetric
drift (2/r) dr Omega, and an implicit conservative Laplacian with
Dirichlet-zero rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .domain import (
    BOUNDARY_V,
    CORNER_CONVEX,
    CORNER_REENTRANT,
    Grid,
)
from .errors import ParameterError, StepSizeError
from .elliptic import (
    EllipticOperator,
    assemble_operator,
    assemble_v3_problem,
    assemble_vr_problem,
    biot_savart,
    solve,
)
from .field import GridField, dirichlet_mask, grad, lp_norm

CFL_EPS = 1e-12
DT_OVER_DELTA_CAP = 0.125  # keeps I - dt*L positive definite despite the Robin term


@dataclass
class FlowState:
    """Evolved unknowns plus the reconstructed meridional velocity."""

    t: float
    h: GridField  # neumann-all
    omega: GridField  # dirichlet-all
    v_r: GridField  # mixed-vr
    v_3: GridField  # mixed-v3

    @property
    def grid(self) -> Grid:
        return self.h.grid

    def v_theta(self) -> GridField:
        rr = self.grid.rr()
        return GridField(self.grid, rr * self.h.values, "none")

    def gamma(self) -> GridField:
        rr = self.grid.rr()
        return GridField(self.grid, rr**2 * self.h.values, "none")

    def J(self) -> GridField:
        """J = -dz v_theta / r = -dz h (r is constant along z)."""
        _, dh_dz = grad(self.h)
        return GridField(self.grid, -dh_dz.values, "none")


def _quintic_step(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


def _poly_bump(s: np.ndarray) -> np.ndarray:
    return np.where(np.abs(s) < 1.0, (1.0 - np.clip(s, -1, 1) ** 2) ** 4, 0.0)


# the streamfunction bump sits strictly inside S_1 = [1/2, 1] x [0, 1]
PSI_CENTER = (0.72, 0.5)
PSI_WIDTH = (0.15, 0.3)
PSI_SCALE = 0.05


@dataclass
class InitialCondition:
    """Closed-form initial data compatible with the slip conditions.

    swirl-only: v_theta = r * g(z) with g' = 0 at z = 0 and at every step
    height (g varies only below the lowest step top), so the Robin and
    Neumann conditions hold identically.  streamfunction-swirl adds a
    compactly supported streamfunction bump in the interior of S_1, whose
    centered-difference curl gives a discretely divergence-free b.
    """

    kind: str = "streamfunction-swirl"
    amplitude: float = 0.5

    def build(self, grid: Grid) -> FlowState:
        if self.kind not in ("zero", "swirl-only", "streamfunction-swirl"):
            raise ParameterError(f"unknown initial condition kind {self.kind!r}")
        h = GridField.zeros(grid, "neumann-all")
        omega = GridField.zeros(grid, "dirichlet-all")
        v_r = GridField.zeros(grid, "mixed-vr")
        v_3 = GridField.zeros(grid, "mixed-v3")

        if self.kind in ("swirl-only", "streamfunction-swirl"):
            h_m = float(grid.snapped_heights[-1])
            zz = np.broadcast_to(grid.z[None, :], grid.shape)
            prof = 0.5 * self.amplitude * (1.0 + _quintic_step(zz / h_m))
            h = GridField(grid, np.where(grid.active, prof, 0.0), "neumann-all")

        if self.kind == "streamfunction-swirl":
            psi = self.streamfunction(grid)
            rr = grid.rr()
            dpsi_dr = _centered(psi, 0, grid)
            dpsi_dz = _centered(psi, 1, grid)
            v_r = GridField(grid, np.where(grid.active, -dpsi_dz / rr, 0.0), "mixed-vr")
            v_3 = GridField(grid, np.where(grid.active, dpsi_dr / rr, 0.0), "mixed-v3")
            om_t = _centered(v_r.values, 1, grid) - _centered(v_3.values, 0, grid)
            omega = GridField(grid, np.where(grid.active, om_t / rr, 0.0), "dirichlet-all")

        return FlowState(t=0.0, h=h, omega=omega, v_r=v_r, v_3=v_3)

    def streamfunction(self, grid: Grid) -> np.ndarray:
        rr, zz = np.meshgrid(grid.r, grid.z, indexing="ij")
        psi = (
            self.amplitude
            * PSI_SCALE
            * _poly_bump((rr - PSI_CENTER[0]) / PSI_WIDTH[0])
            * _poly_bump((zz - PSI_CENTER[1]) / PSI_WIDTH[1])
        )
        return np.where(grid.active, psi, 0.0)


def _centered(values: np.ndarray, axis: int, grid: Grid) -> np.ndarray:
    """Plain centered difference; zero where a neighbour is missing.

    Only used for the compactly supported streamfunction, so the one-sided
    closures never see nonzero data.
    """
    out = np.zeros_like(values)
    d = 2.0 * grid.delta
    if axis == 0:
        out[1:-1, :] = (values[2:, :] - values[:-2, :]) / d
    else:
        out[:, 1:-1] = (values[:, 2:] - values[:, :-2]) / d
    return np.where(grid.active, out, 0.0)


def gamma_robin(grid: Grid) -> np.ndarray:
    """Diagonal boundary-flux coefficients of the Gamma operator.

    Vertical walls carry the flux (1/r) dr Gamma = 2 Gamma / r^2; the sign
    is positive on the outer wall r = 1 (growth), negative on the step
    walls.  Re-entrant corners get the quarter-face share, which keeps
    Gamma = c r^2 (rigid rotation) an exact steady state of the stencil.
    """
    tag = grid.tag
    robin = np.zeros(grid.shape)
    wall = (tag == BOUNDARY_V) | (tag == CORNER_CONVEX)
    sign = np.where(np.arange(grid.shape[0])[:, None] == grid.shape[0] - 1, 1.0, -1.0)
    rr = grid.rr()
    robin[wall] = (sign * 4.0 / (rr * grid.delta))[wall]
    reent = tag == CORNER_REENTRANT
    robin[reent] = (-1.0 / (rr * grid.delta))[reent]
    return robin


def upwind_advection(
    grid: Grid, v_r: np.ndarray, v_3: np.ndarray, f: np.ndarray
) -> np.ndarray:
    """First-order upwind b . grad f; missing neighbours contribute zero."""
    act = grid.active
    delta = grid.delta
    fv = np.where(act, f, 0.0)

    def one_axis(vel, axis):
        vp = np.maximum(vel, 0.0)
        vm = np.minimum(vel, 0.0)
        dback = np.zeros_like(fv)
        dfwd = np.zeros_like(fv)
        if axis == 0:
            ok_b = act & np.vstack([np.zeros((1, act.shape[1]), bool), act[:-1, :]])
            ok_f = act & np.vstack([act[1:, :], np.zeros((1, act.shape[1]), bool)])
            dback[1:, :] = fv[1:, :] - fv[:-1, :]
            dfwd[:-1, :] = fv[1:, :] - fv[:-1, :]
        else:
            ok_b = act & np.hstack([np.zeros((act.shape[0], 1), bool), act[:, :-1]])
            ok_f = act & np.hstack([act[:, 1:], np.zeros((act.shape[0], 1), bool)])
            dback[:, 1:] = fv[:, 1:] - fv[:, :-1]
            dfwd[:, :-1] = fv[:, 1:] - fv[:, :-1]
        return (
            vp * np.where(ok_b, dback, 0.0) + vm * np.where(ok_f, dfwd, 0.0)
        ) / delta

    out = one_axis(np.where(act, v_r, 0.0), 0) + one_axis(np.where(act, v_3, 0.0), 1)
    return np.where(act, out, 0.0)


@dataclass
class Stepper:
    """Grid- and dt-bound operators reused across steps."""

    grid: Grid
    dt: float
    cfl: float
    gamma_solver: EllipticOperator  # dt*L_Gamma - I
    omega_solver: EllipticOperator  # dt*Lap_dirichlet - I
    vr_op: EllipticOperator
    v3_op: EllipticOperator
    omega_pinned: np.ndarray
    solver_tol: float = 1e-11
    bs_tol: float = 1e-9

    @property
    def delta(self) -> float:
        return self.grid.delta


def build_stepper(grid: Grid, dt: float, cfl: float = 0.5) -> Stepper:
    if dt <= 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if dt > DT_OVER_DELTA_CAP * grid.delta:
        raise StepSizeError(
            f"dt={dt} exceeds the stability cap {DT_OVER_DELTA_CAP} * delta "
            f"= {DT_OVER_DELTA_CAP * grid.delta:.3e}"
        )
    gamma_base = assemble_operator(grid, -1, 0.0, None, gamma_robin(grid))
    om_pin = dirichlet_mask(grid, "dirichlet-all")
    omega_base = assemble_operator(grid, 1, 0.0, om_pin)
    return Stepper(
        grid=grid,
        dt=dt,
        cfl=cfl,
        gamma_solver=gamma_base.shifted(dt, 1.0),
        omega_solver=omega_base.shifted(dt, 1.0),
        vr_op=assemble_vr_problem(grid),
        v3_op=assemble_v3_problem(grid),
        omega_pinned=om_pin,
    )


def check_cfl(stepper: Stepper, v_r: GridField, v_3: GridField):
    vmax = max(v_r.max_abs(), v_3.max_abs(), CFL_EPS)
    limit = stepper.cfl * stepper.delta / vmax
    if stepper.dt > limit * (1.0 + 1e-12):
        raise StepSizeError(
            f"dt={stepper.dt:.3e} violates the CFL bound {limit:.3e} "
            f"(cfl={stepper.cfl}, vmax={vmax:.3e})"
        )


def step_h(
    stepper: Stepper,
    h: GridField,
    v_r: GridField,
    v_3: GridField,
    forcing: np.ndarray | None = None,
) -> tuple[GridField, int]:
    """One IMEX step of the h-equation in Gamma form; returns (h, cg iters)."""
    check_cfl(stepper, v_r, v_3)
    grid = stepper.grid
    rr = grid.rr()
    gamma = np.where(grid.active, rr**2 * h.values, 0.0)
    rhs = gamma - stepper.dt * upwind_advection(grid, v_r.values, v_3.values, gamma)
    if forcing is not None:
        rhs = rhs + stepper.dt * np.where(grid.active, rr**2 * forcing, 0.0)
    # gamma_solver is dt*L - I, so solving (dt*L - I) x = -rhs gives
    # (I - dt L) x = rhs
    x, stats = solve(stepper.gamma_solver, -rhs, tol=stepper.solver_tol, x0=gamma)
    h_new = np.where(grid.active, x / rr**2, 0.0)
    return GridField(grid, h_new, "neumann-all"), stats.iterations


def _drift_solve(grid: Grid, pinned: np.ndarray, dt: float, rhs: np.ndarray):
    """Solve (I - dt * (2/r) dr) x = rhs with centered dr, Dirichlet pins.

    Tridiagonal in r for each grid row; vectorised Thomas elimination over
    rows.  The drift is antisymmetric in the r-weighted inner product on
    the pinned-at-ends runs, so the solve is a contraction there.
    """
    free = grid.active & ~pinned
    nr, nz = grid.shape
    coef = np.where(free, dt / (grid.rr() * grid.delta), 0.0)
    # row i: x_i - c_i (x_{i+1} - x_{i-1}) = rhs_i, c_i = dt/(r_i delta)
    a = np.where(free, coef, 0.0)  # coefficient of +x_{i-1}
    c = np.where(free, -coef, 0.0)  # coefficient of +x_{i+1}
    b = np.ones((nr, nz))
    d = np.where(free, rhs, 0.0)

    # zero couplings that would reach across pinned or inactive nodes
    reach_prev = np.zeros((nr, nz), dtype=bool)
    reach_prev[1:, :] = free[:-1, :]
    reach_next = np.zeros((nr, nz), dtype=bool)
    reach_next[:-1, :] = free[1:, :]
    a = np.where(reach_prev, a, 0.0)
    c = np.where(reach_next, c, 0.0)

    cp = np.zeros((nr, nz))
    dp = np.zeros((nr, nz))
    cp[0] = c[0] / b[0]
    dp[0] = d[0] / b[0]
    for i in range(1, nr):
        denom = b[i] - a[i] * cp[i - 1]
        cp[i] = c[i] / denom
        dp[i] = (d[i] - a[i] * dp[i - 1]) / denom
    x = np.zeros((nr, nz))
    x[-1] = dp[-1]
    for i in range(nr - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return np.where(free, x, 0.0)


def stretching_source(grid: Grid, h_frozen: GridField) -> np.ndarray:
    """(2 v_theta / r^2) dz v_theta = 2 h dz h, from the frozen swirl."""
    _, dh_dz = grad(h_frozen)
    return np.where(grid.active, 2.0 * h_frozen.values * dh_dz.values, 0.0)


def step_omega(
    stepper: Stepper,
    omega: GridField,
    v_r: GridField,
    v_3: GridField,
    h_frozen: GridField,
    forcing: np.ndarray | None = None,
) -> tuple[GridField, int]:
    """One IMEX step of the Omega-equation; returns (omega, cg iters).

    Splitting: explicit upwind advection and stretching source, implicit
    tridiagonal drift, implicit conservative Laplacian (Dirichlet rows).
    """
    check_cfl(stepper, v_r, v_3)
    grid = stepper.grid
    dt = stepper.dt
    rhs = omega.values - dt * upwind_advection(
        grid, v_r.values, v_3.values, omega.values
    )
    rhs = rhs + dt * stretching_source(grid, h_frozen)
    if forcing is not None:
        rhs = rhs + dt * np.where(grid.active, forcing, 0.0)
    star = _drift_solve(grid, stepper.omega_pinned, dt, rhs)
    x, stats = solve(stepper.omega_solver, -star, tol=stepper.solver_tol, x0=star)
    return GridField(grid, x, "dirichlet-all"), stats.iterations


def b_norm(v_r: GridField, v_3: GridField) -> float:
    return float(np.sqrt(lp_norm(v_r, 2) ** 2 + lp_norm(v_3, 2) ** 2))


def b_diff_norm(v_r: GridField, v_3: GridField, w_r: GridField, w_3: GridField) -> float:
    grid = v_r.grid
    dr = GridField(grid, v_r.values - w_r.values)
    d3 = GridField(grid, v_3.values - w_3.values)
    return float(np.sqrt(lp_norm(dr, 2) ** 2 + lp_norm(d3, 2) ** 2))


@dataclass
class AdvanceStats:
    picard_iterations: int = 0
    picard_factor: float = float("nan")
    converged: bool = False
    non_contractive: bool = False
    cg_iterations: int = 0
    div_residual: float = 0.0
    line_integral_max: float = 0.0
    gamma_interior_max: float = 0.0
    gamma_bound: float = 0.0  # max(previous max, new boundary max)


def advance(
    stepper: Stepper,
    state: FlowState,
    picard_max: int = 3,
    picard_tol: float = 1e-8,
) -> tuple[FlowState, AdvanceStats]:
    """One time step of the coupled system via Picard iteration on b."""
    if picard_max < 1:
        raise ParameterError(f"picard_max must be >= 1, got {picard_max}")
    grid = stepper.grid
    stats = AdvanceStats()
    vr_prev, v3_prev = state.v_r, state.v_3
    diffs = []
    h_new = state.h
    om_new = state.omega
    vr_new, v3_new = vr_prev, v3_prev
    bs = None
    for _ in range(picard_max):
        h_new, it_h = step_h(stepper, state.h, vr_prev, v3_prev)
        om_new, it_o = step_omega(stepper, state.omega, vr_prev, v3_prev, h_new)
        vr_new, v3_new, bs = biot_savart(
            om_new,
            tol=stepper.bs_tol,
            x0_vr=vr_prev.values,
            x0_v3=v3_prev.values,
            ops=(stepper.vr_op, stepper.v3_op),
        )
        stats.cg_iterations += it_h + it_o + bs.iterations
        stats.picard_iterations += 1
        diff = b_diff_norm(vr_new, v3_new, vr_prev, v3_prev)
        diffs.append(diff)
        nrm = b_norm(vr_new, v3_new)
        vr_prev, v3_prev = vr_new, v3_new
        if diff <= picard_tol * nrm or (diff == 0.0 and nrm == 0.0):
            stats.converged = True
            break
    if len(diffs) >= 2 and diffs[-2] > 0:
        stats.picard_factor = diffs[-1] / diffs[-2]
        if not stats.converged and stats.picard_factor > 1.0:
            # contraction is only guaranteed for small dt; keep the state
            stats.non_contractive = True
            logging.getLogger(__name__).warning(
                "Picard iteration not contracting at t=%.6g "
                "(factor %.3f after %d iterations)",
                state.t,
                stats.picard_factor,
                stats.picard_iterations,
            )
    if bs is not None:
        stats.div_residual = bs.div_residual
        stats.line_integral_max = bs.line_integral_max

    # discrete maximum-principle audit for Gamma on the accepted step
    rr2 = grid.rr() ** 2
    gam_old = np.where(grid.active, rr2 * state.h.values, -np.inf)
    gam_new = np.where(grid.active, rr2 * h_new.values, -np.inf)
    bmask = grid.boundary
    interior_new = np.where(grid.active & ~bmask, gam_new, -np.inf)
    stats.gamma_interior_max = float(interior_new.max())
    bd_new = np.where(bmask, gam_new, -np.inf)
    stats.gamma_bound = float(max(gam_old.max(), bd_new.max()))

    new_state = FlowState(
        t=state.t + stepper.dt, h=h_new, omega=om_new, v_r=vr_new, v_3=v3_new
    )
    return new_state, stats


def auto_dt(grid: Grid, v_r: GridField, v_3: GridField, cfl: float) -> float:
    """Default step: 0.25 delta^2 capped by the advective CFL bound."""
    vmax = max(v_r.max_abs(), v_3.max_abs(), CFL_EPS)
    return min(0.25 * grid.delta**2, cfl * grid.delta / vmax)
