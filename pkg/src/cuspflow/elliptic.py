"""Mixed-boundary elliptic problems and the reduced Biot-Savart step.

The meridional velocity is recovered from Omega = omega_theta / r by
solving, at fixed time,

    (Lap - 1/r^2) v_r = dz (r Omega),   dz v_r = 0 on H,  v_r = 0 on V,
    Lap v_3 = -(1/r) dr (r^2 Omega),    v_3 = 0 on H,  dr v_3 = 0 on V,

where Lap = (1/r) dr (r dr .) + dzz.  Operators are assembled in
conservative (edge-conductance) form, which makes them self-adjoint in the
r^w-weighted inner product by construction; zero-flux edges realise the
Neumann sides, identity rows the Dirichlet sides.

solve() is preconditioned conjugate gradients in that weighted inner
product (diagonal scaling only); its dot products use the deterministic
pairwise tree reduction.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from math import ceil, sqrt

import numpy as np

from .domain import Grid
from .errors import ParameterError, SolverError, UsageError
from .field import (
    HAVE_NUMBA,
    GridField,
    _directional_derivative,
    dirichlet_mask,
    flux_conductances,
    tree_sum,
    volumes,
)

if HAVE_NUMBA:
    from numba import njit as _njit

    @_njit(cache=True)
    def _stencil_kernel(v, cr, cz, inv_vol, coef, u_f, pin_f):
        nr, nz = v.shape
        out = np.empty((nr, nz))
        for i in range(nr):
            for k in range(nz):
                acc = 0.0
                if i + 1 < nr:
                    acc += cr[i, k] * (v[i + 1, k] - v[i, k])
                if i > 0:
                    acc -= cr[i - 1, k] * (v[i, k] - v[i - 1, k])
                if k + 1 < nz:
                    acc += cz[i, k] * (v[i, k + 1] - v[i, k])
                if k > 0:
                    acc -= cz[i, k - 1] * (v[i, k] - v[i, k - 1])
                out[i, k] = (acc * inv_vol[i, k] + coef[i, k] * v[i, k]) * u_f[
                    i, k
                ] - v[i, k] * pin_f[i, k]
        return out


@dataclass
class EllipticOperator:
    """Conservative 5-point operator  L f = graph-div f / vol - c0 f + robin f.

    apply() uses the sign convention of the continuous problems above
    (negative definite modulo the Robin term); the solver works with -L,
    which is positive definite in the vol-weighted inner product whenever
    c0 > 0 somewhere or a Dirichlet segment is pinned.
    """

    grid: Grid
    cr: np.ndarray  # (nr-1, nz) edge conductances in r
    cz: np.ndarray  # (nr, nz-1) edge conductances in z
    c0: np.ndarray  # (nr, nz) zeroth-order coefficient, >= 0
    robin: np.ndarray  # (nr, nz) diagonal boundary-flux term (paper sign)
    vol: np.ndarray  # (nr, nz) r^w-weighted node volumes
    pinned: np.ndarray  # (nr, nz) Dirichlet-pinned nodes (value 0)
    weight_power: int = 1
    symmetric: bool = True
    _diag: np.ndarray = dc_field(default=None, repr=False)
    _cache: tuple = dc_field(default=None, repr=False)

    @property
    def unknown(self) -> np.ndarray:
        return self.grid.active & ~self.pinned

    def _ensure_cache(self):
        if getattr(self, "_cache", None) is None:
            u = self.unknown
            pin_act = self.pinned & self.grid.active
            inv_vol = np.where(u, 1.0 / np.where(u, self.vol, 1.0), 0.0)
            coef = np.where(u, self.robin - self.c0, 0.0)
            object.__setattr__(
                self,
                "_cache",
                (
                    u.astype(np.float64),
                    pin_act.astype(np.float64),
                    inv_vol,
                    coef,
                    self.grid.active.astype(np.float64),
                ),
            )
        return self._cache

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Matrix action in the paper's sign; pinned rows act as -identity.

        Couplings into pinned nodes read the actual stored value, so the
        action on analytic test functions matches the stencil everywhere off
        the Dirichlet rows; solve() keeps those values at zero.
        """
        u_f, pin_f, inv_vol, coef, act_f = self._ensure_cache()
        v = values * act_f
        if HAVE_NUMBA:
            return _stencil_kernel(v, self.cr, self.cz, inv_vol, coef, u_f, pin_f)
        acc = np.zeros_like(v)
        fr = self.cr * (v[1:, :] - v[:-1, :])
        acc[:-1, :] += fr
        acc[1:, :] -= fr
        fz = self.cz * (v[:, 1:] - v[:, :-1])
        acc[:, :-1] += fz
        acc[:, 1:] -= fz
        return (acc * inv_vol + coef * v) * u_f - v * pin_f

    def spd_apply(self, values: np.ndarray) -> np.ndarray:
        return -self.apply(values)

    def spd_diagonal(self) -> np.ndarray:
        if self._diag is None:
            csum = np.zeros(self.grid.shape)
            csum[:-1, :] += self.cr
            csum[1:, :] += self.cr
            csum[:, :-1] += self.cz
            csum[:, 1:] += self.cz
            d = np.ones(self.grid.shape)
            u = self.unknown
            d[u] = csum[u] / self.vol[u] + self.c0[u] - self.robin[u]
            object.__setattr__(self, "_diag", d)
        return self._diag

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        if getattr(self, "_vol_u", None) is None:
            object.__setattr__(
                self, "_vol_u", np.where(self.unknown, self.vol, 0.0)
            )
        return tree_sum(a * b * self._vol_u)

    def norm(self, a: np.ndarray) -> float:
        return sqrt(max(self.inner(a, a), 0.0))

    def shifted(self, scale: float, shift: float) -> "EllipticOperator":
        """Operator scale*L - shift*I (same pins); used for backward Euler."""
        return EllipticOperator(
            grid=self.grid,
            cr=scale * self.cr,
            cz=scale * self.cz,
            c0=scale * self.c0 + shift,
            robin=scale * self.robin,
            vol=self.vol,
            pinned=self.pinned,
            weight_power=self.weight_power,
        )


def assemble_operator(
    grid: Grid,
    weight_power: int = 1,
    c0: np.ndarray | float = 0.0,
    pinned: np.ndarray | None = None,
    robin: np.ndarray | None = None,
) -> EllipticOperator:
    cr, cz = flux_conductances(grid, weight_power)
    vol = volumes(grid, weight_power)
    c0_arr = np.broadcast_to(np.asarray(c0, dtype=float), grid.shape).copy()
    if pinned is None:
        pinned = np.zeros(grid.shape, dtype=bool)
    if robin is None:
        robin = np.zeros(grid.shape)
    return EllipticOperator(
        grid=grid, cr=cr, cz=cz, c0=c0_arr, robin=robin, vol=vol, pinned=pinned,
        weight_power=weight_power,
    )


def assemble_vr_problem(grid: Grid) -> EllipticOperator:
    """(Lap - 1/r^2) with zero-flux H walls and Dirichlet V walls."""
    c0 = 1.0 / grid.rr() ** 2
    return assemble_operator(grid, 1, c0, dirichlet_mask(grid, "mixed-vr"))


def assemble_v3_problem(grid: Grid) -> EllipticOperator:
    """Lap with Dirichlet H walls and zero-flux V walls."""
    return assemble_operator(grid, 1, 0.0, dirichlet_mask(grid, "mixed-v3"))


@dataclass
class SolveStats:
    iterations: int
    relres: float


def solve(
    op: EllipticOperator,
    rhs,
    tol: float = 1e-8,
    x0: np.ndarray | None = None,
    max_iters: int | None = None,
    on_iterate=None,
) -> tuple[np.ndarray, SolveStats]:
    """PCG (diagonal scaling) for op x = rhs in the weighted inner product.

    rhs may be a GridField or an array; the result is an array with zeros at
    pinned and inactive nodes.  Raises SolverError carrying the residual if
    the iteration cap (default 20 sqrt(N)) is exhausted.
    """
    if not 0.0 < tol <= 1e-4:
        raise ParameterError(f"solver tol must lie in (0, 1e-4], got {tol}")
    b_in = rhs.values if isinstance(rhs, GridField) else np.asarray(rhs, dtype=float)
    if b_in.shape != op.grid.shape:
        raise UsageError("rhs shape does not match the operator grid")
    u = op.unknown
    n = int(u.sum())
    if max_iters is None:
        max_iters = max(200, ceil(20 * sqrt(max(n, 1))))

    # solve the SPD system (-L) x = -rhs
    b = np.where(u, -b_in, 0.0)
    norm_b = op.norm(b)
    if norm_b == 0.0:
        return np.zeros(op.grid.shape), SolveStats(0, 0.0)

    x = np.zeros(op.grid.shape) if x0 is None else np.where(u, x0, 0.0)
    r = b - op.spd_apply(x)
    d = op.spd_diagonal()
    inv_d = np.where(u, 1.0 / d, 0.0)
    z = r * inv_d
    p = z.copy()
    rz = op.inner(r, z)
    relres = op.norm(r) / norm_b
    it = 0
    while relres > tol:
        if it >= max_iters:
            raise SolverError(
                f"CG did not reach tol={tol} in {max_iters} iterations "
                f"(relres={relres:.3e})",
                residual=relres,
                iterations=it,
            )
        q = op.spd_apply(p)
        pq = op.inner(p, q)
        if pq <= 0.0:
            raise SolverError(
                "operator is not positive definite on the unknown set",
                residual=relres,
                iterations=it,
            )
        alpha = rz / pq
        x = x + alpha * p
        r = r - alpha * q
        relres = op.norm(r) / norm_b
        z = r * inv_d
        rz_new = op.inner(r, z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
        it += 1
        if on_iterate is not None:
            on_iterate(x)
    return np.where(u, x, 0.0), SolveStats(it, relres)


def column_line_integrals(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Trapezoid integral of a field over each vertical grid column."""
    act = grid.active
    pad = np.zeros((grid.shape[0], 1), dtype=bool)
    down = np.hstack([pad, act[:, :-1]])
    up = np.hstack([act[:, 1:], pad])
    t_z = np.where(act, 0.5 * (down.astype(float) + up.astype(float)), 0.0)
    return (t_z * np.where(act, values, 0.0)).sum(axis=1) * grid.delta


@dataclass
class BiotSavartStats:
    div_residual: float
    line_integral_max: float
    iterations: int


def biot_savart(
    omega: GridField,
    tol: float = 1e-8,
    x0_vr: np.ndarray | None = None,
    x0_v3: np.ndarray | None = None,
    ops: tuple[EllipticOperator, EllipticOperator] | None = None,
) -> tuple[GridField, GridField, BiotSavartStats]:
    """Reconstruct (v_r, v_3) from Omega (dirichlet-all family).

    Records the divergence residual and the column line-integral maximum of
    v_r, the two identities the continuous reconstruction satisfies exactly.
    """
    from .field import divergence_b, lp_norm  # local import, avoids cycle noise

    grid = omega.grid
    if omega.bc_family != "dirichlet-all":
        raise UsageError("biot_savart expects Omega with the dirichlet-all family")
    if ops is None:
        ops = (assemble_vr_problem(grid), assemble_v3_problem(grid))
    op_vr, op_v3 = ops

    rr = grid.rr()
    zero_mask = np.zeros(grid.shape, dtype=bool)
    r_omega = np.where(grid.active, rr * omega.values, 0.0)
    rhs_vr = _directional_derivative(grid, r_omega, 1, zero_mask)
    r2_omega = np.where(grid.active, rr**2 * omega.values, 0.0)
    rhs_v3 = -_directional_derivative(grid, r2_omega, 0, zero_mask) / rr

    x_vr, st1 = solve(op_vr, rhs_vr, tol=tol, x0=x0_vr)
    x_v3, st2 = solve(op_v3, rhs_v3, tol=tol, x0=x0_v3)
    v_r = GridField(grid, x_vr, "mixed-vr")
    v_3 = GridField(grid, x_v3, "mixed-v3")

    div = divergence_b(v_r, v_3)
    stats = BiotSavartStats(
        div_residual=lp_norm(div, 2),
        line_integral_max=float(np.abs(column_line_integrals(grid, x_vr)).max()),
        iterations=st1.iterations + st2.iterations,
    )
    return v_r, v_3, stats
