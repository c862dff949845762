"""Manufactured-solution convergence studies.

Exact solutions are chosen to satisfy the slip conditions of their family
in closed form; the induced source terms are derived symbolically and the
discrete solve (or time march) is compared against the exact field in the
r-weighted L2 norm.

Single-rectangle cases (m = 1) use trigonometric profiles matching the
mixed boundary conditions edge by edge.  Staircase cases use a compactly
supported polynomial bump placed across the first step wall, below the
first re-entrant corner, so every condition holds identically while the
solve still exercises the masked stencils.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import log2

import numpy as np
import sympy as sp

from .domain import build_domain, generate_grid
from .errors import ParameterError
from .evolve import build_stepper, step_h, step_omega
from .field import GridField, lp_norm
from .elliptic import assemble_v3_problem, assemble_vr_problem, solve

R, Z, T = sp.symbols("r z t", positive=True)

EQUATIONS = ("vr", "v3", "h", "omega")


def _sym_bump(x):
    return sp.Piecewise(((1 - x**2) ** 4, sp.Abs(x) < 1), (0, True))


def _lap_cyl(u):
    return sp.diff(u, R, 2) + sp.diff(u, R) / R + sp.diff(u, Z, 2)


@dataclass
class EllipticCase:
    solution: object  # sympy expression u(r, z)
    rhs: object  # sympy expression of the stated operator applied to u


def elliptic_case(equation: str, m: int) -> EllipticCase:
    if equation not in ("vr", "v3"):
        raise ParameterError(f"elliptic equation must be vr or v3, got {equation!r}")
    if m == 1:
        if equation == "vr":
            u = sp.sin(2 * sp.pi * (R - sp.Rational(1, 2))) * sp.cos(sp.pi * Z)
        else:
            u = sp.cos(2 * sp.pi * (R - sp.Rational(1, 2))) * sp.sin(sp.pi * Z)
    else:
        # compact bump across the first step wall, under the re-entrant corner
        u = _sym_bump((R - sp.Float(0.55)) / sp.Float(0.13)) * _sym_bump(
            (Z - sp.Float(0.28)) / sp.Float(0.12)
        )
    rhs = _lap_cyl(u) - (u / R**2 if equation == "vr" else 0)
    return EllipticCase(solution=u, rhs=sp.simplify(rhs))


def elliptic_convergence(
    equation: str,
    m: int,
    beta: float,
    p_list,
    tol: float = 1e-11,
) -> list[tuple[int, float]]:
    """(p, r-weighted L2 error) for the chosen mixed elliptic problem."""
    case = elliptic_case(equation, m)
    u_fn = sp.lambdify((R, Z), case.solution, "numpy")
    f_fn = sp.lambdify((R, Z), case.rhs, "numpy")
    domain = build_domain(m, beta)
    out = []
    for p in p_list:
        grid = generate_grid(domain, p)
        rr, zz = np.meshgrid(grid.r, grid.z, indexing="ij")
        op = assemble_vr_problem(grid) if equation == "vr" else assemble_v3_problem(grid)
        rhs = np.where(grid.active, f_fn(rr, zz), 0.0)
        x, _ = solve(op, rhs, tol=tol)
        err = GridField(grid, x - np.where(grid.active, u_fn(rr, zz), 0.0))
        out.append((p, lp_norm(err, 2)))
    return out


@dataclass
class ParabolicCase:
    solution: object  # u(r, z, t)
    forcing: object  # dt u - (Lap + (2/r) dr) u   (b = 0, no swirl source)


def parabolic_case(equation: str) -> ParabolicCase:
    if equation == "h":
        u = sp.exp(-T) * sp.cos(2 * sp.pi * (R - sp.Rational(1, 2))) * sp.cos(sp.pi * Z)
    elif equation == "omega":
        u = sp.exp(-T) * sp.sin(2 * sp.pi * (R - sp.Rational(1, 2))) * sp.sin(sp.pi * Z)
    else:
        raise ParameterError(f"parabolic equation must be h or omega, got {equation!r}")
    forcing = sp.diff(u, T) - (_lap_cyl(u) + 2 * sp.diff(u, R) / R)
    return ParabolicCase(solution=u, forcing=sp.simplify(forcing))


def _march(equation: str, grid, dt: float, n_steps: int, case: ParabolicCase):
    u_fn = sp.lambdify((R, Z, T), case.solution, "numpy")
    f_fn = sp.lambdify((R, Z, T), case.forcing, "numpy")
    rr, zz = np.meshgrid(grid.r, grid.z, indexing="ij")
    stepper = build_stepper(grid, dt)
    zero_r = GridField.zeros(grid, "mixed-vr")
    zero_3 = GridField.zeros(grid, "mixed-v3")
    zero_h = GridField.zeros(grid, "neumann-all")
    if equation == "h":
        u = GridField(grid, np.where(grid.active, u_fn(rr, zz, 0.0), 0.0), "neumann-all")
    else:
        u = GridField(
            grid, np.where(grid.active, u_fn(rr, zz, 0.0), 0.0), "dirichlet-all"
        )
    t = 0.0
    for _ in range(n_steps):
        t_next = t + dt
        forcing = np.where(grid.active, f_fn(rr, zz, t_next), 0.0)
        if equation == "h":
            u, _ = step_h(stepper, u, zero_r, zero_3, forcing=forcing)
        else:
            u, _ = step_omega(stepper, u, zero_r, zero_3, zero_h, forcing=forcing)
        t = t_next
    return u, t, u_fn, (rr, zz)


def parabolic_space_convergence(
    equation: str, p_list, t_end: float = 2e-3, m: int = 1, beta: float = 1.1
) -> list[tuple[int, float]]:
    """Space order: dt is slaved to delta^2 so the O(dt) error also scales
    like delta^2 and the measured rate is the spatial one."""
    case = parabolic_case(equation)
    domain = build_domain(m, beta)
    out = []
    for p in p_list:
        grid = generate_grid(domain, p)
        dt_target = 0.25 * grid.delta**2
        n = max(2, int(np.ceil(t_end / dt_target)))
        dt = t_end / n
        u, t, u_fn, (rr, zz) = _march(equation, grid, dt, n, case)
        err = GridField(grid, u.values - np.where(grid.active, u_fn(rr, zz, t), 0.0))
        out.append((p, lp_norm(err, 2)))
    return out


def parabolic_time_convergence(
    equation: str,
    dt_list,
    p: int = 5,
    t_end: float = 4e-3,
    m: int = 1,
    beta: float = 1.1,
    ref_factor: int = 8,
) -> list[tuple[float, float]]:
    """Time order against a small-dt reference on the same grid, which
    cancels the spatial error exactly."""
    case = parabolic_case(equation)
    domain = build_domain(m, beta)
    grid = generate_grid(domain, p)
    dts = sorted(float(d) for d in dt_list)
    n_ref = int(round(t_end / dts[0])) * ref_factor
    u_ref, _, _, _ = _march(equation, grid, t_end / n_ref, n_ref, case)
    out = []
    for dt in sorted(dts, reverse=True):
        n = int(round(t_end / dt))
        if abs(n * dt - t_end) > 1e-12 * t_end:
            raise ParameterError(f"dt={dt} does not divide t_end={t_end}")
        u, _, _, _ = _march(equation, grid, dt, n, case)
        diff = GridField(grid, u.values - u_ref.values)
        out.append((dt, lp_norm(diff, 2)))
    return out


def orders(rows) -> list[float]:
    """log2 error ratios of a refinement table (halving the scale per row)."""
    out = []
    for (a, ea), (b, eb) in zip(rows[:-1], rows[1:]):
        if eb == 0:
            out.append(float("inf"))
        else:
            out.append(log2(ea / eb))
    return out


def format_table(rows, orders_list, label: str) -> str:
    lines = [f"{label},error,order"]
    for i, (key, err) in enumerate(rows):
        o = "" if i == 0 else repr(orders_list[i - 1])
        lines.append(f"{key},{repr(err)},{o}")
    return "\n".join(lines) + "\n"
