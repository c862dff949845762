"""Numerical lower bounds for the geometric constants of the estimates.

Three constants are estimated by maximizing discrete Rayleigh quotients
over grid functions:

  poincare_slab        max |f|_2 / |f'|_2 on a 1-D slab, exact value h/pi
  sobolev_s0           max |f|_6 / |grad f|_2   (f = 0 on horizontal walls,
                       or zero column means)
  weighted_sobolev_Cs  max |f|_{13/5}^2 / int(|grad f|^2 + f^2/r^2)

All quotients are evaluated with the r dr dz quadrature of the field
module.  Maximizing over the finite grid subspace gives lower bounds of
the true constants (up to quadrature error); uniformity in m is tested as
boundedness of these lower bounds across domains.

The 2-D estimators run an inverse-power fixed point: each step solves the
quadratic-form operator against the p-norm subdifferential, which drives
the quotient upward, and at the fixed point the quotient is first-order
stationary.  A short budget ranks the seeded starts, then the winner is
iterated to a stationarity certificate.  The arg-max over starts is
deterministic with the lowest start index winning ties.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from math import ceil, sqrt

import numpy as np

from .domain import BOUNDARY_H, CORNER_CONVEX, CORNER_REENTRANT, Grid
from .errors import NumericError, ParameterError
from .field import flux_conductances, tree_sum

CONSTANT_NAMES = ("poincare_slab", "sobolev_s0", "weighted_sobolev_Cs")


# ---------------------------------------------------------------------------
# 1-D slab Poincare constant


def estimate_poincare(h: float, n: int, mode: str = "dirichlet") -> float:
    """Largest |f|_2 / |f'|_2 on (0, h) by inverse power iteration.

    mode 'dirichlet': f vanishes at both ends (functions vanishing on the
    horizontal boundary); mode 'zero-mean': Neumann ends with zero mean
    (the class with vanishing column integrals).  Both converge to h/pi at
    second order in 1/n.
    """
    if h <= 0:
        raise ParameterError(f"slab height must be positive, got {h}")
    if n < 16:
        raise ParameterError(f"need at least 16 grid points, got {n}")
    if mode not in ("dirichlet", "zero-mean"):
        raise ParameterError(f"unknown mode {mode!r}")
    delta = h / (n - 1)

    if mode == "dirichlet":
        m = n - 2  # interior unknowns
        main = np.full(m, 2.0 / delta**2)
        off = np.full(m - 1, -1.0 / delta**2)
        mass = np.full(m, delta)
        project = None
    else:
        m = n
        main = np.full(m, 2.0 / delta**2)
        main[0] = main[-1] = 1.0 / delta**2
        off = np.full(m - 1, -1.0 / delta**2)
        mass = np.full(m, delta)
        mass[0] = mass[-1] = delta / 2.0

        def project(x):
            return x - (mass @ x) / mass.sum()

    from scipy.linalg import solve_banded

    # The shift only regularises the factorisation of the singular Neumann
    # matrix; the reported eigenvalue is the Rayleigh quotient of the
    # unshifted operator, so no bias is introduced.
    shift = 1e-6 / h**2
    ab = np.zeros((3, m))
    ab[0, 1:] = off
    ab[1] = main + shift * mass
    ab[2, :-1] = off

    if mode == "dirichlet":
        x = np.sin(np.pi * (np.arange(m) + 1.0) / (m + 1.0))
    else:
        # odd about the midpoint, so it overlaps the first nonconstant mode
        x = project(np.arange(m) - 0.5 * (m - 1))
    lam_old = np.inf
    for it in range(2000):
        y = solve_banded((1, 1), ab, mass * x)
        if project is not None:
            y = project(y)
        nrm = sqrt(float(y @ (mass * y)))
        if nrm == 0.0:
            raise NumericError("power iteration collapsed to zero")
        x = y / nrm
        ax = np.empty(m)
        ax[:] = main * x
        ax[:-1] += off * x[1:]
        ax[1:] += off * x[:-1]
        lam = float(x @ ax) / float(x @ (mass * x)) * delta  # A has no mass weight
        if abs(lam - lam_old) <= 1e-14 * abs(lam):
            return 1.0 / sqrt(lam)
        lam_old = lam
    raise NumericError("inverse power iteration did not converge")


# ---------------------------------------------------------------------------
# 2-D Rayleigh quotient machinery


@dataclass
class ConstantEstimate:
    name: str
    m: int
    beta: float
    refinement: int
    value: float
    maximizer: np.ndarray = dc_field(repr=False, default=None)
    iterations: int = 0
    stationarity: float = float("nan")
    seed: int = 0
    n_starts: int = 0


class _Quotient:
    """Shared machinery for the two 2-D quotients."""

    def __init__(self, grid: Grid, p: float, c0_weight: bool, pinned: np.ndarray,
                 column_mean: bool, support: np.ndarray | None):
        self.grid = grid
        self.p = p
        cr, cz = flux_conductances(grid, 1)
        self.cr, self.cz = cr, cz
        self.W = grid.quad_weights(0)
        rr = grid.rr()
        self.c0 = self.W / rr**2 if c0_weight else None
        pin = pinned.copy()
        if support is not None:
            pin |= ~support
        pin |= ~grid.active
        self.pin = pin
        self.column_mean = column_mean
        self.lu = None
        if column_mean:
            act = grid.active & ~pin
            t_z = np.where(act, grid.qhat, 0.0)
            # z-trapezoid weight per node: qhat = t_r * t_z, and t_r = 1 off
            # vertical walls; using qhat directly is a valid weight vector
            self.col_w = np.where(act, t_z, 0.0)
            self.col_w2 = (self.col_w**2).sum(axis=1)
        else:
            # K is positive definite on the pinned subspace: factorise once
            # (sequential SuperLU, deterministic) so each inverse-power step
            # costs two triangular solves
            self.lu = self._factorize()

    def _factorize(self):
        import scipy.sparse as spr
        from scipy.sparse.linalg import splu

        nr, nz = self.grid.shape
        n = nr * nz
        idx = np.arange(n).reshape(nr, nz)
        free = ~self.pin
        rows, cols, vals = [], [], []
        # c0 note: self.c0 already carries the quadrature weight W; the
        # stiffness action divides nothing by volumes, matching K()
        base = np.zeros((nr, nz))
        if self.c0 is not None:
            base = base + self.c0
        for (ca, sa, sb) in (
            (self.cr, np.s_[:-1, :], np.s_[1:, :]),
            (self.cz, np.s_[:, :-1], np.s_[:, 1:]),
        ):
            a_free = free[sa]
            b_free = free[sb]
            both = a_free & b_free
            ia, ib = idx[sa][both], idx[sb][both]
            c = ca[both]
            rows.extend([ia, ib])
            cols.extend([ib, ia])
            vals.extend([-c, -c])
            # a free endpoint keeps the +c diagonal even when the neighbour
            # is pinned (the pin reads as zero), matching K()
            base[sa] += np.where(a_free, ca, 0.0)
            base[sb] += np.where(b_free, ca, 0.0)
        diag = np.where(free.ravel(), base.ravel(), 1.0)
        diag = np.where(free.ravel() & (diag == 0.0), 1.0, diag)
        rows.append(np.arange(n))
        cols.append(np.arange(n))
        vals.append(diag)
        K = spr.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )
        return splu(K)

    # -- linear algebra pieces

    def project(self, x: np.ndarray) -> np.ndarray:
        """Feasibility map: subtract the weighted column mean (annihilates
        constants per column) and zero the pinned set."""
        x = np.where(self.pin, 0.0, x)
        if self.column_mean:
            num = (self.col_w * x).sum(axis=1)
            den = self.col_w.sum(axis=1)
            coef = np.where(den > 0, num / np.maximum(den, 1e-300), 0.0)
            x = np.where(self.pin, 0.0, x - coef[:, None] * (self.col_w > 0))
        return x

    def project_orth(self, x: np.ndarray) -> np.ndarray:
        """Euclidean-orthogonal projector onto the same constraint subspace;
        used inside CG (symmetry) and for the stationarity condition."""
        x = np.where(self.pin, 0.0, x)
        if self.column_mean:
            num = (self.col_w * x).sum(axis=1)
            coef = np.where(
                self.col_w2 > 0, num / np.maximum(self.col_w2, 1e-300), 0.0
            )
            x = x - coef[:, None] * self.col_w
        return x

    def K(self, x: np.ndarray) -> np.ndarray:
        """Stiffness action: (Kx)_n = sum_e c_e (x_n - x_nb), pins read zero."""
        v = np.where(self.pin, 0.0, x)
        acc = np.zeros_like(v)
        fr = self.cr * (v[1:, :] - v[:-1, :])
        acc[:-1, :] += fr
        acc[1:, :] -= fr
        fz = self.cz * (v[:, 1:] - v[:, :-1])
        acc[:, :-1] += fz
        acc[:, 1:] -= fz
        out = -acc
        if self.c0 is not None:
            out = out + self.c0 * v
        return np.where(self.pin, 0.0, out)

    def denominator(self, x: np.ndarray) -> float:
        return tree_sum(x * self.K(x))

    def numerator(self, x: np.ndarray) -> float:
        s = tree_sum(self.W * np.abs(x) ** self.p)
        return s ** (2.0 / self.p)

    def quotient(self, x: np.ndarray) -> float:
        den = self.denominator(x)
        if den <= 0.0:
            return 0.0
        return self.numerator(x) / den

    def grad_numerator(self, x: np.ndarray) -> np.ndarray:
        s = tree_sum(self.W * np.abs(x) ** self.p)
        if s <= 0.0:
            return np.zeros_like(x)
        return (2.0) * s ** (2.0 / self.p - 1.0) * self.W * np.abs(x) ** (
            self.p - 1.0
        ) * np.sign(x)

    def _diag(self) -> np.ndarray:
        if not hasattr(self, "_diag_cache"):
            csum = np.zeros(self.grid.shape)
            csum[:-1, :] += self.cr
            csum[1:, :] += self.cr
            csum[:, :-1] += self.cz
            csum[:, 1:] += self.cz
            if self.c0 is not None:
                csum = csum + self.c0
            self._diag_cache = np.where(self.pin, 1.0, np.maximum(csum, 1e-300))
        return self._diag_cache

    def solve_K(self, rhs: np.ndarray, x0: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Solve K x = rhs on the feasible subspace.

        Direct (factorised) when the subspace is realised by pins alone;
        projected Jacobi CG for the column-mean constraint, whose projector
        does not commute with a factorisation.
        """
        b = self.project_orth(rhs)
        if self.lu is not None:
            x = self.lu.solve(b.ravel()).reshape(self.grid.shape)
            return self.project_orth(x)
        x = self.project_orth(x0)
        d = self._diag()
        r = b - self.project_orth(self.K(x))
        nb = sqrt(tree_sum(b * b))
        if nb == 0.0:
            return np.zeros_like(b)
        z = self.project_orth(r / d)
        p = z.copy()
        rz = tree_sum(r * z)
        n_unknown = int((~self.pin).sum())
        for _ in range(max(200, ceil(20 * sqrt(n_unknown)))):
            if sqrt(tree_sum(r * r)) <= tol * nb:
                return x
            q = self.project_orth(self.K(p))
            pq = tree_sum(p * q)
            if pq <= 0:
                break
            alpha = rz / pq
            x = x + alpha * p
            r = r - alpha * q
            z = self.project_orth(r / d)
            rz_new = tree_sum(r * z)
            p = z + (rz_new / rz) * p
            rz = rz_new
        return x  # best effort; quotient monotonicity is guarded by the caller

    # -- optimization

    def maximize_from(
        self,
        x0: np.ndarray,
        max_iters: int = 80,
        stat_tol: float = 1e-7,
        cg_tol: float = 1e-9,
    ) -> tuple:
        """Inverse-power iteration y = K^{-1} grad N(x), renormalised.

        At its fixed point grad N is parallel to K x, i.e. the quotient is
        stationary; the iteration drives the quotient upward (the best
        iterate is kept in any case) and stops once the projected gradient
        drops below stat_tol or the quotient plateaus.
        """
        x = self.project(x0)
        q = self.quotient(x)
        if q <= 0.0:
            return None, 0.0, 0, np.inf
        it = 0
        stat = np.inf
        best_x, best_q = x, q
        stale = 0
        for k in range(max_iters):
            it += 1
            rhs = self.grad_numerator(x)
            # near the fixed point the solution is parallel to x; rescaling
            # the warm start to the K-optimal multiple of x makes the inner
            # CG start within O(contraction) of the answer
            den = self.denominator(x)
            s = tree_sum(x * rhs) / den if den > 0 else 0.0
            y = self.solve_K(rhs, s * x, tol=cg_tol)
            ny = sqrt(max(self.denominator(y), 0.0))
            if ny <= 0.0:
                break
            x = y / ny
            q = self.quotient(x)
            if q > best_q * (1.0 + 1e-13):
                best_x, best_q = x, q
                stale = 0
            else:
                stale += 1
            if k % 5 == 4 or k == max_iters - 1 or stale >= 10:
                stat = self.stationarity(x)
                if stat <= stat_tol or stale >= 10:
                    break
        if q < best_q:
            x, q = best_x, best_q
            stat = self.stationarity(x)
        return x, q, it, stat

    def stationarity(self, x: np.ndarray) -> float:
        """Norm of the projected quotient gradient at the D-normalised point,
        relative to the gradient's constituent parts (dimensionless)."""
        den = self.denominator(x)
        if den <= 0:
            return np.inf
        xh = x / sqrt(den)
        gN = self.grad_numerator(xh)
        gD = self.numerator(xh) * 2.0 * self.K(xh)
        pg = self.project_orth(gN - gD)
        scale = sqrt(tree_sum(gN * gN)) + sqrt(tree_sum(gD * gD))
        if scale == 0.0:
            return 0.0
        return sqrt(tree_sum(pg * pg)) / scale


def _fourier_start(grid: Grid, rng: np.random.Generator, rect_idx: int) -> np.ndarray:
    """Random smooth Fourier bump supported in one step rectangle."""
    rect = grid.domain.rects[rect_idx]
    h = float(grid.snapped_heights[rect_idx])
    rr, zz = np.meshgrid(grid.r, grid.z, indexing="ij")
    inside = (
        (rr >= rect.r_lo - 1e-12)
        & (rr <= rect.r_hi + 1e-12)
        & (zz <= h + 1e-12)
        & grid.active
    )
    sr = np.where(inside, (rr - rect.r_lo) / rect.width, 0.0)
    sz = np.where(inside, zz / h, 0.0)
    f = np.zeros(grid.shape)
    for a in range(1, 4):
        for b in range(1, 4):
            f += rng.standard_normal() * np.sin(np.pi * a * sr) * np.sin(np.pi * b * sz)
    return np.where(inside, f, 0.0)


def _zero_on_h_pins(grid: Grid) -> np.ndarray:
    tag = grid.tag
    return (tag == BOUNDARY_H) | (tag == CORNER_CONVEX) | (tag == CORNER_REENTRANT)


def _run_multistart(
    grid: Grid,
    quot: _Quotient,
    name: str,
    seed: int,
    n_starts: int,
    include_constant_start: bool,
) -> ConstantEstimate:
    rng = np.random.default_rng(seed)
    best = None
    m = grid.m
    starts = []
    if include_constant_start:
        starts.append(np.where(grid.active, 1.0, 0.0))
    for s in range(n_starts):
        starts.append(_fourier_start(grid, rng, s % m))
    for idx, x0 in enumerate(starts):
        x, q, it, stat = quot.maximize_from(x0, max_iters=30, cg_tol=1e-6)
        if x is None:
            continue
        if best is None or q > best[1]:
            best = (x, q, it, stat, idx)
    if best is None:
        raise NumericError(f"all {len(starts)} starts failed for {name}")
    x, q, it, stat, _ = best
    if stat > 1e-7:  # polish the winner to first-order stationarity
        x, q, it2, stat = quot.maximize_from(x, max_iters=400, cg_tol=1e-10)
        it += it2
    value = sqrt(q) if name == "sobolev_s0" else q
    return ConstantEstimate(
        name=name,
        m=grid.m,
        beta=grid.beta,
        refinement=grid.p,
        value=value,
        maximizer=x,
        iterations=it,
        stationarity=stat,
        seed=seed,
        n_starts=len(starts),
    )


def estimate_sobolev_s0(
    grid: Grid,
    constraint: str = "zero_on_H",
    seed: int = 0,
    n_starts: int = 20,
    support_rect: int | None = None,
) -> ConstantEstimate:
    """Lower bound for s0 in |f|_6 <= s0 |grad f|_2 over the constrained class."""
    if constraint not in ("zero_on_H", "zero_column_mean"):
        raise ParameterError(f"unknown constraint {constraint!r}")
    pins = (
        _zero_on_h_pins(grid)
        if constraint == "zero_on_H"
        else np.zeros(grid.shape, dtype=bool)
    )
    support = _support_mask(grid, support_rect)
    quot = _Quotient(
        grid, 6.0, c0_weight=False, pinned=pins,
        column_mean=(constraint == "zero_column_mean"), support=support,
    )
    return _run_multistart(grid, quot, "sobolev_s0", seed, n_starts, False)


def estimate_weighted_sobolev_Cs(
    grid: Grid,
    seed: int = 0,
    n_starts: int = 20,
    support_rect: int | None = None,
) -> ConstantEstimate:
    """Lower bound for C_s in |f|_{13/5}^2 <= C_s int(|grad f|^2 + f^2/r^2)."""
    support = _support_mask(grid, support_rect)
    quot = _Quotient(
        grid, 13.0 / 5.0, c0_weight=True,
        pinned=np.zeros(grid.shape, dtype=bool), column_mean=False, support=support,
    )
    return _run_multistart(grid, quot, "weighted_sobolev_Cs", seed, n_starts, True)


def _support_mask(grid: Grid, rect_idx: int | None) -> np.ndarray | None:
    if rect_idx is None:
        return None
    rect = grid.domain.rects[rect_idx]
    h = float(grid.snapped_heights[rect_idx])
    rr, zz = np.meshgrid(grid.r, grid.z, indexing="ij")
    return (
        (rr >= rect.r_lo - 1e-12)
        & (rr <= rect.r_hi + 1e-12)
        & (zz <= h + 1e-12)
        & grid.active
    )


def evaluate_estimate(grid: Grid, est: ConstantEstimate) -> float:
    """Re-evaluate the stored maximizer's quotient (reproducibility check)."""
    if est.name == "sobolev_s0":
        pins = np.zeros(grid.shape, dtype=bool)
        quot = _Quotient(grid, 6.0, False, pins, False, None)
        return sqrt(quot.quotient(est.maximizer))
    quot = _Quotient(grid, 13.0 / 5.0, True, np.zeros(grid.shape, bool), False, None)
    return quot.quotient(est.maximizer)
