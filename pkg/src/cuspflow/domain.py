"""Staircase cusp domains and their masked finite-difference grids.

The domain with m steps is a union of dyadic rectangles in the (r, z)
half-plane,

    S_j = [2^-j, 2^-(j-1)) x (0, 2^(-beta*(j-1))),   j = 1..m,

whose height/width ratio decays like 2^(-(beta-1)(j-1)) for beta > 1, so the
steps flatten out while marching toward the axis.  The boundary splits into
horizontal segments (family H) and vertical segments (family V); the slip
conditions attached to each family are

    H:  dz v_r = dz v_theta = 0,  v_3 = 0
    V:  dr v_theta = v_theta / r,  dr v_3 = 0,  v_r = 0.

Grids are tensor lattices with square cells delta = 2^-(m+p); every dyadic
rectangle edge lands exactly on a grid line, and the non-dyadic step heights
are snapped to the nearest multiple of delta.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ResourceError

# node tag codes
EXTERIOR = 0
INTERIOR = 1
BOUNDARY_H = 2
BOUNDARY_V = 3
CORNER_CONVEX = 4
CORNER_REENTRANT = 5

BETA_REFERENCE_MAX = 1.1  # the range the analysis covers
BETA_HARD_MAX = 1.2

DEFAULT_NODE_BUDGET = 6_000_000


@dataclass(frozen=True)
class Rect:
    """One dyadic step rectangle [r_lo, r_hi) x (0, height)."""

    r_lo: float
    r_hi: float
    height: float

    @property
    def width(self) -> float:
        return self.r_hi - self.r_lo


@dataclass(frozen=True)
class CornerPoint:
    r: float
    z: float
    kind: str  # 'convex' (pi/2) or 'nonconvex' (3*pi/2, re-entrant)


@dataclass(frozen=True)
class BoundarySegment:
    """Maximal straight boundary piece, oriented along the boundary walk.

    family 'H' carries the horizontal slip conditions, 'V' the vertical ones.
    """

    orientation: str  # 'horizontal' | 'vertical'
    family: str  # 'H' | 'V'
    r0: float
    z0: float
    r1: float
    z1: float
    side: str  # 'bottom' | 'right-wall' | 'top-of-step-j' | 'left-wall-j'


@dataclass(frozen=True)
class StaircaseDomain:
    m: int
    beta: float
    rects: tuple[Rect, ...]
    corners: tuple[CornerPoint, ...]
    segments: tuple[BoundarySegment, ...]
    beta_warning: bool = False

    def area(self) -> float:
        """Plain dr*dz area, sum over the rectangles."""
        return sum(rc.width * rc.height for rc in self.rects)

    def to_json_dict(self) -> dict:
        return {
            "m": self.m,
            "beta": self.beta,
            "beta_warning": self.beta_warning,
            "rects": [[rc.r_lo, rc.r_hi, rc.height] for rc in self.rects],
            "corners": [[c.r, c.z, c.kind] for c in self.corners],
        }


def build_domain(m: int, beta: float) -> StaircaseDomain:
    """Construct the m-step staircase domain for exponent beta.

    beta must lie in (1.0, 1.2]; values above 1.1 are accepted but flagged,
    since they sit outside the range the estimates are stated for.
    """
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise ParameterError(f"m must be a positive integer, got {m!r}")
    beta = float(beta)
    if not (1.0 < beta <= BETA_HARD_MAX):
        raise ParameterError(f"beta must lie in (1.0, {BETA_HARD_MAX}], got {beta}")
    beta_warning = beta > BETA_REFERENCE_MAX
    if beta_warning:
        warnings.warn(
            f"beta={beta} is beyond the reference range (1, {BETA_REFERENCE_MAX}]",
            stacklevel=2,
        )

    rects = tuple(
        Rect(r_lo=2.0 ** -(j + 1), r_hi=2.0**-j, height=2.0 ** (-beta * j))
        for j in range(m)
    )

    corners, segments = _boundary_walk(m, [rc.height for rc in rects])
    return StaircaseDomain(
        m=m,
        beta=beta,
        rects=rects,
        corners=corners,
        segments=segments,
        beta_warning=beta_warning,
    )


def _boundary_walk(m: int, heights: list[float]) -> tuple[tuple, tuple]:
    """Walk the boundary polygon counterclockwise and classify it.

    heights[j-1] is the height of step j; the walk starts at the bottom-left
    corner (2^-m, 0).
    """
    corners: list[CornerPoint] = []
    segments: list[BoundarySegment] = []
    r_left = 2.0**-m

    # bottom, then right wall
    segments.append(BoundarySegment("horizontal", "H", r_left, 0.0, 1.0, 0.0, "bottom"))
    corners.append(CornerPoint(1.0, 0.0, "convex"))
    segments.append(BoundarySegment("vertical", "V", 1.0, 0.0, 1.0, heights[0], "right-wall"))
    corners.append(CornerPoint(1.0, heights[0], "convex"))

    # staircase: top of step j, then the exposed part of its left wall
    for j in range(1, m + 1):
        h_j = heights[j - 1]
        r_hi = 2.0 ** -(j - 1)
        r_lo = 2.0**-j
        segments.append(
            BoundarySegment("horizontal", "H", r_hi, h_j, r_lo, h_j, f"top-of-step-{j}")
        )
        if j < m:
            h_next = heights[j]
            corners.append(CornerPoint(r_lo, h_j, "convex"))
            segments.append(
                BoundarySegment("vertical", "V", r_lo, h_j, r_lo, h_next, f"left-wall-{j}")
            )
            corners.append(CornerPoint(r_lo, h_next, "nonconvex"))
        else:
            corners.append(CornerPoint(r_lo, h_j, "convex"))
            segments.append(
                BoundarySegment("vertical", "V", r_lo, h_j, r_lo, 0.0, f"left-wall-{m}")
            )
            corners.append(CornerPoint(r_lo, 0.0, "convex"))

    return tuple(corners), tuple(segments)


def thinness_ratios(domain: StaircaseDomain) -> list[float]:
    """height/width ratio h_j / r_j = 2^(j - beta*(j-1)) per step, exact heights."""
    return [
        2.0 ** ((j + 1) - domain.beta * j) for j in range(domain.m)
    ]


@dataclass
class Grid:
    """Masked tensor lattice over the bounding box of a staircase domain.

    Index convention: arrays are (nr, nz), entry [i, k] sits at
    (r[i], z[k]).  `tag` holds the node classification codes above;
    `qhat` is the per-node trapezoid weight (product of 1 or 1/2 per
    direction, computed per contiguous active run), so that the quadrature
    weight of a node for the measure r^(1+k) dr dz is
    qhat * delta^2 * r^(1+k).
    """

    domain: StaircaseDomain
    p: int
    delta: float
    r: np.ndarray  # (nr,)
    z: np.ndarray  # (nz,)
    active: np.ndarray  # bool (nr, nz)
    tag: np.ndarray  # uint8 (nr, nz)
    qhat: np.ndarray  # float (nr, nz)
    snapped_heights: np.ndarray  # (m,)
    col_height_idx: np.ndarray = field(repr=False, default=None)  # (nr,) top active k

    @property
    def m(self) -> int:
        return self.domain.m

    @property
    def beta(self) -> float:
        return self.domain.beta

    @property
    def shape(self) -> tuple[int, int]:
        return self.active.shape

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    @property
    def boundary(self) -> np.ndarray:
        """Active nodes on the boundary polygon, corners included."""
        return self.tag >= BOUNDARY_H

    def boundary_mask(self, include_reentrant: bool = True) -> np.ndarray:
        mask = (self.tag == BOUNDARY_H) | (self.tag == BOUNDARY_V) | (
            self.tag == CORNER_CONVEX
        )
        if include_reentrant:
            mask |= self.tag == CORNER_REENTRANT
        return mask

    @property
    def interior(self) -> np.ndarray:
        return self.tag == INTERIOR

    def rr(self) -> np.ndarray:
        """Radius broadcast to the full (nr, nz) lattice."""
        return np.broadcast_to(self.r[:, None], self.shape)

    def quad_weights(self, weight_power: int = 0) -> np.ndarray:
        """Quadrature weight per node for the measure r^(1+weight_power) dr dz."""
        w = self.qhat * self.delta**2 * self.r[:, None] ** (1 + weight_power)
        return np.where(self.active, w, 0.0)

    def to_json_dict(self) -> dict:
        return {
            "domain": self.domain.to_json_dict(),
            "p": self.p,
            "delta": self.delta,
            "nr": int(self.r.size),
            "nz": int(self.z.size),
            "snapped_heights": [float(h) for h in self.snapped_heights],
            "active_rle": _rle_encode(self.active.ravel()),
        }


def _rle_encode(flat_bool: np.ndarray) -> list[int]:
    """Run lengths of the flattened mask, starting with a False run (maybe 0)."""
    runs = []
    current = False
    count = 0
    for v in flat_bool:
        if bool(v) == current:
            count += 1
        else:
            runs.append(count)
            current = bool(v)
            count = 1
    runs.append(count)
    return runs


def generate_grid(
    domain: StaircaseDomain, p: int, node_budget: int = DEFAULT_NODE_BUDGET
) -> Grid:
    """Mesh the domain with square cells delta = 2^-(m+p).

    Step heights are snapped to the nearest multiple of delta (|error| <=
    delta/2); re-entrant corner nodes are tagged separately and treated like
    interior nodes by every stencil.
    """
    if not isinstance(p, (int, np.integer)) or p < 2:
        raise ParameterError(f"refinement p must be an integer >= 2, got {p!r}")
    m = domain.m
    delta = 2.0 ** -(m + p)
    nr = 2 ** (m + p) - 2**p + 1  # columns from r = 2^-m to r = 1
    nz = 2 ** (m + p) + 1  # rows from z = 0 to z = 1 (height of step 1)
    if nr * nz > node_budget:
        raise ResourceError(
            f"grid {nr}x{nz} exceeds the node budget of {node_budget} nodes"
        )

    r = 2.0**-m + delta * np.arange(nr)
    z = delta * np.arange(nz)

    snapped = np.array(
        [round(rc.height / delta) * delta for rc in domain.rects], dtype=float
    )
    if not np.all(np.diff(snapped) < 0):
        raise ParameterError(
            f"refinement p={p} too coarse: snapped step heights are not strictly "
            "decreasing"
        )
    ks = np.rint(snapped / delta).astype(int)  # top row index per step

    active = np.zeros((nr, nz), dtype=bool)
    for j in range(m):
        rc = domain.rects[j]
        i_lo = int(round((rc.r_lo - r[0]) / delta))
        i_hi = int(round((rc.r_hi - r[0]) / delta))
        active[i_lo : i_hi + 1, : ks[j] + 1] = True

    tag = _classify_nodes(m, nr, nz, delta, r, ks, active)
    qhat = _trapezoid_weights(active)
    col_height_idx = np.where(active.any(axis=1), active.shape[1] - 1 -
                              np.argmax(active[:, ::-1], axis=1), -1)

    return Grid(
        domain=domain,
        p=p,
        delta=delta,
        r=r,
        z=z,
        active=active,
        tag=tag,
        qhat=qhat,
        snapped_heights=snapped,
        col_height_idx=col_height_idx,
    )


def _classify_nodes(m, nr, nz, delta, r, ks, active):
    """Tag every lattice node from the snapped boundary polygon."""
    tag = np.zeros((nr, nz), dtype=np.uint8)
    tag[active] = INTERIOR

    # column index of each dyadic wall radius 2^-j, j = m..1 plus right wall
    wall_col = {j: int(round((2.0**-j - r[0]) / delta)) for j in range(0, m + 1)}

    # horizontal boundary: bottom row and the top rows of each step
    for j in range(m):
        i_lo = wall_col[min(j + 1, m)]
        i_hi = wall_col[j]
        tag[i_lo : i_hi + 1, ks[j]] = BOUNDARY_H
    tag[np.arange(nr), 0] = np.where(active[:, 0], BOUNDARY_H, EXTERIOR)

    # vertical boundary: right wall and the exposed left wall of each step
    tag[-1, 0 : ks[0] + 1] = BOUNDARY_V
    for j in range(1, m + 1):
        i = wall_col[j]
        k_top = ks[j - 1]
        k_bot = ks[j] if j < m else 0
        tag[i, k_bot : k_top + 1] = BOUNDARY_V

    # corners of the snapped polygon
    convex = [(wall_col[0], 0), (wall_col[0], ks[0]), (wall_col[m], 0)]
    for j in range(1, m + 1):
        convex.append((wall_col[j], ks[j - 1]))
    for i, k in convex:
        tag[i, k] = CORNER_CONVEX
    for j in range(1, m):  # re-entrant corner where step j+1 meets wall j
        tag[wall_col[j], ks[j]] = CORNER_REENTRANT

    tag[~active] = EXTERIOR
    return tag


def _trapezoid_weights(active: np.ndarray) -> np.ndarray:
    """Per-node composite-trapezoid factor: 1/2 at the ends of each active run."""
    qhat = np.zeros(active.shape, dtype=float)

    act = active.astype(float)
    t_r = np.zeros_like(qhat)
    t_z = np.zeros_like(qhat)
    pad_r = np.zeros((1, active.shape[1]))
    left = np.vstack([pad_r, act[:-1, :]])
    right = np.vstack([act[1:, :], pad_r])
    t_r[active] = 0.5 * (left[active] + right[active])
    pad_z = np.zeros((active.shape[0], 1))
    down = np.hstack([pad_z, act[:, :-1]])
    up = np.hstack([act[:, 1:], pad_z])
    t_z[active] = 0.5 * (down[active] + up[active])

    qhat[active] = t_r[active] * t_z[active]
    return qhat
