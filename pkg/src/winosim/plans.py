"""Winograd convolution plans and tile-level transforms.

A plan F(m, r) computes m outputs of an r-tap correlation per tile with
l = m + r - 1 element-wise multiplications instead of m * r.  It carries
three transform matrices:

    At : (m, l)   output (inverse) transform
    G  : (l, r)   filter transform
    Bt : (l, l)   input transform

and satisfies the tile identities

    1-D:  y = At @ ((G @ g) * (Bt @ d))
    2-D:  Y = At @ ((G @ g @ G.T) * (Bt @ d @ Bt.T)) @ At.T

where d is an input tile of side l, g a filter tile of side r, and y/Y the
m valid correlation outputs.  All arithmetic is double precision and uses
the correlation convention (no kernel flip).

The (2, 3) plan is the classic hand-derived one with entries in
{0, +-1, +-1/2}.  Other plans are built by Toom-Cook interpolation at the
fixed point sequence 0, 1, -1, 2, -2, ... so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "OpCounters",
    "WinogradPlan",
    "make_plan",
    "winograd_1d",
    "direct_correlate_1d",
    "transform_input_tile",
    "transform_filter",
    "inverse_transform",
]


@dataclass
class OpCounters:
    """Tallies of logical scalar work performed by the numeric kernels.

    Counts refer to the unpadded problem: zero-padding added for the block
    layout is never counted.
    """

    multiplies: int = 0
    matmul_additions: int = 0
    inverse_transforms: int = 0

    def reset(self) -> None:
        self.multiplies = 0
        self.matmul_additions = 0
        self.inverse_transforms = 0


@dataclass
class WinogradPlan:
    """F(m, r) transform matrices.  Treat instances as immutable."""

    m: int
    r: int
    l: int
    At: np.ndarray
    G: np.ndarray
    Bt: np.ndarray

    def __post_init__(self):
        assert self.l == self.m + self.r - 1
        assert self.At.shape == (self.m, self.l)
        assert self.G.shape == (self.l, self.r)
        assert self.Bt.shape == (self.l, self.l)


# F(2, 3): the standard minimal 1-D algorithm written out as matrices.
_AT_23 = np.array(
    [
        [1.0, 1.0, 1.0, 0.0],
        [0.0, 1.0, -1.0, -1.0],
    ]
)
_G_23 = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.5, 0.5, 0.5],
        [0.5, -0.5, 0.5],
        [0.0, 0.0, 1.0],
    ]
)
_BT_23 = np.array(
    [
        [1.0, 0.0, -1.0, 0.0],
        [0.0, 1.0, 1.0, 0.0],
        [0.0, -1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0, -1.0],
    ]
)


def _interpolation_points(n: int) -> np.ndarray:
    """Deterministic point sequence 0, 1, -1, 2, -2, 3, -3, ..."""
    pts = [0.0]
    k = 1
    while len(pts) < n:
        pts.append(float(k))
        if len(pts) < n:
            pts.append(float(-k))
        k += 1
    return np.array(pts[:n])


def _toom_cook_matrices(m: int, r: int):
    # Evaluation at l-1 finite points plus the point at infinity; the
    # correlation form is the transpose of the polynomial-product algorithm,
    # which lands the Lagrange interpolation weights in Bt.
    l = m + r - 1
    pts = _interpolation_points(l - 1)

    def vand(width):
        v = np.zeros((l, width))
        v[: l - 1] = pts[:, None] ** np.arange(width)[None, :]
        v[l - 1, width - 1] = 1.0
        return v

    va = vand(m)
    vg = vand(r)
    vc = vand(l)
    bt = np.linalg.inv(vc.T)
    return va.T.copy(), vg, bt


def _verify_plan(plan: WinogradPlan, tol: float = 1e-9) -> float:
    """Max relative residual of the 1-D identity on a deterministic probe set."""
    rng = np.random.default_rng(1234)
    worst = 0.0
    for _ in range(16):
        d = rng.uniform(-1.0, 1.0, plan.l)
        g = rng.uniform(-1.0, 1.0, plan.r)
        got = plan.At @ ((plan.G @ g) * (plan.Bt @ d))
        want = direct_correlate_1d(d, g)
        scale = max(1.0, float(np.max(np.abs(want))))
        worst = max(worst, float(np.max(np.abs(got - want))) / scale)
    return worst


def make_plan(m: int, r: int) -> WinogradPlan:
    """Build an F(m, r) plan.

    Raises ValueError for m or r below 2, and for plans whose interpolation
    system is too ill-conditioned to satisfy the correlation identity in
    double precision.
    """
    if m < 2 or r < 2:
        raise ValueError(f"F({m}, {r}) needs m >= 2 and r >= 2")
    l = m + r - 1
    if (m, r) == (2, 3):
        at, g, bt = _AT_23.copy(), _G_23.copy(), _BT_23.copy()
    else:
        try:
            at, g, bt = _toom_cook_matrices(m, r)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"F({m}, {r}) interpolation system is singular") from exc
    for a in (at, g, bt):
        a.setflags(write=False)
    plan = WinogradPlan(m=m, r=r, l=l, At=at, G=g, Bt=bt)
    residual = _verify_plan(plan)
    if residual > 1e-8:
        raise ValueError(
            f"F({m}, {r}) is numerically unusable at double precision "
            f"(probe residual {residual:.2e})"
        )
    return plan


def direct_correlate_1d(d, g, counters: OpCounters | None = None) -> np.ndarray:
    """Valid 1-D correlation oracle: y_i = sum_q d[i+q] * g[q]."""
    d = np.asarray(d, dtype=float)
    g = np.asarray(g, dtype=float)
    r = g.shape[0]
    m = d.shape[0] - r + 1
    if m < 1:
        raise ValueError("input shorter than filter")
    y = np.array([np.dot(d[i : i + r], g) for i in range(m)])
    if counters is not None:
        counters.multiplies += m * r
        counters.matmul_additions += m * (r - 1)
    return y


def winograd_1d(plan: WinogradPlan, d, g, counters: OpCounters | None = None) -> np.ndarray:
    """1-D Winograd correlation; uses exactly plan.l element-wise multiplies."""
    d = np.asarray(d, dtype=float)
    g = np.asarray(g, dtype=float)
    if d.shape != (plan.l,):
        raise ValueError(f"input length {d.shape} != l={plan.l}")
    if g.shape != (plan.r,):
        raise ValueError(f"filter length {g.shape} != r={plan.r}")
    prod = (plan.G @ g) * (plan.Bt @ d)
    if counters is not None:
        counters.multiplies += plan.l
    return plan.At @ prod


def transform_input_tile(plan: WinogradPlan, d) -> np.ndarray:
    """Bt @ d @ Bt.T for a single l-by-l input tile."""
    d = np.asarray(d, dtype=float)
    if d.shape != (plan.l, plan.l):
        raise ValueError(f"input tile shape {d.shape} != ({plan.l}, {plan.l})")
    return plan.Bt @ d @ plan.Bt.T


def transform_filter(plan: WinogradPlan, g) -> np.ndarray:
    """G @ g @ G.T for a single r-by-r filter tile."""
    g = np.asarray(g, dtype=float)
    if g.shape != (plan.r, plan.r):
        raise ValueError(f"filter tile shape {g.shape} != ({plan.r}, {plan.r})")
    return plan.G @ g @ plan.G.T


def inverse_transform(plan: WinogradPlan, M, counters: OpCounters | None = None) -> np.ndarray:
    """At @ M @ At.T, reducing an l-by-l product tile to the m-by-m output."""
    M = np.asarray(M, dtype=float)
    if M.shape != (plan.l, plan.l):
        raise ValueError(f"product tile shape {M.shape} != ({plan.l}, {plan.l})")
    if counters is not None:
        counters.inverse_transforms += 1
    return plan.At @ M @ plan.At.T
