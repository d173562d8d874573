"""Grids, Gaussian kernels, convolution weights, and tail regressions.

All convolutions in the solver act on piecewise-linear interpolants of nodal
values and are integrated exactly against the Gaussian kernel, so a single
dense weight matrix per grid turns every ``q``-convolution into a mat-vec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import special
from scipy.interpolate import PchipInterpolator

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

Extrapolation = Literal["clamp", "linear", "asymptote"]


# --------------------------------------------------------------------------
# Kernels
# --------------------------------------------------------------------------


def gaussian_density(sigma, u):
    """Density of N(0, sigma^2) at ``u``."""
    if np.any(np.asarray(sigma) <= 0):
        raise ValueError("sigma must be positive")
    u = np.asarray(u, dtype=float) / sigma
    out = INV_SQRT_2PI * np.exp(-0.5 * u * u) / sigma
    return out if out.ndim else float(out)


def norm_cdf_diff(a, b):
    """P(a < Z < b) for standard Z, accurate in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    upper = special.ndtr(-a) - special.ndtr(-b)
    lower = special.ndtr(b) - special.ndtr(a)
    return np.where(a > 0, upper, lower)


def averaged_kernel(sigma, x, z):
    """Return (1/x) * int_0^x q(sigma, y - z) dy, or q(sigma, z) at x = 0."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    x, z = np.broadcast_arrays(x, z)
    out = np.empty(x.shape)
    small = np.abs(x) < 1e-12 * sigma
    out[small] = gaussian_density(sigma, z[small])
    xs, zs = x[~small], z[~small]
    lo = np.minimum(0.0, xs)
    hi = np.maximum(0.0, xs)
    out[~small] = norm_cdf_diff((lo - zs) / sigma, (hi - zs) / sigma) / np.abs(xs)
    return out if out.ndim else float(out)


def hermite_rule(n: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E[f(Z)], Z ~ N(0, 1)."""
    t, w = np.polynomial.hermite.hermgauss(n)
    return t * SQRT2, w / math.sqrt(math.pi)


def jacobi_rule(power: int, n: int = 40) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights on [0, 1] for int_0^1 f(y) y^power dy."""
    # Gauss-Jacobi on [-1, 1] with weight (1 - t)^0 (1 + t)^power, y = (1 + t)/2
    t, w = special.roots_jacobi(n, 0.0, float(power))
    return 0.5 * (t + 1.0), w / 2.0 ** (power + 1)


# --------------------------------------------------------------------------
# Grid
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GridParams:
    core_halfwidth_sigmas: float = 12.0
    core_step_sigmas: float = 0.02
    tail_ratio: float = 1.05
    tail_max_sigmas: float = 1.0e4
    hermite_nodes: int = 64


@dataclass(frozen=True, eq=False)
class Grid:
    """Symmetric node set: uniform core plus geometric tails."""

    nodes: np.ndarray
    core_step: float
    sigma: float = 1.0
    core_halfwidth: float = 12.0

    @classmethod
    def build(cls, params: GridParams = GridParams(), sigma: float = 1.0) -> "Grid":
        h = params.core_step_sigmas
        n_core = int(round(params.core_halfwidth_sigmas / h))
        core = np.arange(0, n_core + 1) * h
        r = params.tail_ratio
        x_max = params.tail_max_sigmas
        tail = []
        x, step = core[-1], h
        while x_max > x * (1 + 1e-12):
            # step grows geometrically until the node spacing itself is geometric
            step = max(min(step * r, (r - 1.0) * x), h)
            x += step
            if x >= x_max or x_max - x < 0.5 * step:
                x = x_max
            tail.append(x)
        half = np.concatenate([core, np.array(tail)])
        nodes = np.concatenate([-half[:0:-1], half]) * sigma
        return cls(nodes=nodes, core_step=h * sigma, sigma=sigma,
                   core_halfwidth=core[-1] * sigma)

    @property
    def zero_index(self) -> int:
        return int(np.searchsorted(self.nodes, 0.0))

    @property
    def core_mask(self) -> np.ndarray:
        return np.abs(self.nodes) <= self.core_halfwidth * (1 + 1e-12)

    def scaled(self, factor: float) -> "Grid":
        return Grid(nodes=self.nodes * factor, core_step=self.core_step * factor,
                    sigma=self.sigma * factor, core_halfwidth=self.core_halfwidth * factor)

    def __len__(self) -> int:
        return len(self.nodes)


# --------------------------------------------------------------------------
# Grid functions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TailLaw:
    """Fitted asymptote ``y ~ a + b * T(|x|)`` on one side of the grid."""

    kind: Literal["power", "log"]
    exponent: float
    coef: float
    offset: float = 0.0

    def __call__(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        if self.kind == "power":
            return self.offset + self.coef * ax ** self.exponent
        return self.offset + self.coef * np.log(ax) ** self.exponent


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Nodal values on a grid with monotone-cubic interpolation."""

    grid: Grid
    values: np.ndarray
    extrapolation_hi: Extrapolation = "clamp"
    extrapolation_lo: Extrapolation = "clamp"
    monotone: bool = False
    tail_hi: TailLaw | None = None
    tail_lo: TailLaw | None = None
    _interp: PchipInterpolator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.nodes.shape:
            raise ValueError("values must align with grid nodes")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function values must be finite")
        object.__setattr__(self, "values", vals)
        for side, rule, law in (("hi", self.extrapolation_hi, self.tail_hi),
                                ("lo", self.extrapolation_lo, self.tail_lo)):
            if rule == "asymptote" and law is None:
                raise ValueError(f"asymptote extrapolation on {side} side needs a fitted TailLaw")

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self._interp is None:
            object.__setattr__(self, "_interp", PchipInterpolator(self.nodes, self.values,
                                                                  extrapolate=False))
        out = np.asarray(self._interp(np.clip(x, self.nodes[0], self.nodes[-1])), dtype=float)
        hi = x > self.nodes[-1]
        lo = x < self.nodes[0]
        if np.any(hi):
            out[hi] = self._extrapolate(x[hi], "hi")
        if np.any(lo):
            out[lo] = self._extrapolate(x[lo], "lo")
        return out if out.ndim else float(out)

    def _extrapolate(self, x, side):
        nodes, vals = self.nodes, self.values
        if side == "hi":
            rule, law, i0, i1 = self.extrapolation_hi, self.tail_hi, -1, -2
        else:
            rule, law, i0, i1 = self.extrapolation_lo, self.tail_lo, 0, 1
        if rule == "clamp":
            return np.full_like(x, vals[i0])
        if rule == "linear":
            slope = (vals[i0] - vals[i1]) / (nodes[i0] - nodes[i1])
            return vals[i0] + slope * (x - nodes[i0])
        # anchor the fitted law to the last node so the extension is continuous
        return vals[i0] + law(x) - law(nodes[i0])

    def with_values(self, values, **kw) -> "GridFunction":
        opts = dict(extrapolation_hi=self.extrapolation_hi, extrapolation_lo=self.extrapolation_lo,
                    monotone=self.monotone, tail_hi=self.tail_hi, tail_lo=self.tail_lo)
        opts.update(kw)
        return GridFunction(self.grid, np.asarray(values, dtype=float), **opts)

    def is_nondecreasing(self, slack: float = 0.0) -> bool:
        return bool(np.all(np.diff(self.values) >= -slack))


# --------------------------------------------------------------------------
# Convolution weights
# --------------------------------------------------------------------------


def _cell_weights(x, a, b, sigma):
    """Weights of the left/right hat functions of cell [a, b] against q(sigma, x - z)."""
    A = (a - x) / sigma
    B = (b - x) / sigma
    i0 = norm_cdf_diff(A, B)
    # int (z - x) q dz over the cell
    i1 = sigma * INV_SQRT_2PI * (np.exp(-0.5 * A * A) - np.exp(-0.5 * B * B))
    width = b - a
    w_right = (i1 + (x - a) * i0) / width
    w_left = i0 - w_right
    return w_left, w_right


def convolution_matrix(nodes: np.ndarray, sigma: float, points: np.ndarray | None = None,
                       extrapolation: Extrapolation = "clamp", split_at: float | None = None):
    """Exact Gaussian convolution of the piecewise-linear interpolant.

    Returns ``W`` with ``(W @ g)[i] = int q(sigma, x_i - z) g_lin(z) dz``.  With
    ``split_at`` set to a node value, returns ``(W_left, W_right)`` integrating
    over ``z <= split_at`` and ``z >= split_at`` respectively, so that functions
    with a jump at that node can be convolved from one-sided values.
    """
    nodes = np.asarray(nodes, dtype=float)
    x = nodes if points is None else np.asarray(points, dtype=float)
    n = len(nodes)
    X = x[:, None]
    a, b = nodes[:-1][None, :], nodes[1:][None, :]
    wl, wr = _cell_weights(X, a, b, sigma)
    # right-end extrapolation mass
    tail_hi = special.ndtr((x - nodes[-1]) / sigma)
    tail_lo = special.ndtr((nodes[0] - x) / sigma)

    def assemble(cells: slice, with_lo: bool, with_hi: bool):
        W = np.zeros((len(x), n))
        idx = np.arange(n - 1)[cells]
        np.add.at(W.T, idx, wl[:, cells].T)
        np.add.at(W.T, idx + 1, wr[:, cells].T)
        if with_hi:
            _add_extrapolation(W, x, nodes, sigma, tail_hi, extrapolation, side="hi")
        if with_lo:
            _add_extrapolation(W, x, nodes, sigma, tail_lo, extrapolation, side="lo")
        return W

    if split_at is None:
        return assemble(slice(None), True, True)
    k = int(np.searchsorted(nodes, split_at))
    if k >= n or nodes[k] != split_at:
        raise ValueError("split point must be a grid node")
    return assemble(slice(0, k), True, False), assemble(slice(k, None), False, True)


def _add_extrapolation(W, x, nodes, sigma, mass, rule, side):
    if rule == "asymptote":
        rule = "clamp"  # matrices are linear; asymptote tails are added by the caller
    if side == "hi":
        i0, i1 = -1, -2
        # int_{L}^{inf} (z - L) q(x - z) dz
        d = (x - nodes[-1]) / sigma
        first_moment = sigma * (INV_SQRT_2PI * np.exp(-0.5 * d * d) + d * special.ndtr(d))
    else:
        i0, i1 = 0, 1
        d = (nodes[0] - x) / sigma
        first_moment = -sigma * (INV_SQRT_2PI * np.exp(-0.5 * d * d) + d * special.ndtr(d))
    W[:, i0] += mass
    if rule == "linear":
        h = nodes[i0] - nodes[i1]
        W[:, i0] += first_moment / h
        W[:, i1] -= first_moment / h


def convolve(g: GridFunction, sigma: float, x, method: Literal["exact", "hermite"] = "exact",
             n_nodes: int = 64, jump_at_zero: tuple[float, float] | None = None):
    """int q(sigma, x - z) g(z) dz.

    ``method="exact"`` integrates the piecewise-linear interpolant of ``g`` in
    closed form (with the declared extrapolation outside the grid);
    ``method="hermite"`` applies an ``n_nodes`` Gauss-Hermite rule to the
    monotone cubic interpolant.  ``jump_at_zero=(g(0-), g(0+))`` declares a
    discontinuity at the origin (exact method only).
    """
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if method == "hermite":
        t, w = hermite_rule(n_nodes)
        out = g(x[:, None] + sigma * t[None, :]) @ w
    else:
        for rule, law in ((g.extrapolation_hi, g.tail_hi), (g.extrapolation_lo, g.tail_lo)):
            if rule == "asymptote" and law is None:
                raise ValueError("asymptote extrapolation requires a fitted TailLaw")
        ext = "linear" if "linear" in (g.extrapolation_hi, g.extrapolation_lo) else "clamp"
        if jump_at_zero is None:
            W = convolution_matrix(g.nodes, sigma, x, extrapolation=ext)
            out = W @ g.values
        else:
            WL, WR = convolution_matrix(g.nodes, sigma, x, extrapolation=ext, split_at=0.0)
            k = g.grid.zero_index
            left, right = g.values.copy(), g.values.copy()
            left[k], right[k] = jump_at_zero
            out = WL @ left + WR @ right
    return float(out[0]) if scalar else out


# --------------------------------------------------------------------------
# Averages
# --------------------------------------------------------------------------


def cumulative_average_nodes(nodes: np.ndarray, c: np.ndarray) -> np.ndarray:
    """(1/x) int_0^x c(y) dy at every node by cumulative trapezoid from the 0 node.

    ``c`` may carry trailing axes (e.g. matrix columns); averaging runs along axis 0.
    """
    nodes = np.asarray(nodes, dtype=float)
    c = np.asarray(c, dtype=float)
    k = int(np.searchsorted(nodes, 0.0))
    if nodes[k] != 0.0:
        raise ValueError("grid must contain the origin")
    col = (slice(None),) + (None,) * (c.ndim - 1)
    out = np.empty_like(c)
    out[k] = c[k]
    right = np.cumsum(0.5 * (c[k + 1:] + c[k:-1]) * np.diff(nodes[k:])[col], axis=0)
    out[k + 1:] = right / nodes[k + 1:][col]
    left = np.cumsum(0.5 * (c[k - 1::-1] + c[k:0:-1]) * -np.diff(nodes[k::-1])[col], axis=0)
    out[k - 1::-1] = left / -nodes[k - 1::-1][col]
    return out


def cumulative_average(c: GridFunction, x) -> float | np.ndarray:
    """(1/x) int_0^x c(y) dy for the piecewise-linear curve through the nodes of ``c``."""
    nodes = c.nodes
    avg = cumulative_average_nodes(nodes, c.values)
    integral = avg * nodes
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(xs)
    for i, xv in enumerate(xs):
        if xv == 0.0:
            out[i] = c(0.0)
            continue
        xc = np.clip(xv, nodes[0], nodes[-1])
        j = int(np.clip(np.searchsorted(nodes, xc), 1, len(nodes) - 1))
        a, b = nodes[j - 1], nodes[j]
        ca, cb = c.values[j - 1], c.values[j]
        cx = ca + (cb - ca) * (xc - a) / (b - a)
        total = integral[j - 1] + 0.5 * (ca + cx) * (xc - a)
        if xv != xc:  # beyond the grid: extend with the clamped end value
            total += c.values[-1 if xv > 0 else 0] * (xv - xc)
        out[i] = total / xv
    return float(out[0]) if np.ndim(x) == 0 else out


# --------------------------------------------------------------------------
# Tail regression
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TailFit:
    slope: float
    stderr: float
    intercept: float
    n_points: int


def fit_tail_exponent(xs, ys, window: float | tuple[float, float] = 1.0,
                      mode: Literal["loglog", "logloglog"] = "loglog",
                      downweight_last: int = 0, min_points: int = 8) -> TailFit:
    """Least-squares slope of log y against log x (or log log x) on a tail window.

    ``window`` is either a number of decades measured back from ``max(xs)`` or an
    explicit ``(lo, hi)`` x-range.  ``downweight_last`` gives the last few points
    a tenth of the weight.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if np.any(ys <= 0):
        raise ValueError("ys must be positive")
    if isinstance(window, tuple):
        lo, hi = window
    else:
        hi = xs.max()
        lo = hi / 10.0 ** window
    sel = (xs >= lo) & (xs <= hi) & (xs > 0)
    if mode == "logloglog":
        sel &= xs > math.e
    if sel.sum() < min_points:
        raise ValueError(f"only {int(sel.sum())} points in fit window, need {min_points}")
    x = np.log(xs[sel])
    if mode == "logloglog":
        x = np.log(x)
    y = np.log(ys[sel])
    w = np.ones_like(x)
    if downweight_last:
        order = np.argsort(xs[sel])
        w[order[-downweight_last:]] = 0.1
    W = np.sqrt(w)
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A * W[:, None], y * W, rcond=None)
    resid = (y - A @ coef) * W
    dof = max(len(x) - 2, 1)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.pinv((A * W[:, None]).T @ (A * W[:, None]))
    return TailFit(slope=float(coef[0]), stderr=float(math.sqrt(max(cov[0, 0], 0.0))),
                   intercept=float(coef[1]), n_points=int(sel.sum()))
