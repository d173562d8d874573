"""Signal distributions for the liquidation value V.

Each law exposes the tail functionals consumed by the equilibrium operator::

    pi_plus(y)  = P(V > y)          phi_plus(y)  = E[V; V > y]
    pi_minus(y) = P(V <= y)         phi_minus(y) = E[V; V <= y]

together with tail metadata used for asymptotic predictions.  Closed forms are
used wherever they exist; the logit-normal law is tabulated on its Gaussian
generator and the inverse-Gaussian/NIG laws fall back to adaptive quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np
from scipy import integrate, special, stats

Array = np.ndarray


class Side(str, Enum):
    upper = "upper"
    lower = "lower"


class Regime(str, Enum):
    power_law = "power_law"
    log_law = "log_law"
    unsupported = "unsupported"


@dataclass(frozen=True)
class TailSpec:
    side: Side
    psi_slope: float
    flatness_order: float = 0.0
    flatness_const: float = math.nan
    regime: Regime = Regime.unsupported
    bounded: bool = True
    note: str = ""


def _power_spec(side: Side, slope: float, bounded: bool) -> TailSpec:
    # n = 0 and 1/k = 1 - slope (bounded side) per the derivative identity
    k = 1.0 / (1.0 - slope) if bounded and slope < 1 else math.nan
    return TailSpec(side, slope, 0.0, k, Regime.power_law, bounded)


def _log_spec(side: Side, n: float, k: float, bounded: bool) -> TailSpec:
    return TailSpec(side, 1.0, n, k, Regime.log_law, bounded)


def _unsupported(side: Side, bounded: bool, slope: float = math.nan, note: str = "") -> TailSpec:
    return TailSpec(side, slope, math.nan, math.nan, Regime.unsupported, bounded, note)


@dataclass(frozen=True, eq=False)
class SignalDistribution:
    """Law of V with its four tail functionals.

    The callables operate on the *unshifted* base law; ``shift`` translates V.
    """

    family: str
    params: dict
    base_lo: float
    base_hi: float
    base_mean: float
    base_std: float
    _pi_plus: Callable[[Array], Array]
    _phi_plus: Callable[[Array], Array]
    _pi_minus: Callable[[Array], Array]
    _phi_minus: Callable[[Array], Array]
    _ppf: Callable[[Array], Array] | None = None
    base_atoms: tuple[tuple[float, float], ...] = ()
    tail_meta_hi: TailSpec | None = None
    tail_meta_lo: TailSpec | None = None
    shift: float = 0.0
    symmetric: bool = False
    heuristic: str = ""
    extra: dict = field(default_factory=dict)

    # -- support and moments -------------------------------------------------
    @property
    def support_lo(self) -> float:
        return self.base_lo + self.shift

    @property
    def support_hi(self) -> float:
        return self.base_hi + self.shift

    @property
    def mean(self) -> float:
        return self.base_mean + self.shift

    @property
    def std(self) -> float:
        return self.base_std

    @property
    def atoms(self) -> tuple[tuple[float, float], ...]:
        return tuple((a + self.shift, p) for a, p in self.base_atoms)

    @property
    def is_discrete(self) -> bool:
        return bool(self.base_atoms)

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.support_lo) and math.isfinite(self.support_hi)

    # -- functionals -----------------------------------------------------------
    def pi_plus(self, y):
        y = np.asarray(y, dtype=float) - self.shift
        return _out(self._pi_plus(y))

    def pi_minus(self, y):
        y = np.asarray(y, dtype=float) - self.shift
        return _out(self._pi_minus(y))

    def phi_plus(self, y):
        y = np.asarray(y, dtype=float) - self.shift
        return _out(self._phi_plus(y) + self.shift * self._pi_plus(y))

    def phi_minus(self, y):
        y = np.asarray(y, dtype=float) - self.shift
        return _out(self._phi_minus(y) + self.shift * self._pi_minus(y))

    def cdf(self, y):
        return self.pi_minus(y)

    def ppf(self, u):
        if self._ppf is None:
            raise NotImplementedError(f"{self.family} has no quantile function")
        return _out(np.asarray(self._ppf(np.asarray(u, dtype=float)), dtype=float) + self.shift)

    def tail_meta(self, side: Side | str) -> TailSpec | None:
        return self.tail_meta_hi if Side(side) is Side.upper else self.tail_meta_lo

    def shifted(self, shift: float) -> "SignalDistribution":
        return replace(self, shift=shift)

    def scaled(self, t: float) -> "SignalDistribution":
        """Law of t * V (self-similar families)."""
        if t <= 0:
            raise ValueError("scale must be positive")
        s = self.shift
        tails = {}
        for name, spec in (("tail_meta_hi", self.tail_meta_hi), ("tail_meta_lo", self.tail_meta_lo)):
            if spec is not None and spec.regime is Regime.log_law and spec.flatness_order > 0:
                # unbounded: (Psi - x) x^(n-1) -> 1/k; bounded: (Psi - x) ~ u^(n+1) / (k n), u = edge - x
                tn = t ** spec.flatness_order
                k = spec.flatness_const * tn if spec.bounded else spec.flatness_const / tn
                spec = replace(spec, flatness_const=k)
            tails[name] = spec
        return replace(
            self,
            params={**self.params, "scale_t": t * self.params.get("scale_t", 1.0)},
            base_lo=self.base_lo * t,
            base_hi=self.base_hi * t,
            base_mean=self.base_mean * t,
            base_std=self.base_std * t,
            _pi_plus=lambda y, f=self._pi_plus: f(y / t),
            _pi_minus=lambda y, f=self._pi_minus: f(y / t),
            _phi_plus=lambda y, f=self._phi_plus: t * f(y / t),
            _phi_minus=lambda y, f=self._phi_minus: t * f(y / t),
            _ppf=None if self._ppf is None else (lambda u, f=self._ppf: t * f(u)),
            base_atoms=tuple((a * t, p) for a, p in self.base_atoms),
            shift=s * t,
            **tails,
        )


def _out(a):
    a = np.asarray(a, dtype=float)
    return a if a.ndim else float(a)


# --------------------------------------------------------------------------
# Families
# --------------------------------------------------------------------------


def _discrete(family, atoms, probs, params):
    atoms = np.asarray(atoms, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if np.any(probs <= 0) or abs(probs.sum() - 1) > 1e-12:
        raise ValueError("atom probabilities must be positive and sum to one")
    order = np.argsort(atoms)
    atoms, probs = atoms[order], probs[order]
    mean = float(atoms @ probs)
    std = float(math.sqrt(max(probs @ (atoms - mean) ** 2, 0.0)))

    def above(y):  # indicator matrix V > y
        return (atoms[None, :] > np.atleast_1d(y).ravel()[:, None])

    def pip(y):
        return (above(y) @ probs).reshape(np.shape(y))

    def php(y):
        return (above(y) @ (probs * atoms)).reshape(np.shape(y))

    def pim(y):
        return ((~above(y)) @ probs).reshape(np.shape(y))

    def phm(y):
        return ((~above(y)) @ (probs * atoms)).reshape(np.shape(y))

    def ppf(u):
        cum = np.cumsum(probs)
        idx = np.searchsorted(cum, np.asarray(u) - 1e-15)
        return atoms[np.clip(idx, 0, len(atoms) - 1)]

    sym = bool(np.allclose(atoms, -atoms[::-1]) and np.allclose(probs, probs[::-1]))
    return SignalDistribution(
        family=family, params=params, base_lo=float(atoms[0]), base_hi=float(atoms[-1]),
        base_mean=mean, base_std=std, _pi_plus=pip, _phi_plus=php, _pi_minus=pim,
        _phi_minus=phm, _ppf=ppf, base_atoms=tuple(zip(atoms.tolist(), probs.tolist())),
        tail_meta_hi=_unsupported(Side.upper, True, note="discrete law"),
        tail_meta_lo=_unsupported(Side.lower, True, note="discrete law"),
        symmetric=sym,
    )


def _gaussian(mu: float, var: float):
    s = math.sqrt(var)

    def pip(y):
        return special.ndtr(-(y - mu) / s)

    def pim(y):
        return special.ndtr((y - mu) / s)

    def php(y):
        d = (y - mu) / s
        return mu * special.ndtr(-d) + s * stats.norm.pdf(d)

    def phm(y):
        d = (y - mu) / s
        return mu * special.ndtr(d) - s * stats.norm.pdf(d)

    return pip, php, pim, phm, lambda u: mu + s * special.ndtri(u)


_GL_T, _GL_W = np.polynomial.legendre.leggauss(12)


def _narrow_moments(a, b):
    """(int_a^b phi, int_a^b u phi) by Gauss-Legendre; accurate for narrow [a, b]."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    half = 0.5 * (b - a)
    u = (0.5 * (a + b))[..., None] + half[..., None] * _GL_T
    dens = np.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)
    m0 = half * (dens @ _GL_W)
    m1 = half * ((u * dens) @ _GL_W)
    return m0, m1


def _truncated_gaussian(var: float, M: float):
    s = math.sqrt(var)
    b = M / s
    Z = float(special.ndtr(b) - special.ndtr(-b))
    pdf_b = float(stats.norm.pdf(b))
    narrow = 0.25  # edge windows handled by quadrature to avoid cancellation

    def clipd(y):
        return np.clip(np.asarray(y, dtype=float) / s, -b, b)

    def upper_tail(d):
        # P(d < G < b) and E[G; d < G < b] for the standard Gaussian
        n0, n1 = _narrow_moments(d, np.full_like(d, b))
        w0 = np.where(d >= 0, special.ndtr(-d) - special.ndtr(-b), special.ndtr(b) - special.ndtr(d))
        w1 = stats.norm.pdf(d) - pdf_b
        near = b - d < narrow
        return np.where(near, n0, w0), np.where(near, n1, w1)

    def pip(y):
        return upper_tail(clipd(y))[0] / Z

    def php(y):
        return s * upper_tail(clipd(y))[1] / Z

    def pim(y):
        return upper_tail(-clipd(y))[0] / Z

    def phm(y):
        return -s * upper_tail(-clipd(y))[1] / Z

    def ppf(u):
        return s * stats.truncnorm.ppf(u, -b, b)

    return pip, php, pim, phm, ppf, Z


def _student(alpha: float, scale: float):
    t = stats.t(alpha)

    def pip(y):
        return t.sf(y / scale)

    def pim(y):
        return t.cdf(y / scale)

    def php(y):
        u = y / scale
        return scale * (alpha + u * u) / (alpha - 1.0) * t.pdf(u)

    def phm(y):
        return -php(y)

    return pip, php, pim, phm, lambda u: scale * t.ppf(u)


def _lognormal(var: float):
    s = math.sqrt(var)
    mu = -0.5 * var  # E[V] = 1

    def d_of(y):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(y > 0, (np.log(np.where(y > 0, y, 1.0)) - mu) / s, -np.inf)

    def pip(y):
        return special.ndtr(-d_of(y))

    def pim(y):
        return special.ndtr(d_of(y))

    def php(y):
        return special.ndtr(s - d_of(y))

    def phm(y):
        return special.ndtr(d_of(y) - s)

    return pip, php, pim, phm, lambda u: np.exp(mu + s * special.ndtri(u))


def _exponential(lam: float):
    def pip(y):
        return np.where(y > 0, np.exp(-lam * np.maximum(y, 0.0)), 1.0)

    def pim(y):
        return np.where(y > 0, -np.expm1(-lam * np.maximum(y, 0.0)), 0.0)

    def php(y):
        yy = np.clip(y, 0.0, np.finfo(float).max)
        return np.exp(-lam * yy) * (yy + 1.0 / lam)

    def phm(y):
        # E[V; V <= y] = P(2, lam y) / lam, no cancellation near 0
        return special.gammainc(2.0, lam * np.maximum(y, 0.0)) / lam

    return pip, php, pim, phm, lambda u: -np.log1p(-u) / lam


def _e2_scaled(z):
    """e^z E_2(z) for z > 0 without underflow."""
    z = np.asarray(z, dtype=float)
    small = z < 500.0
    zs = np.where(small, z, 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        exact = np.exp(zs) * special.expn(2, zs)
    zl = np.where(small, 1.0, z)
    inv = 1.0 / zl
    series = inv * (1 + inv * (-2 + inv * (6 + inv * (-24 + inv * (120 - 720 * inv)))))
    return np.where(small, exact, series)


def _squashed_laplace(var: float):
    """V = L / (Sigma + |L|), L standard Laplace: P(|V| > y) = exp(-Sigma y / (1 - y))."""

    def upper(y):
        # (P(V > y), E[V; V > y]) for 0 <= y <= 1
        y = np.clip(y, 0.0, 1.0)
        with np.errstate(divide="ignore"):
            a = np.where(y < 1, y / np.where(y < 1, 1 - y, 1.0), np.inf)
        tail = np.where(np.isfinite(a), 0.5 * np.exp(-var * np.where(np.isfinite(a), a, 0.0)), 0.0)
        z = var * (1 + np.where(np.isfinite(a), a, 0.0))
        part = tail * (y + (1 - y) * _e2_scaled(z))
        return tail, np.where(np.isfinite(a), part, 0.0)

    def pip(y):
        y = np.asarray(y, dtype=float)
        t, _ = upper(np.abs(y))
        return np.where(y >= 0, t, 1.0 - t)

    def pim(y):
        return pip(-np.asarray(y, dtype=float))

    def php(y):
        # E[V; V > y] is even in y for a symmetric law
        return upper(np.abs(np.asarray(y, dtype=float)))[1]

    def phm(y):
        return -php(y)

    def ppf(u):
        u = np.asarray(u, dtype=float)
        q = np.minimum(u, 1 - u)
        with np.errstate(divide="ignore"):
            a = -np.log(2 * q) / var
        return np.sign(u - 0.5) * a / (1 + a)

    return pip, php, pim, phm, ppf


def _logit_normal(var: float, n_table: int = 2401, t_max: float = 40.0):
    """V = tanh(G / 2), G ~ N(0, var); functionals tabulated in the generator."""
    s = math.sqrt(var)
    tt = np.linspace(-t_max, t_max, n_table)
    gl_x, gl_w = np.polynomial.legendre.leggauss(30)

    def integrand(u):
        return np.tanh(0.5 * s * u) * stats.norm.pdf(u)

    # cumulative E[tanh(sG/2); G/s > t] from the right, cellwise Gauss-Legendre
    a, b = tt[:-1], tt[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    cell = (integrand(mid[:, None] + half[:, None] * gl_x[None, :]) @ gl_w) * half
    upper = np.concatenate([np.cumsum(cell[::-1])[::-1], [0.0]])

    def upper_partial(t):
        t = np.clip(t, -t_max, t_max)
        j = np.clip(np.searchsorted(tt, t, side="right") - 1, 0, n_table - 2)
        lo = t
        hi = tt[j + 1]
        m_, h_ = 0.5 * (lo + hi), 0.5 * (hi - lo)
        part = (integrand(m_[..., None] + h_[..., None] * gl_x) @ gl_w) * h_
        return upper[j + 1] + part

    def gen(y):
        with np.errstate(divide="ignore"):
            return 2.0 * np.arctanh(np.clip(y, -1.0, 1.0)) / s

    def pip(y):
        return special.ndtr(-gen(y))

    def pim(y):
        return special.ndtr(gen(y))

    def php(y):
        y = np.asarray(y, dtype=float)
        t = gen(y)
        out = upper_partial(np.atleast_1d(t)).reshape(np.shape(t))
        return np.where(t == np.inf, 0.0, out)

    def phm(y):
        return -php(-np.asarray(y, dtype=float))

    return pip, php, pim, phm, lambda u: np.tanh(0.5 * s * special.ndtri(u))


def _scipy_family(dist, lo, hi, closed=None):
    """Functionals from a frozen scipy distribution.

    ``closed`` is an optional pair of partial-mean callables (upper, lower);
    missing ones use E[V; V > y] = y P(V > y) + int_y^hi P(V > u) du and its
    mirror, integrated adaptively so neither side suffers cancellation.
    """
    mean = float(dist.mean())
    up, down = closed if closed is not None else (None, None)

    def quad_each(y, fn):
        flat = np.atleast_1d(np.asarray(y, dtype=float)).ravel()
        return np.array([fn(v) for v in flat]).reshape(np.shape(y))

    def upper_one(v):
        if v >= hi:
            return 0.0
        if v <= lo:
            return mean
        tail, _ = integrate.quad(dist.sf, v, hi, epsabs=1e-14, epsrel=1e-11, limit=200)
        return v * dist.sf(v) + tail

    def lower_one(v):
        if v <= lo:
            return 0.0
        if v >= hi:
            return mean
        if not math.isfinite(lo):
            return mean - upper_one(v)
        body, _ = integrate.quad(dist.cdf, lo, v, epsabs=1e-14, epsrel=1e-11, limit=200)
        return v * dist.cdf(v) - body

    php = up if up is not None else (lambda y: quad_each(y, upper_one))
    phm = down if down is not None else (lambda y: quad_each(y, lower_one))
    return dist.sf, php, dist.cdf, phm, dist.ppf, mean, float(dist.std())


# --------------------------------------------------------------------------
# Registry
# --------------------------------------------------------------------------

FAMILIES = (
    "bernoulli", "trinomial", "discrete", "truncated_gaussian", "logit_normal", "squashed_laplace", "gaussian",
    "lognormal", "student", "exponential", "pareto", "lomax", "beta_prime", "frechet",
    "weibull", "inverse_gaussian", "nig",
)


def _require(params, name, default=None, positive=True):
    if name not in params and default is None:
        raise ValueError(f"missing parameter {name!r}")
    v = float(params.get(name, default))
    if positive and not v > 0:
        raise ValueError(f"parameter {name!r} must be positive")
    return v


def make_distribution(kind: str, params: dict | None = None, shift: float | None = None
                      ) -> SignalDistribution:
    """Build a catalog law; ``shift=None`` centers it at mean zero."""
    params = dict(params or {})
    kind = kind.lower().replace("-", "_")
    if kind not in FAMILIES:
        raise ValueError(f"unknown signal family {kind!r}")
    d = _build(kind, params)
    if shift is None:
        shift = -d.base_mean
    return replace(d, shift=float(shift))


def _build(kind: str, p: dict) -> SignalDistribution:
    inf = math.inf
    U, L = Side.upper, Side.lower
    if kind == "bernoulli":
        a = _require(p, "scale", 1.0)
        prob = float(p.get("p", 0.5))
        return _discrete(kind, [-a, a], [1 - prob, prob], p)
    if kind == "trinomial":
        a = _require(p, "scale", 1.0)
        return _discrete(kind, [-a, 0.0, a], [1 / 3, 1 / 3, 1 / 3], p)
    if kind == "discrete":
        return _discrete(kind, p["atoms"], p["probs"], p)
    if kind == "truncated_gaussian":
        var = _require(p, "Sigma", 1.0)
        M = _require(p, "M", 1.0)
        pip, php, pim, phm, ppf, Z = _truncated_gaussian(var, M)
        std = math.sqrt(var * (1 - 2 * (M / math.sqrt(var)) * stats.norm.pdf(M / math.sqrt(var)) / Z))
        return SignalDistribution(kind, p, -M, M, 0.0, std, pip, php, pim, phm, ppf,
                                  tail_meta_hi=_power_spec(U, 0.5, True),
                                  tail_meta_lo=_power_spec(L, 0.5, True), symmetric=True)
    if kind == "logit_normal":
        var = _require(p, "Sigma", 1.0)
        pip, php, pim, phm, ppf = _logit_normal(var)
        std = math.sqrt(integrate.quad(lambda g: math.tanh(g / 2) ** 2 * stats.norm.pdf(g, scale=math.sqrt(var)),
                                       -inf, inf)[0])
        note = "flat boundary without the polynomial flatness the log law needs"
        return SignalDistribution(kind, p, -1.0, 1.0, 0.0, std, pip, php, pim, phm, ppf,
                                  tail_meta_hi=_unsupported(U, True, 1.0, note),
                                  tail_meta_lo=_unsupported(L, True, 1.0, note),
                                  symmetric=True, heuristic="one_minus_exp_sqrt_log")
    if kind == "squashed_laplace":
        var = _require(p, "Sigma", 1.0)
        pip, php, pim, phm, ppf = _squashed_laplace(var)
        std = math.sqrt(integrate.quad(lambda e: (e / (var + e)) ** 2 * math.exp(-e), 0, inf)[0])
        # Psi - y ~ (1 - y)^2 / Sigma at the edges: n = 1, k = Sigma
        return SignalDistribution(kind, p, -1.0, 1.0, 0.0, std, pip, php, pim, phm, ppf,
                                  tail_meta_hi=_log_spec(U, 1, var, True),
                                  tail_meta_lo=_log_spec(L, 1, var, True), symmetric=True)
    if kind == "gaussian":
        var = _require(p, "Sigma", 1.0)
        mu = float(p.get("mu", 0.0))
        pip, php, pim, phm, ppf = _gaussian(mu, var)
        # (Psi+ - x) x -> Sigma, i.e. n = 2, k = 1/Sigma
        return SignalDistribution(kind, p, -inf, inf, mu, math.sqrt(var), pip, php, pim, phm, ppf,
                                  tail_meta_hi=_log_spec(U, 2, 1 / var, False),
                                  tail_meta_lo=_log_spec(L, 2, 1 / var, False),
                                  symmetric=(mu == 0.0))
    if kind == "lognormal":
        var = _require(p, "Sigma", 0.01)
        pip, php, pim, phm, ppf = _lognormal(var)
        std = math.sqrt(math.expm1(var))
        return SignalDistribution(kind, p, 0.0, inf, 1.0, std, pip, php, pim, phm, ppf,
                                  tail_meta_hi=_unsupported(U, False, 1.0, "Psi+ - x grows like x/log x"),
                                  tail_meta_lo=_unsupported(L, True, 1.0, "log-flat lower boundary"))
    if kind == "student":
        alpha = _require(p, "alpha", 3.0)
        if alpha <= 1:
            raise ValueError("Student tail index must exceed 1 for a finite mean")
        var = _require(p, "Sigma", 1.0)
        scale = math.sqrt(var / alpha)
        pip, php, pim, phm, ppf = _student(alpha, scale)
        std = scale * math.sqrt(alpha / (alpha - 2)) if alpha > 2 else inf
        slope = alpha / (alpha - 1)
        return SignalDistribution(kind, p, -inf, inf, 0.0, std, pip, php, pim, phm, ppf,
                                  tail_meta_hi=_power_spec(U, slope, False),
                                  tail_meta_lo=_power_spec(L, slope, False), symmetric=True)
    if kind == "exponential":
        lam = _require(p, "lam", 1.0)
        pip, php, pim, phm, ppf = _exponential(lam)
        return SignalDistribution(kind, p, 0.0, inf, 1 / lam, 1 / lam, pip, php, pim, phm, ppf,
                                  tail_meta_hi=_log_spec(U, 1, lam, False),
                                  tail_meta_lo=_power_spec(L, 0.5, True))
    if kind == "pareto":
        alpha = _require(p, "alpha", 3.0)
        xm = _require(p, "xm", 1.0)
        if alpha <= 1:
            raise ValueError("Pareto tail index must exceed 1 for a finite mean")
        dist = stats.pareto(alpha, scale=xm)
        c = alpha / (alpha - 1) * xm ** alpha
        closed = (lambda y: c * np.maximum(y, xm) ** (1 - alpha),
                  lambda y: c * (xm ** (1 - alpha) - np.maximum(y, xm) ** (1 - alpha)))
        return _from_scipy(kind, p, dist, xm, inf, closed,
                           _power_spec(U, alpha / (alpha - 1), False), _power_spec(L, 0.5, True))
    if kind == "lomax":
        alpha = _require(p, "alpha", 3.0)
        lam = _require(p, "lam", 1.0)
        if alpha <= 1:
            raise ValueError("Lomax tail index must exceed 1 for a finite mean")
        dist = stats.lomax(alpha, scale=lam)

        def lomax_up(y):
            yy = np.clip(y, 0.0, np.finfo(float).max)
            return yy * (1 + yy / lam) ** (-alpha) + lam / (alpha - 1) * (1 + yy / lam) ** (1 - alpha)

        def lomax_down(y):
            # E[V; V <= y] = y F(y) - int_0^y F(u) du
            yy = np.clip(y, 0.0, np.finfo(float).max)
            cdf = -np.expm1(-alpha * np.log1p(yy / lam))
            int_sf = lam / (alpha - 1) * -np.expm1((1 - alpha) * np.log1p(yy / lam))
            return yy * cdf - (yy - int_sf)

        closed = (lomax_up, lomax_down)

        return _from_scipy(kind, p, dist, 0.0, inf, closed,
                           _power_spec(U, alpha / (alpha - 1), False), _power_spec(L, 0.5, True))
    if kind == "beta_prime":
        alpha = _require(p, "alpha", 3.0)
        lam = _require(p, "lam", 1.0)
        if alpha <= 1:
            raise ValueError("beta-prime tail index must exceed 1 for a finite mean")
        dist = stats.betaprime(lam, alpha)
        tilt = stats.betaprime(lam + 1, alpha - 1)
        m = lam / (alpha - 1)
        closed = (lambda y: m * tilt.sf(np.maximum(y, 0.0)), lambda y: m * tilt.cdf(np.maximum(y, 0.0)))
        return _from_scipy(kind, p, dist, 0.0, inf, closed,
                           _power_spec(U, alpha / (alpha - 1), False), _power_spec(L, lam / (lam + 1), True))
    if kind == "frechet":
        alpha = _require(p, "alpha", 3.0)
        s = _require(p, "s", 1.0)
        beta = float(p.get("beta", 0.0))
        if alpha <= 1:
            raise ValueError("Frechet tail index must exceed 1 for a finite mean")
        dist = stats.invweibull(alpha, loc=beta, scale=s)
        g = special.gamma(1 - 1 / alpha)

        def frechet_u(y):
            w = np.maximum((y - beta) / s, 0.0)
            with np.errstate(divide="ignore"):
                return np.where(w > 0, w ** (-alpha), np.inf)

        def frechet_up(y):
            u = frechet_u(y)
            part = np.where(np.isfinite(u), special.gammainc(1 - 1 / alpha, u) * g, g)
            return beta * dist.sf(y) + s * part

        def frechet_down(y):
            u = frechet_u(y)
            part = np.where(np.isfinite(u), special.gammaincc(1 - 1 / alpha, u) * g, 0.0)
            return beta * dist.cdf(y) + s * part

        closed = (frechet_up, frechet_down)

        return _from_scipy(kind, p, dist, beta, inf, closed,
                           _power_spec(U, alpha / (alpha - 1), False),
                           _log_spec(L, alpha, alpha * s ** alpha, True))
    if kind == "weibull":
        pw = _require(p, "p", 2.0)
        lam = _require(p, "lam", 1.0)
        dist = stats.weibull_min(pw, scale=1 / lam)

        gw = special.gamma(1 + 1 / pw) / lam
        closed = (lambda y: special.gammaincc(1 + 1 / pw, (lam * np.maximum(y, 0.0)) ** pw) * gw,
                  lambda y: special.gammainc(1 + 1 / pw, (lam * np.maximum(y, 0.0)) ** pw) * gw)

        return _from_scipy(kind, p, dist, 0.0, inf, closed,
                           _log_spec(U, pw, pw * lam ** pw, False), _power_spec(L, pw / (pw + 1), True))
    if kind == "inverse_gaussian":
        mu = _require(p, "mu", 1.0)
        lam = _require(p, "lam", 1.0)
        dist = stats.invgauss(mu / lam, scale=lam)
        return _from_scipy(kind, p, dist, 0.0, inf, None,
                           _log_spec(U, 1, lam / (2 * mu * mu), False), _log_spec(L, 1, lam / 2, True))
    if kind == "nig":
        a = _require(p, "alpha", 2.0)
        b = float(p.get("beta", 0.0))
        delta = _require(p, "delta", 1.0)
        mu = float(p.get("mu", 0.0))
        if abs(b) >= a:
            raise ValueError("NIG needs |beta| < alpha")
        dist = stats.norminvgauss(a * delta, b * delta, loc=mu, scale=delta)
        return _from_scipy(kind, p, dist, -inf, inf, None,
                           _log_spec(U, 1, a - b, False), _log_spec(L, 1, a + b, False))
    raise ValueError(f"unknown signal family {kind!r}")  # pragma: no cover


def _from_scipy(kind, p, dist, lo, hi, closed, spec_hi, spec_lo):
    pip, php, pim, phm, ppf, mean, std = _scipy_family(dist, lo, hi, closed)
    return SignalDistribution(kind, p, lo, hi, mean, std, pip, php, pim, phm, ppf,
                              tail_meta_hi=spec_hi, tail_meta_lo=spec_lo)


def from_config(cfg: dict) -> SignalDistribution:
    """Build from ``{"family": str, "params": {...}, "shift": float | null}``."""
    return make_distribution(cfg["family"], cfg.get("params", {}), cfg.get("shift"))


# --------------------------------------------------------------------------
# Conditional tail means
# --------------------------------------------------------------------------


def psi(dist: SignalDistribution, side: Side | str, y):
    """E[V | V > y] (upper) or E[V | V <= y] (lower), clamped to the support."""
    side = Side(side)
    y = np.asarray(y, dtype=float)
    if side is Side.upper:
        num, den, edge = dist.phi_plus(y), dist.pi_plus(y), dist.support_hi
    else:
        num, den, edge = dist.phi_minus(y), dist.pi_minus(y), dist.support_lo
    num, den = np.asarray(num, dtype=float), np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), edge)
    # past the last representable tail mass on an unbounded side, y is the limit
    out = np.where(np.isfinite(out), out, y)
    out = np.clip(out, dist.support_lo, dist.support_hi)
    return out if out.ndim else float(out)


def tail_spec(dist: SignalDistribution, side: Side | str) -> TailSpec:
    """Registered tail metadata, else a numerical estimate of the boundary slope."""
    side = Side(side)
    meta = dist.tail_meta(side)
    if meta is not None:
        return meta
    return estimate_tail_spec(dist, side)


def estimate_tail_spec(dist: SignalDistribution, side: Side | str) -> TailSpec:
    """Richardson-extrapolated boundary slope of Psi and a fitted flatness order."""
    side = Side(side)
    if dist.is_discrete:
        return _unsupported(side, True, note="discrete law")
    upper = side is Side.upper
    edge = dist.support_hi if upper else dist.support_lo
    bounded = math.isfinite(edge)
    sgn = 1.0 if upper else -1.0
    if bounded:
        # slope = lim (edge - Psi(x)) / (edge - x)
        width = min(dist.support_hi - dist.support_lo, dist.std if math.isfinite(dist.std) else 1.0)
        eps = width * np.logspace(-2, -5, 7)
        xs = edge - sgn * eps
        ratio = (edge - psi(dist, side, xs)) / (edge - xs)
        vals = ratio
    else:
        # slope = lim Psi(x) / x
        ref = max(abs(dist.mean), dist.std if math.isfinite(dist.std) else 1.0, 1.0)
        xs = sgn * ref * np.logspace(2, 6, 9)
        vals = (psi(dist, side, xs) - dist.mean) / (xs - dist.mean)
    vals = np.asarray(vals, dtype=float)
    if not np.all(np.isfinite(vals)):
        return _unsupported(side, bounded, note="non-finite boundary ratio")
    # Richardson on a geometric sequence assuming O(eps) corrections
    rich = 2 * vals[1:] - vals[:-1] if bounded else vals[1:]
    spread = float(np.ptp(rich[-3:]))
    slope = float(rich[-1])
    if spread > 1e-3 * max(1.0, abs(slope)):
        return _unsupported(side, bounded, slope, note=f"non-convergent boundary slope (spread {spread:.2e})")
    if abs(slope - round(slope * 2) / 2) < 1e-4:
        slope = round(slope * 2) / 2
    if abs(slope - 1.0) > 1e-3:
        return _power_spec(side, slope, bounded)
    return _unsupported(side, bounded, 1.0, note="log-law flatness not registered for this family")
