"""First- and second-order statistics of the neighbour-count thinning of Poisson input."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .geometry import omega, unit_ball_volume
from .rules import RetentionRule, finite_difference

DEFAULT_TOL = 1e-14
DEGENERATE_FLOOR = 1e-300


class NumericalError(RuntimeError):
    """Quadrature or series evaluation failed; ``estimate`` holds the last value."""

    def __init__(self, message: str, estimate: float | None = None):
        super().__init__(message)
        self.estimate = estimate


class DegenerateDenominatorError(NumericalError):
    pass


def poisson_cap(t: float) -> int:
    return int(math.ceil(t + 40.0 * math.sqrt(t) + 60.0))


def poisson_weights(t: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Poisson(t) probabilities for n = 0..N* with upper tail mass beyond N* below ``tol``."""
    if t < 0:
        raise ValueError(f"Poisson mean must be >= 0, got {t}")
    if t == 0:
        return np.ones(1)
    n = np.arange(poisson_cap(t) + 1)
    pmf = np.exp(n * math.log(t) - t - gammaln(n + 1))
    # tail[i] = P(N > i), summed from the small end for accuracy
    tail = np.cumsum(pmf[::-1])[::-1]
    tail = np.append(tail[1:], 0.0)
    n_star = int(np.argmax(tail < tol))
    return pmf[: n_star + 1]


def poisson_mixture(rule: RetentionRule, t: float, tol: float = DEFAULT_TOL) -> float:
    """m_p(t) = E p(N), N ~ Poisson(t)."""
    w = poisson_weights(t, tol)
    return float(min(1.0, max(0.0, math.fsum(w * rule.table(len(w) - 1)))))


def poisson_mixture_shifted(rule: RetentionRule, t: float, tol: float = DEFAULT_TOL) -> float:
    """m_+(t) = E p(N + 1), N ~ Poisson(t)."""
    w = poisson_weights(t, tol)
    return float(min(1.0, max(0.0, math.fsum(w * rule.table(len(w))[1:]))))


def mean_abs_dev(rule: RetentionRule, t: float, tol: float = DEFAULT_TOL) -> float:
    """E|p(N) - m_p(t)|, N ~ Poisson(t)."""
    w = poisson_weights(t, tol)
    p = rule.table(len(w) - 1)
    m = math.fsum(w * p)
    return math.fsum(w * np.abs(p - m))


@dataclass(frozen=True)
class Model:
    """Dimension, radius, intensity and retention rule.

    ``lam`` is the homogeneous intensity. For inhomogeneous input pass a
    vectorised ``density`` (``(n, d) -> (n,)``) together with its bound
    ``lam_bound``; ``lam`` is then ignored by the inhomogeneous routines.
    """

    d: int
    r: float
    rule: RetentionRule
    lam: float | None = None
    density: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    lam_bound: float | None = None

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.d}")
        if not self.r > 0:
            raise ValueError(f"radius must be > 0, got {self.r}")
        if self.lam is None and self.density is None:
            raise ValueError("need either a constant intensity or a density")
        if self.lam is not None and self.lam < 0:
            raise ValueError(f"intensity must be >= 0, got {self.lam}")
        if self.density is not None and self.lam_bound is None:
            raise ValueError("a density needs a declared bound lam_bound")

    @property
    def homogeneous(self) -> bool:
        return self.density is None

    @property
    def v_d(self) -> float:
        return unit_ball_volume(self.d)

    @property
    def mu(self) -> float:
        """Expected neighbour count lam * v_d * r^d."""
        if not self.homogeneous:
            raise ValueError("mu is defined for homogeneous models only")
        return self.lam * self.v_d * self.r**self.d

    @classmethod
    def from_mu(cls, d: int, mu: float, rule: RetentionRule, lam: float = 1.0) -> Model:
        """Homogeneous model with radius chosen so that lam * v_d * r^d = mu."""
        r = (mu / (lam * unit_ball_volume(d))) ** (1.0 / d)
        return cls(d=d, r=r, rule=rule, lam=lam)

    def with_rule(self, rule: RetentionRule) -> Model:
        return Model(self.d, self.r, rule, self.lam, self.density, self.lam_bound)

    def with_radius(self, r: float) -> Model:
        return Model(self.d, r, self.rule, self.lam, self.density, self.lam_bound)

    def intensity_at(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.homogeneous:
            return np.full(len(x), float(self.lam))
        return np.asarray(self.density(x), dtype=float)

    def to_dict(self) -> dict:
        out = {"d": self.d, "r": self.r, "rule": self.rule.to_dict()}
        if self.lam is not None:
            out["lambda"] = self.lam
        if self.lam_bound is not None:
            out["lambda_bound"] = self.lam_bound
        return out


# ---------------------------------------------------------------------------
# intensity


def intensity_homogeneous(model: Model, tol: float = DEFAULT_TOL) -> float:
    return model.lam * poisson_mixture(model.rule, model.mu, tol)


# ---------------------------------------------------------------------------
# densities with a closed-form ball mass


@dataclass(frozen=True)
class HalfSpaceDensity:
    """``value`` where x[axis] >= threshold, ``low`` elsewhere."""

    value: float
    low: float = 0.0
    axis: int = 0
    threshold: float = 0.5

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.where(x[:, self.axis] >= self.threshold, self.value, self.low)

    def ball_mass(self, x, r: float) -> float:
        d = len(x)
        a = (self.threshold - float(x[self.axis])) / r
        # fraction of the ball above the hyperplane; a cap of height 1 - a is omega(2a) / 2
        if a >= 1.0:
            frac = 0.0
        elif a <= -1.0:
            frac = 1.0
        elif a >= 0.0:
            frac = 0.5 * omega(d, 2.0 * a)
        else:
            frac = 1.0 - 0.5 * omega(d, -2.0 * a)
        return unit_ball_volume(d) * r**d * (self.value * frac + self.low * (1.0 - frac))

    def sup(self) -> float:
        return max(self.value, self.low)


@dataclass(frozen=True)
class LinearDensity:
    """intercept + gradient . x; must stay non-negative where it is used."""

    intercept: float
    gradient: tuple[float, ...]

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.intercept + x @ np.asarray(self.gradient)

    def ball_mass(self, x, r: float) -> float:
        # the linear part integrates to zero over a centred ball
        return unit_ball_volume(len(x)) * r**len(x) * float(self(x)[0])

    def extremes(self, lower, upper) -> tuple[float, float]:
        g = np.asarray(self.gradient)
        lo, up = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
        return (
            self.intercept + float(np.sum(np.minimum(g * lo, g * up))),
            self.intercept + float(np.sum(np.maximum(g * lo, g * up))),
        )


def local_mass(model: Model, x, quad_tol: float = 1e-8) -> float:
    """mu_x(r): integral of the intensity over the closed ball B(x, r).

    Nested adaptive quadrature whose inner limits follow the ball boundary,
    so the integrand carries no indicator jump at the sphere. A density jump
    that cuts a thin sliver off an inner chord can slip past the Gauss-Kronrod
    error estimate, so discontinuous densities should provide
    ``ball_mass(x, r)``, which is then used instead.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    d, r = model.d, model.r
    if len(x) != d:
        raise ValueError(f"point has dimension {len(x)}, model has {d}")
    if model.homogeneous:
        return model.lam * unit_ball_volume(d) * r**d
    exact = getattr(model.density, "ball_mass", None)
    if exact is not None:
        return float(exact(x, r))

    def f(*y):
        # nquad passes innermost variable first
        pt = x + np.asarray(y[::-1])
        return float(model.density(pt[None, :])[0])

    def limits(i):
        def lim(*outer):
            rem = r * r - sum(v * v for v in outer)
            h = math.sqrt(max(rem, 0.0))
            return (-h, h)

        return lim

    ranges = [limits(i) for i in range(d)]
    # absolute floor on the scale of the largest possible mass; pure relative
    # tolerances stall at density jumps
    scale = model.lam_bound * unit_ball_volume(d) * r**d
    # inner levels run tighter so their error does not read as noise to the outer ones
    tols = [max(quad_tol * 10.0 ** -(d - 1 - i), 1e-13) for i in range(d)]
    opts = [{"epsabs": t * scale, "epsrel": t, "limit": 200} for t in tols]
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.nquad(f, ranges, opts=opts)
        except integrate.IntegrationWarning as exc:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                last, _ = integrate.nquad(f, ranges, opts=opts)
            raise NumericalError(f"local mass quadrature did not converge: {exc}", last) from None
    return float(val)


def intensity_inhomogeneous(model: Model, x, quad_tol: float = 1e-8, tol: float = DEFAULT_TOL) -> float:
    lam_x = float(model.intensity_at(x)[0])
    return lam_x * poisson_mixture(model.rule, local_mass(model, x, quad_tol), tol)


def integrate_over_box(f, window, quad_tol: float = 1e-6) -> float:
    """Nested adaptive quadrature of a scalar ``f(x)`` over an axis-aligned box."""
    ranges = [(lo, hi) for lo, hi in zip(window.lower, window.upper)][::-1]
    opts = {"epsabs": 0.0, "epsrel": quad_tol, "limit": 100}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.nquad(lambda *y: f(np.asarray(y[::-1])), ranges, opts=opts)
    return float(val)


def mean_intensity(model: Model, window, quad_tol: float = 1e-6, tol: float = DEFAULT_TOL) -> float:
    """Average of the thinned intensity over ``window``."""
    if model.homogeneous:
        return intensity_homogeneous(model, tol)
    inner = min(1e-8, quad_tol * 1e-2)
    total = integrate_over_box(lambda x: intensity_inhomogeneous(model, x, inner, tol), window, quad_tol)
    return total / window.volume()


@dataclass(frozen=True)
class IntensityExpansion:
    partial_sum: float
    remainder_bound: float
    order: int
    local_mass: float


def intensity_expansion(model: Model, x=None, K: int = 1, quad_tol: float = 1e-8) -> IntensityExpansion:
    """Truncated finite-difference series of the intensity at ``x`` and its remainder bound.

    The bound is 2^{K+1} e^{2 mu_x} / (K+1)! * lam* * mu_x^{K+1}.
    """
    if K < 0:
        raise ValueError("order must be >= 0")
    if model.homogeneous:
        m = model.mu
        lam_x = lam_star = model.lam
    else:
        if x is None:
            raise ValueError("inhomogeneous expansion needs a location")
        m = local_mass(model, x, quad_tol)
        lam_x = float(model.intensity_at(x)[0])
        lam_star = model.lam_bound
    terms = [m**k * finite_difference(model.rule, k) / math.factorial(k) for k in range(K + 1)]
    c_k = 2.0 ** (K + 1) * math.exp(2.0 * m) / math.factorial(K + 1)
    return IntensityExpansion(
        partial_sum=lam_x * math.fsum(terms),
        remainder_bound=c_k * lam_star * m ** (K + 1),
        order=K,
        local_mass=m,
    )


@dataclass(frozen=True)
class CoxIntensity:
    mc_estimate: float
    std_error: float
    expansion: tuple[float, ...]
    expansion_std_error: tuple[float, ...]
    n_samples: int


CoxSampler = Callable[[np.random.Generator, int], tuple[np.ndarray, np.ndarray]]


def intensity_cox(
    rule: RetentionRule,
    sampler: CoxSampler,
    n_samples: int,
    rng: np.random.Generator,
    K: int = 2,
    tol: float = DEFAULT_TOL,
) -> CoxIntensity:
    """Monte Carlo intensity of the thinned Cox process at a fixed location.

    ``sampler(rng, n)`` returns joint draws ``(lam_x, M_x)`` of the directing
    density at x and the directing mass of B(x, r). The expansion entry k is the
    cumulative sum of Delta^j p(0)/j! E[lam_x M_x^j] over j <= k.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    lam_x, mass = (np.asarray(a, dtype=float).reshape(-1) for a in sampler(rng, n_samples))
    if lam_x.shape != mass.shape or len(lam_x) != n_samples:
        raise ValueError("sampler must return two arrays of length n_samples")
    if not (np.all(np.isfinite(lam_x)) and np.all(np.isfinite(mass))):
        raise ValueError("sampler produced a non-finite draw")
    if np.any(lam_x < 0) or np.any(mass < 0):
        raise ValueError("sampler produced a negative intensity or mass")
    # identical masses are common (mixed Poisson); evaluate m_p once per value
    uniq, inv = np.unique(mass, return_inverse=True)
    mp = np.array([poisson_mixture(rule, float(m), tol) for m in uniq])[inv]
    vals = lam_x * mp
    se = float(vals.std(ddof=1) / math.sqrt(n_samples))
    partial = np.zeros(n_samples)
    expansion, expansion_se = [], []
    for k in range(K + 1):
        partial = partial + finite_difference(rule, k) / math.factorial(k) * lam_x * mass**k
        expansion.append(float(partial.mean()))
        expansion_se.append(float(partial.std(ddof=1) / math.sqrt(n_samples)))
    return CoxIntensity(float(vals.mean()), se, tuple(expansion), tuple(expansion_se), n_samples)


# ---------------------------------------------------------------------------
# pair correlation


@dataclass(frozen=True)
class GDecomposition:
    """Conditional-mean decomposition of the pair correlation at one distance.

    ``g_I(k) = E p(k + I + V)`` with V ~ Poisson(mu (1 - omega)); the pair
    correlation is E[g_I(U)^2] / m_p^2 with U ~ Poisson(mu omega).
    """

    t: float
    indicator: int
    omega: float
    m_p: float
    mean: float
    variance: float
    g: float


def g_decomposition(model: Model, t: float, tol: float = DEFAULT_TOL) -> GDecomposition:
    if not model.homogeneous:
        raise ValueError("exact pair correlation needs a homogeneous model")
    if not t > 0:
        raise ValueError(f"relative distance must be > 0, got {t}")
    mu = model.mu
    m_p = poisson_mixture(model.rule, mu, tol)
    if m_p < DEGENERATE_FLOOR:
        raise DegenerateDenominatorError(f"m_p = {m_p:.3g} is below {DEGENERATE_FLOOR:g}", m_p)
    ind = 1 if t <= 1.0 else 0
    om = omega(model.d, t)
    if t > 2.0:
        return GDecomposition(t, 0, 0.0, m_p, m_p, 0.0, 1.0)
    wu = poisson_weights(mu * om, tol)
    wv = poisson_weights(mu * (1.0 - om), tol)
    p = model.rule.table(len(wu) + len(wv) + ind)
    k = np.arange(len(wu))[:, None]
    v = np.arange(len(wv))[None, :]
    g_i = (p[k + v + ind] * wv).sum(axis=1) / m_p
    mean = float(wu @ g_i)
    second = float(wu @ (g_i * g_i))
    return GDecomposition(
        t=t,
        indicator=ind,
        omega=om,
        m_p=m_p,
        mean=mean * m_p,
        variance=max(second - mean * mean, 0.0) * m_p * m_p,
        g=second,
    )


def g_exact(model: Model, t: float, tol: float = DEFAULT_TOL) -> float:
    """Radial pair correlation g(t r) of the thinned homogeneous Poisson process."""
    if t > 2.0:
        return 1.0
    return g_decomposition(model, t, tol).g


def g_oracle_triple_sum(model: Model, t: float, n_cap: int | None = None) -> float:
    """Brute-force triple series over the counts in the two lunes and the lens.

    Test oracle only: O(n_cap^3) and independent of the conditional-mean route.
    """
    mu = model.mu
    om = omega(model.d, t)
    a = b = mu * (1.0 - om)
    c = mu * om
    ind = 1 if t <= 1.0 else 0
    if n_cap is None:
        n_cap = 0
        for lam in (a, c, mu):
            n = 0
            # grow until the Poisson tail is negligible
            while lam > 0 and 1.0 - sum(math.exp(-lam) * lam**j / math.factorial(j) for j in range(n + 1)) > 1e-13:
                n += 1
            n_cap = max(n_cap, n + 8)

    def pmf(lam):
        if lam == 0:
            out = np.zeros(n_cap + 1)
            out[0] = 1.0
            return out
        return np.array([math.exp(-lam + j * math.log(lam) - math.lgamma(j + 1)) for j in range(n_cap + 1)])

    pa, pb, pc = pmf(a), pmf(b), pmf(c)
    i = np.arange(n_cap + 1)
    p = np.array([float(model.rule(int(n))) for n in range(3 * n_cap + 2)])
    left = p[i[:, None] + i[None, :] + ind]  # indexed [i, k]
    right = p[i[:, None] + i[None, :] + ind]  # indexed [j, k]
    num = np.einsum("i,j,k,ik,jk->", pa, pb, pc, left, right)
    den = float(np.dot(pmf(mu), p[: n_cap + 1])) ** 2
    return float(num / den)


@dataclass(frozen=True)
class ExpansionValue:
    value: float
    valid: bool


def g_expansion_generic(model: Model, t: float) -> ExpansionValue:
    """First-order small-mu expansion of g for rules with p(0), p(1) > 0.

    ``valid`` is False outside mu <= p(0)/4.
    """
    p = model.rule.table(3)
    if not (p[0] > 0 and p[1] > 0):
        raise ValueError("generic expansion needs p(0) > 0 and p(1) > 0")
    if t > 2.0:
        return ExpansionValue(1.0, True)
    mu = model.mu
    ind = 1 if t <= 1.0 else 0
    om = omega(model.d, t)
    ratio = p[ind + 1] / p[ind]
    bracket = om * (1.0 - ratio) ** 2 + 2.0 * ind * (ratio - p[1] / p[0])
    value = (p[ind] / p[0]) ** 2 * (1.0 + mu * bracket)
    return ExpansionValue(value, mu <= p[0] / 4.0)


def g_expansion_p0zero(model: Model, t: float) -> float:
    """Leading small-mu terms of g when p(0) = 0 < p(1)."""
    p = model.rule.table(3)
    if not (p[0] == 0 and p[1] > 0):
        raise ValueError("this expansion needs p(0) = 0 < p(1)")
    if t > 2.0:
        return 1.0
    mu = model.mu
    om = omega(model.d, t)
    if t > 1.0:
        return om / mu
    s = p[2] / p[1]
    return (1.0 + mu * (s + om * (1.0 - s) ** 2)) / mu**2


@dataclass
class GCurve:
    t: np.ndarray
    values: np.ndarray
    model: Model

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.values = np.asarray(self.values, dtype=float)

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "g"])
        for t, g in zip(self.t, self.values):
            w.writerow([f"{t:.17g}", f"{g:.17g}"])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "model": self.model.to_dict(),
                "t": [float(f"{v:.17g}") for v in self.t],
                "g": [float(f"{v:.17g}") for v in self.values],
            }
        )

    @classmethod
    def from_csv(cls, text: str, model: Model) -> GCurve:
        rows = [r for r in csv.reader(line for line in text.splitlines() if not line.startswith("#"))]
        data = np.array(rows[1:], dtype=float).reshape(-1, 2)
        return cls(data[:, 0], data[:, 1], model)


def default_t_grid(n: int = 400, t_max: float = 2.2) -> np.ndarray:
    """Uniform grid on (0, t_max] with the jump at t = 1 exposed from both sides."""
    grid = np.linspace(t_max / n, t_max, n)
    return np.unique(np.concatenate([grid, [1.0, 1.0 + 1e-9, 2.0]]))


def g_curve(model: Model, t_grid=None, tol: float = DEFAULT_TOL, executor=None) -> GCurve:
    t_grid = default_t_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0):
        raise ValueError("grid points must be > 0")
    fn = lambda t: g_exact(model, float(t), tol)  # noqa: E731
    mapper = executor.map if executor is not None else map
    return GCurve(t_grid, np.fromiter(mapper(fn, t_grid), dtype=float, count=len(t_grid)), model)
