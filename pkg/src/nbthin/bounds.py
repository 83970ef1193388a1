"""Poisson-approximation bounds for the thinned process, reported term by term.

Universal constants that are only known to exist are configuration values
(default 1) and are listed in every report.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .analytic import (
    DEGENERATE_FLOOR,
    DegenerateDenominatorError,
    Model,
    NumericalError,
    g_exact,
    integrate_over_box,
    local_mass,
    mean_abs_dev,
    poisson_mixture,
    poisson_mixture_shifted,
)
from .geometry import Window, omega, radial_integrals, unit_ball_volume
from .rules import RetentionRule, lipschitz_modulus, showcase_rules

ROUTES = ("CouplingTV", "Laplace", "SteinGeneral", "SteinLower", "SteinSmallR", "SteinModerateR")


@dataclass
class Constants:
    C_laplace: float = 1.0
    c_laplace_threshold: float = 1.0
    C_stein: float = 1.0
    c_lower: float = 1.0
    C_lower_perimeter: float = 1.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class BoundReport:
    route: str
    total: float
    terms: dict[str, float] = field(default_factory=dict)
    constants_used: dict[str, float] = field(default_factory=dict)
    validity_notes: list[str] = field(default_factory=list)
    valid: bool = True

    def to_dict(self) -> dict:
        return {
            "route": self.route,
            "total": float(self.total),
            "terms": {k: float(v) for k, v in self.terms.items()},
            "constants_used": {k: float(v) for k, v in self.constants_used.items()},
            "validity_notes": list(self.validity_notes),
            "valid": bool(self.valid),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _lam_prime(model: Model) -> tuple[float, float]:
    m_p = poisson_mixture(model.rule, model.mu)
    return model.lam * m_p, m_p


# ---------------------------------------------------------------------------
# coupling


def bound_coupling_tv(model: Model, window: Window) -> BoundReport:
    """lam |W| E|p(N) - m_p| and its small-mu relaxation 2 L lam |W| mu."""
    mu, vol = model.mu, window.volume()
    delta1 = mean_abs_dev(model.rule, mu)
    lip = lipschitz_modulus(model.rule)
    return BoundReport(
        route="CouplingTV",
        total=model.lam * vol * delta1,
        terms={
            "delta1": delta1,
            "lambda_W": model.lam * vol,
            "lipschitz": lip,
            "small_mu_form": 2.0 * lip * model.lam * vol * mu,
        },
    )


def bound_coupling_tv_inhomog(model: Model, window: Window, quad_tol: float = 1e-5) -> BoundReport:
    """Integral over W of lam(x) E|p(Pois(mu_x)) - m_p(mu_x)| for an inhomogeneous input."""
    if model.homogeneous:
        return bound_coupling_tv(model, window)
    inner_tol = min(1e-8, quad_tol * 1e-2)

    def integrand(x):
        lam_x = float(model.intensity_at(x)[0])
        if lam_x == 0.0:
            return 0.0
        return lam_x * mean_abs_dev(model.rule, local_mass(model, x, inner_tol))

    total = integrate_over_box(integrand, window, quad_tol)
    return BoundReport(route="CouplingTV", total=total, terms={"integral": total}, validity_notes=["inhomogeneous"])


# ---------------------------------------------------------------------------
# Laplace functional


def bound_laplace(model: Model, window: Window, g_sup: float, constants: Constants | None = None) -> BoundReport:
    """C_d lam^2 ||g|| |W| (2r)^d, valid when lam r^d <= c_d."""
    c = constants or Constants()
    d, r, lam = model.d, model.r, model.lam
    scale = lam * lam * g_sup * window.volume() * (2.0 * r) ** d
    lam_rd = lam * r**d
    ok = bool(lam_rd <= c.c_laplace_threshold)
    return BoundReport(
        route="Laplace",
        total=c.C_laplace * scale,
        terms={"shape": scale, "lambda_r_d": lam_rd},
        constants_used={"C_d": c.C_laplace, "c_d": c.c_laplace_threshold},
        validity_notes=[f"lambda r^d = {lam_rd:.6g} {'<=' if ok else '>'} c_d = {c.c_laplace_threshold:g}"],
        valid=ok,
    )


# ---------------------------------------------------------------------------
# Stein


def correlation_integral(model: Model, quad_tol: float = 1e-8) -> float:
    """Integral of |g - 1| over the ball of radius 2r, in polar form.

    Adaptive Gauss-Kronrod on (0, 1] and (1, 2] separately (g jumps at t = 1).
    """
    d = model.d
    f = lambda t: t ** (d - 1) * abs(g_exact(model, t) - 1.0)  # noqa: E731
    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        for a, b in ((0.0, 1.0), (1.0, 2.0)):
            try:
                val, _ = integrate.quad(f, a, b, epsabs=1e-15, epsrel=quad_tol, limit=500)
            except integrate.IntegrationWarning as exc:
                raise NumericalError(f"correlation integral on ({a}, {b}] did not converge: {exc}") from None
            total += val
    return radial_integrals(d).S_dminus1 * model.r**d * total


def bound_stein_general(
    model: Model, window: Window, quad_tol: float = 1e-8, constants: Constants | None = None
) -> BoundReport:
    c = constants or Constants()
    lp, _ = _lam_prime(model)
    corr = correlation_integral(model, quad_tol)
    remainder = unit_ball_volume(model.d) * (2.0 * model.r) ** model.d
    return BoundReport(
        route="SteinGeneral",
        total=lp * lp * window.volume() * (c.C_stein * corr + remainder),
        terms={"correlation_integral": corr, "remainder": remainder, "lambda_prime": lp},
        constants_used={"C_d": c.C_stein},
    )


def bound_stein_lower(
    model: Model, window: Window, quad_tol: float = 1e-8, constants: Constants | None = None
) -> BoundReport:
    c = constants or Constants()
    lp, _ = _lam_prime(model)
    corr = correlation_integral(model, quad_tol)
    first = c.c_lower * lp * lp * corr
    second = c.C_lower_perimeter * lp * lp * window.perimeter() * model.r
    return BoundReport(
        route="SteinLower",
        total=max(0.0, first - second),
        terms={
            "correlation_term": first,
            "perimeter_term": second,
            "correlation_integral": corr,
            "perimeter_over_volume": window.perimeter() / window.volume(),
        },
        constants_used={"c_d": c.c_lower, "C_prime_d": c.C_lower_perimeter},
        validity_notes=["structural lower bound: mollification constants are configuration values"],
    )


class UnsupportedRuleError(ValueError):
    pass


def bound_stein_smallr(model: Model, window: Window, constants: Constants | None = None) -> BoundReport:
    """Explicit small-r Stein bound in the two supported regimes of (p(0), p(1))."""
    c = constants or Constants()
    p = model.rule.table(2)
    d, r, mu = model.d, model.r, model.mu
    ri = radial_integrals(d)
    lp, _ = _lam_prime(model)
    remainder = unit_ball_volume(d) * (2.0 * r) ** d
    vol = window.volume()
    if p[0] > 0 and p[1] > 0:
        a, b = p[1] / p[0], p[2] / p[1]
        xi0 = abs(a * a - 1.0)
        xi1 = (1.0 - a) ** 2 + (1.0 - b) ** 2 + 2.0 * abs(b - a)
        lead = ri.B_d * xi0 + mu * xi1
        # the same first-order terms weighted by the overlap moments
        weighted = ri.B_d * xi0 + mu * (ri.M_gt1 * (1.0 - a) ** 2 + ri.M_le1 * (1.0 - b) ** 2 + 2.0 * ri.B_d * abs(b - a))
        ok = bool(mu <= p[0] / 4.0)
        return BoundReport(
            route="SteinSmallR",
            total=lp * lp * vol * (c.C_stein * ri.S_dminus1 * r**d * lead + remainder),
            terms={"Xi0": xi0, "Xi1": xi1, "leading_coefficient": lead, "weighted_coefficient": weighted, "remainder": remainder},
            constants_used={"C_d": c.C_stein},
            validity_notes=[f"case (a); mu = {mu:.6g} {'<=' if ok else '>'} p(0)/4 = {p[0] / 4:.6g}"],
            valid=ok,
        )
    if p[0] == 0 and p[1] > 0:
        lead = ri.B_d / mu**2 + ri.M_gt1 / mu
        return BoundReport(
            route="SteinSmallR",
            total=lp * lp * vol * (c.C_stein * ri.S_dminus1 * r**d * lead + remainder),
            terms={"c": p[1], "s": p[2] / p[1], "leading_coefficient": lead, "remainder": remainder},
            constants_used={"C_d": c.C_stein},
            validity_notes=["case (b): p(0) = 0 < p(1); asymptotic as mu -> 0"],
        )
    raise UnsupportedRuleError(f"small-r bound needs p(0), p(1) > 0 or p(0) = 0 < p(1); got p(0)={p[0]}, p(1)={p[1]}")


@dataclass(frozen=True)
class MixtureMoments:
    m_p: float
    m_plus: float
    lipschitz: float


def _moments(model: Model) -> MixtureMoments:
    mu = model.mu
    m_p = poisson_mixture(model.rule, mu)
    if m_p < DEGENERATE_FLOOR:
        raise DegenerateDenominatorError(f"m_p = {m_p:.3g} is below {DEGENERATE_FLOOR:g}", m_p)
    return MixtureMoments(m_p, poisson_mixture_shifted(model.rule, mu), lipschitz_modulus(model.rule))


def pointwise_g_bound(model: Model, t: float) -> float:
    """Variance-plus-mean-shift bound on |g(t r) - 1|."""
    if t > 2.0:
        return 0.0
    mm = _moments(model)
    out = model.mu * omega(model.d, t) * mm.lipschitz**2 / mm.m_p**2
    if t <= 1.0:
        out += abs(mm.m_plus**2 / mm.m_p**2 - 1.0)
    return out


def moderate_surrogate(model: Model) -> float:
    mm = _moments(model)
    ri = radial_integrals(model.d)
    inner = model.mu * mm.lipschitz**2 * ri.J_d / mm.m_p**2 + abs(mm.m_plus**2 / mm.m_p**2 - 1.0) * ri.B_d
    return ri.S_dminus1 * model.r**model.d * inner


def bound_stein_moderate(model: Model, window: Window, constants: Constants | None = None) -> BoundReport:
    c = constants or Constants()
    mm = _moments(model)
    lp = model.lam * mm.m_p
    surrogate = moderate_surrogate(model)
    remainder = unit_ball_volume(model.d) * (2.0 * model.r) ** model.d
    return BoundReport(
        route="SteinModerateR",
        total=lp * lp * window.volume() * (c.C_stein * surrogate + remainder),
        terms={
            "surrogate": surrogate,
            "lipschitz": mm.lipschitz,
            "m_p": mm.m_p,
            "m_plus": mm.m_plus,
            "remainder": remainder,
        },
        constants_used={"C_d": c.C_stein},
    )


# ---------------------------------------------------------------------------
# comparison


@dataclass
class RouteTable:
    rows: list[tuple[str, dict[str, BoundReport]]]

    def totals(self) -> dict[str, dict[str, float]]:
        return {name: {k: v.total for k, v in reps.items()} for name, reps in self.rows}

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rule", *ROUTES])
        for name, reps in self.rows:
            w.writerow([name] + [f"{reps[r].total:.17g}" if r in reps else "" for r in ROUTES])
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = ["| rule | " + " | ".join(ROUTES) + " |", "|" + "---|" * (len(ROUTES) + 1)]
        for name, reps in self.rows:
            cells = []
            for r in ROUTES:
                if r not in reps:
                    cells.append("n/a")
                else:
                    flag = "" if reps[r].valid else " (!)"
                    cells.append(f"{reps[r].total:.4g}{flag}")
            lines.append(f"| {name} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({name: {k: v.to_dict() for k, v in reps.items()} for name, reps in self.rows}, indent=2)


def evaluate_routes(
    model: Model, window: Window, g_sup: float = 1.0, quad_tol: float = 1e-8, constants: Constants | None = None
) -> dict[str, BoundReport]:
    """Every route that applies to ``model``; inapplicable ones are left out."""
    out = {
        "CouplingTV": bound_coupling_tv(model, window),
        "Laplace": bound_laplace(model, window, g_sup, constants),
    }
    try:
        out["SteinGeneral"] = bound_stein_general(model, window, quad_tol, constants)
        out["SteinLower"] = bound_stein_lower(model, window, quad_tol, constants)
    except DegenerateDenominatorError:
        pass
    try:
        out["SteinSmallR"] = bound_stein_smallr(model, window, constants)
    except UnsupportedRuleError:
        pass
    try:
        out["SteinModerateR"] = bound_stein_moderate(model, window, constants)
    except DegenerateDenominatorError:
        pass
    return out


def compare_routes(
    model: Model,
    window: Window,
    g_sup: float = 1.0,
    quad_tol: float = 1e-8,
    constants: Constants | None = None,
    extra_rules: dict[str, RetentionRule] | None = None,
    executor=None,
) -> RouteTable:
    """Route table for the model's own rule followed by the four showcase rules."""
    rules = {model.rule.name: model.rule}
    rules.update(showcase_rules() if extra_rules is None else extra_rules)
    names = list(rules)
    fn = lambda name: evaluate_routes(model.with_rule(rules[name]), window, g_sup, quad_tol, constants)  # noqa: E731
    mapper = executor.map if executor is not None else map
    return RouteTable(list(zip(names, mapper(fn, names))))


def coupling_scaling_exponent(rule: RetentionRule, mus) -> float:
    """Least-squares slope of log E|p(N) - m_p| against log mu."""
    mus = np.asarray(mus, dtype=float)
    vals = np.array([mean_abs_dev(rule, float(m)) for m in mus])
    return float(np.polyfit(np.log(mus), np.log(vals), 1)[0])
