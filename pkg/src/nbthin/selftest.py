"""Reduced-scale oracle and invariant checks run by ``nbthin selftest``."""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy import special

from .analytic import Model, g_decomposition, g_exact, g_oracle_triple_sum, intensity_homogeneous, poisson_mixture
from .bounds import correlation_integral, moderate_surrogate
from .estim import estimate_intensity, tv_discrepancy_mc
from .geometry import Window, omega, radial_integrals
from .rules import ClusterFavouring, Geometric, MaternI, Parity, finite_difference, lipschitz_modulus, showcase_rules
from .sim import SeedSpec, neighbour_counts, neighbour_counts_bruteforce, run_replicates, sample_ppp, simulate_thinning


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _oracle() -> CheckResult:
    worst = 0.0
    for rule in (MaternI(), Geometric(0.9, 0.5), ClusterFavouring(1.0), Parity()):
        for mu in (0.1, 1.0):
            model = Model.from_mu(2, mu, rule)
            for t in (0.5, 1.0, 1.5):
                worst = max(worst, abs(g_exact(model, t) - g_oracle_triple_sum(model, t)))
    return CheckResult("g vs triple-sum oracle", worst <= 1e-9, f"max error {worst:.2e}")


def _overlap() -> CheckResult:
    worst = 0.0
    for d in range(1, 6):
        for t in np.linspace(0.05, 1.95, 12):
            ref = special.betainc((d + 1) / 2, 0.5, 1 - t * t / 4)
            worst = max(worst, abs(omega(d, t) - ref))
        worst = max(worst, abs(radial_integrals(d).J_d - 1.0 / d))
    return CheckResult("overlap vs incomplete beta, J_d = 1/d", worst <= 1e-9, f"max error {worst:.2e}")


def _finite_range() -> CheckResult:
    ok = all(
        g_exact(Model.from_mu(2, 1.0, rule), t) == 1.0 for rule in showcase_rules().values() for t in (2.01, 2.5, 10.0)
    )
    return CheckResult("g = 1 beyond 2r", ok, "bit-exact" if ok else "non-unit value")


def _matern() -> CheckResult:
    model = Model(2, 0.05, MaternI(), lam=50.0)
    err = abs(intensity_homogeneous(model) - 50.0 * math.exp(-model.mu))
    ok = err <= 1e-12 and g_exact(model, 0.7) == 0.0
    return CheckResult("Matern-I intensity and contact zero", ok, f"intensity error {err:.2e}")


def _finite_differences() -> CheckResult:
    rule = Geometric(0.9, 0.5)
    # p(n) = sum_k C(n, k) Delta^k p(0)
    worst = max(
        abs(math.fsum(math.comb(n, k) * finite_difference(rule, k) for k in range(n + 1)) - rule(n)) for n in range(12)
    )
    return CheckResult("inverse finite-difference identity", worst <= 1e-12, f"max error {worst:.2e}")


def _poincare() -> CheckResult:
    worst = -math.inf
    for rule in (Geometric(0.9, 0.5), ClusterFavouring(1.0)):
        lip = lipschitz_modulus(rule)
        for mu in (0.5, 2.0, 5.0):
            model = Model.from_mu(2, mu, rule)
            for t in (0.3, 1.0, 1.7):
                dec = g_decomposition(model, t)
                worst = max(worst, dec.variance - mu * omega(2, t) * lip**2)
            assert moderate_surrogate(model) >= correlation_integral(model)
    return CheckResult("Poincare variance domination", worst <= 1e-12, f"max excess {worst:.2e}")


def _neighbours(seed: int) -> CheckResult:
    pat = sample_ppp(400.0, Window.unit(2), SeedSpec(seed, 0))
    same = np.array_equal(neighbour_counts(pat.points, 0.05), neighbour_counts_bruteforce(pat.points, 0.05))
    return CheckResult("grid neighbour counts vs brute force", same, f"{len(pat)} points")


def _intensity_mc(seed: int, n: int) -> CheckResult:
    model = Model(2, 0.05, Geometric(0.9, 0.5), lam=50.0)
    w = Window.unit(2)
    reps = run_replicates(lambda s: simulate_thinning(model, w, s).kept(), seed, n)
    est = estimate_intensity(reps, w)
    target = intensity_homogeneous(model)
    z = abs(est.mean - target) / est.std_error
    return CheckResult("intensity Monte Carlo", z <= 4.0, f"{est.mean:.3f} vs {target:.3f} (z={z:.2f})")


def _coupling_mc(seed: int, n: int) -> CheckResult:
    model = Model(2, 0.05, MaternI(), lam=50.0)
    res = tv_discrepancy_mc(model, Window.unit(2), n, seed)
    z = abs(res.mean_differ_count.mean - res.analytic_mean) / res.mean_differ_count.std_error
    return CheckResult(
        "coupling mean differ count", z <= 4.0, f"{res.mean_differ_count.mean:.3f} vs {res.analytic_mean:.3f} (z={z:.2f})"
    )


def _determinism(seed: int) -> CheckResult:
    model = Model(2, 0.05, MaternI(), lam=50.0)
    w = Window.unit(2)
    task = lambda s: simulate_thinning(model, w, s).to_bytes()  # noqa: E731
    ok = run_replicates(task, seed, 6, threads=1) == run_replicates(task, seed, 6, threads=4)
    return CheckResult("thread-count determinism", ok, "identical" if ok else "outputs differ")


def _mixture_sanity() -> CheckResult:
    m = poisson_mixture(Parity(), 2.0)
    ref = 0.5 * (1 + math.exp(-4.0))
    return CheckResult("parity mixture closed form", abs(m - ref) <= 1e-13, f"error {abs(m - ref):.2e}")


def run_selftest(seed: int = 0, n_replicates: int = 40, report: Callable[[str], None] = print) -> list[CheckResult]:
    checks = [
        _oracle,
        _overlap,
        _finite_range,
        _matern,
        _finite_differences,
        _poincare,
        _mixture_sanity,
        lambda: _neighbours(seed),
        lambda: _intensity_mc(seed, n_replicates),
        lambda: _coupling_mc(seed, n_replicates),
        lambda: _determinism(seed),
    ]
    results = []
    for check in checks:
        try:
            res = check()
        except Exception as exc:  # a crash is a failed check
            res = CheckResult(getattr(check, "__name__", "check"), False, f"{type(exc).__name__}: {exc}")
        report(res.line())
        results.append(res)
    return results
