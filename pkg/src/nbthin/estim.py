"""Empirical estimators confronting simulated replicates with the analytic values."""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .analytic import Model, g_exact, intensity_homogeneous, mean_abs_dev, poisson_mixture
from .geometry import Window, shift_overlap_volume, unit_ball_volume
from .sim import PointPattern, _neighbour_pairs, run_replicates, simulate_coupled


@dataclass(frozen=True)
class Estimate:
    mean: float
    std_error: float
    n: int


def summarise(values) -> Estimate:
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n == 0:
        raise ValueError("no replicates to aggregate")
    mean = math.fsum(values) / n
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return Estimate(mean, se, n)


@dataclass(frozen=True)
class ReplicateSummary:
    replicate_index: int
    count_in_W: int
    differ_count: int | None = None
    laplace_values: tuple[float, ...] | None = None


def estimate_intensity(replicates: Sequence[PointPattern], window: Window) -> Estimate:
    """Mean number of points per unit volume of ``window`` over replicates."""
    if not replicates:
        raise ValueError("empty replicate list")
    vol = window.volume()
    return summarise([len(p.restrict(window)) / vol for p in replicates])


def default_bins(r: float, width_fraction: float = 0.1, extent: float = 3.0) -> np.ndarray:
    """Bin edges on (0, extent r] of width ``width_fraction * r``; r is an edge."""
    n = int(round(extent / width_fraction))
    return r * np.arange(n + 1) * width_fraction


@dataclass
class GEstimate:
    bin_lo: np.ndarray
    bin_hi: np.ndarray
    g_hat: np.ndarray
    std_error: np.ndarray
    g_exact: np.ndarray | None
    n_replicates: int

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "g_hat", "se", "g_exact"])
        exact = self.g_exact if self.g_exact is not None else np.full(len(self.g_hat), np.nan)
        for row in zip(self.bin_lo, self.bin_hi, self.g_hat, self.std_error, exact):
            w.writerow([f"{v:.17g}" for v in row])
        return buf.getvalue()


def _pair_weights(pattern: PointPattern, window: Window, r_max: float):
    pts = pattern.points
    ii, jj, d2 = _neighbour_pairs(pts, r_max)
    h = pts[jj] - pts[ii]
    return np.sqrt(d2), 1.0 / shift_overlap_volume(window, h)


def estimate_g(
    replicates: Sequence[PointPattern],
    model: Model,
    window: Window,
    bins=None,
    plugin: bool = False,
    with_exact: bool = True,
) -> GEstimate:
    """Translation-corrected binned pair correlation, averaged over replicates.

    Each ordered pair at distance in bin b contributes 1/|W cap (W - h)|. The
    sum is divided by lambda'^2 times the shell volume of b, where lambda' is
    the analytic intensity (or, with ``plugin=True``, the replicate's own
    intensity estimate). Standard errors come from the replicate spread.
    """
    if not replicates:
        raise ValueError("empty replicate list")
    edges = default_bins(model.r) if bins is None else np.asarray(bins, dtype=float)
    if np.any(np.diff(edges) <= 0) or edges[0] < 0:
        raise ValueError("bin edges must be increasing and non-negative")
    v_d = unit_ball_volume(model.d)
    shell = v_d * (edges[1:] ** model.d - edges[:-1] ** model.d)
    if np.any(shell <= 0):
        raise ValueError("bin with zero shell volume")
    lam_prime = intensity_homogeneous(model)
    vol = window.volume()
    per_rep = np.empty((len(replicates), len(shell)))
    for k, pat in enumerate(replicates):
        pat = pat.restrict(window)
        dist, wts = _pair_weights(pat, window, edges[-1])
        # right-closed bins (lo, hi]; pairs at distance exactly r fall in the contact bin
        b = np.searchsorted(edges, dist, side="left") - 1
        ok = (b >= 0) & (b < len(shell))
        sums = np.bincount(b[ok], weights=wts[ok], minlength=len(shell))
        lam = len(pat) / vol if plugin else lam_prime
        per_rep[k] = sums / (lam * lam * shell) if lam > 0 else np.nan
    means = np.array([math.fsum(col) / len(col) for col in per_rep.T])
    ses = per_rep.std(axis=0, ddof=1) / math.sqrt(len(replicates)) if len(replicates) > 1 else np.full(len(shell), np.inf)
    exact = None
    if with_exact:
        mids = 0.5 * (edges[1:] + edges[:-1]) / model.r
        exact = np.array([g_exact(model, float(t)) if t > 0 else np.nan for t in mids])
    return GEstimate(edges[:-1], edges[1:], means, ses, exact, len(replicates))


def empirical_laplace(
    replicates: Sequence[PointPattern],
    g_test: Callable[[np.ndarray], np.ndarray],
    control: Sequence[PointPattern] | None = None,
    control_mean: float | None = None,
) -> Estimate:
    """Replicate average of exp(-sum_y g_test(y)).

    With ``control`` (patterns of known Laplace functional ``control_mean``,
    paired with the replicates) a control-variate estimator with estimated
    optimal coefficient is returned instead.
    """
    if not replicates:
        raise ValueError("empty replicate list")

    def values(pats):
        return np.array([math.exp(-float(np.sum(g_test(p.points)))) if len(p) else 1.0 for p in pats])

    y = values(replicates)
    if control is None:
        return summarise(y)
    if control_mean is None or len(control) != len(replicates):
        raise ValueError("control patterns must pair with replicates and carry a known mean")
    c = values(control)
    cov = np.cov(y, c, ddof=1)
    beta = cov[0, 1] / cov[1, 1] if cov[1, 1] > 0 else 0.0
    return summarise(y - beta * (c - control_mean))


@dataclass(frozen=True)
class BoxIndicator:
    """Test function ``height * 1_box`` for Laplace functionals."""

    box: Window
    height: float

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.size == 0:
            return np.zeros(0)
        return self.height * self.box.contains(pts)

    @property
    def sup(self) -> float:
        return abs(self.height)

    def poisson_log_laplace(self, lam: float) -> float:
        """log E exp(-sum g) for a Poisson process of intensity ``lam`` covering the box."""
        return -lam * self.box.volume() * -math.expm1(-self.height)


@dataclass(frozen=True)
class TVDiscrepancy:
    p_differ: Estimate
    mean_differ_count: Estimate
    analytic_mean: float


def tv_discrepancy_mc(model: Model, window: Window, n_replicates: int, master_seed: int, threads: int = 1) -> TVDiscrepancy:
    """Empirical P{T_r(X) and the independent thinning differ on W} and mean D_W."""
    m_p = poisson_mixture(model.rule, model.mu)
    counts = run_replicates(
        lambda s: simulate_coupled(model, window, s, m_p=m_p).differ_count, master_seed, n_replicates, threads
    )
    counts = np.asarray(counts, dtype=float)
    return TVDiscrepancy(
        p_differ=summarise(counts >= 1),
        mean_differ_count=summarise(counts),
        analytic_mean=model.lam * window.volume() * mean_abs_dev(model.rule, model.mu),
    )
