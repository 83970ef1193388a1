"""Poisson sampling, neighbour counting and the mark-based thinning (plain and coupled)."""

from __future__ import annotations

import csv
import io
import itertools
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .analytic import Model, poisson_mixture
from .geometry import Window

# stream roles for seed derivation
ROLE_POINTS = 0
ROLE_MARKS = 1
ROLE_AUX = 2


class InvalidBoundError(ValueError):
    pass


class BufferViolationError(ValueError):
    pass


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    replicate_index: int = 0

    def rng(self, role: int = ROLE_POINTS) -> np.random.Generator:
        """Counter-based (Philox) stream keyed by (master seed, replicate, role)."""
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.replicate_index, role))
        return np.random.Generator(np.random.Philox(ss))


@dataclass
class PointPattern:
    points: np.ndarray
    window: Window
    marks: np.ndarray | None = None
    retained: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, self.window.dimension)
        if pts.ndim != 2 or pts.shape[1] != self.window.dimension:
            raise ValueError(f"points must have shape (n, {self.window.dimension})")
        self.points = pts
        if self.marks is not None:
            self.marks = np.asarray(self.marks, dtype=float)
            if self.marks.shape != (len(pts),):
                raise ValueError("marks must align with points")
            if np.any((self.marks < 0) | (self.marks > 1)):
                raise ValueError("marks must lie in [0, 1]")
        if self.retained is not None:
            self.retained = np.asarray(self.retained, dtype=bool)
            if self.retained.shape != (len(pts),):
                raise ValueError("retained flags must align with points")

    def __len__(self) -> int:
        return len(self.points)

    def kept(self) -> PointPattern:
        """The thinned pattern: retained points only."""
        if self.retained is None:
            return self
        keep = self.retained
        marks = None if self.marks is None else self.marks[keep]
        return PointPattern(self.points[keep], self.window, marks, np.ones(int(keep.sum()), bool))

    def restrict(self, window: Window) -> PointPattern:
        """Points inside ``window``, original order preserved."""
        inside = window.contains(self.points) if len(self) else np.zeros(0, bool)
        marks = None if self.marks is None else self.marks[inside]
        retained = None if self.retained is None else self.retained[inside]
        return PointPattern(self.points[inside], window, marks, retained)

    def translate(self, shift) -> PointPattern:
        shift = np.asarray(shift, dtype=float)
        return PointPattern(self.points + shift, self.window.translate(shift), self.marks, self.retained)

    # serialisation ---------------------------------------------------------

    def to_csv(self, header_comment: str | None = None) -> str:
        d = self.window.dimension
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(d)] + ["mark", "retained"])
        marks = self.marks if self.marks is not None else np.full(len(self), np.nan)
        retained = self.retained if self.retained is not None else np.ones(len(self), bool)
        for pt, m, k in zip(self.points, marks, retained):
            w.writerow([f"{v:.17g}" for v in pt] + [f"{m:.17g}", int(k)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, window: Window) -> PointPattern:
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        rows = list(csv.reader(lines[1:]))
        d = window.dimension
        if not rows:
            return cls(np.zeros((0, d)), window, np.zeros(0), np.zeros(0, bool))
        arr = np.array(rows, dtype=float)
        marks = arr[:, d]
        return cls(arr[:, :d], window, None if np.all(np.isnan(marks)) else marks, arr[:, d + 1] != 0)

    def to_bytes(self) -> bytes:
        """Little-endian: uint64 n, uint64 d, then n rows of float64 (x1..xd, mark, retained)."""
        n, d = self.points.shape
        marks = self.marks if self.marks is not None else np.full(n, np.nan)
        retained = self.retained if self.retained is not None else np.ones(n, bool)
        body = np.column_stack([self.points, marks, retained.astype(float)]).astype("<f8")
        return struct.pack("<QQ", n, d) + body.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, window: Window) -> PointPattern:
        n, d = struct.unpack_from("<QQ", data, 0)
        body = np.frombuffer(data, dtype="<f8", offset=16, count=n * (d + 2)).reshape(n, d + 2)
        marks = body[:, d]
        return cls(body[:, :d].copy(), window, None if n and np.all(np.isnan(marks)) else marks.copy(), body[:, d + 1] != 0)


Intensity = float | tuple[Callable[[np.ndarray], np.ndarray], float]


def sample_ppp(intensity: Intensity, window: Window, seed: SeedSpec) -> PointPattern:
    """Poisson process on ``window``.

    ``intensity`` is a constant, or a pair ``(density, bound)`` sampled by
    retaining points of the bounding homogeneous process with prob density/bound.
    """
    rng = seed.rng(ROLE_POINTS)
    d = window.dimension
    if isinstance(intensity, tuple):
        density, bound = intensity
    else:
        density, bound = None, float(intensity)
    if bound < 0:
        raise ValueError("intensity must be >= 0")
    n = rng.poisson(bound * window.volume()) if bound > 0 else 0
    pts = np.asarray(window.lower) + rng.random((n, d)) * window.sides
    if density is not None and n:
        ratio = np.asarray(density(pts), dtype=float) / bound
        if np.any(ratio > 1.0 + 1e-12):
            raise InvalidBoundError(f"density exceeds declared bound {bound} (max ratio {ratio.max():.6g})")
        pts = pts[rng.random(n) <= ratio]
    return PointPattern(pts, window)


def _neighbour_pairs(points: np.ndarray, radius: float):
    """Ordered pairs (i, j), i != j, with |x_i - x_j| <= radius, via a uniform cell grid."""
    n, d = points.shape
    if n < 2:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    # slightly inflated cells keep every in-range pair in adjacent cells despite rounding
    cell = radius * (1.0 + 1e-9)
    lo = points.min(axis=0)
    idx = np.floor((points - lo) / cell).astype(np.int64) + 1
    dims = tuple(int(v) for v in idx.max(axis=0) + 2)
    keys = np.ravel_multi_index(idx.T, dims)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    r2 = radius * radius
    out_i, out_j, out_d2 = [], [], []
    for offset in itertools.product((-1, 0, 1), repeat=d):
        nkeys = np.ravel_multi_index((idx + offset).T, dims)
        start = np.searchsorted(sorted_keys, nkeys, side="left")
        stop = np.searchsorted(sorted_keys, nkeys, side="right")
        lengths = stop - start
        total = int(lengths.sum())
        if total == 0:
            continue
        ii = np.repeat(np.arange(n), lengths)
        first = np.repeat(start - np.cumsum(lengths) + lengths, lengths)
        jj = order[first + np.arange(total)]
        diff = points[ii] - points[jj]
        d2 = np.einsum("ij,ij->i", diff, diff)
        keep = (d2 <= r2) & (ii != jj)
        out_i.append(ii[keep])
        out_j.append(jj[keep])
        out_d2.append(d2[keep])
    if not out_i:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    return np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_d2)


def neighbour_counts(points, r: float) -> np.ndarray:
    """n_r(x; X) for every x: other points in the closed ball B(x, r)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    ii, _, _ = _neighbour_pairs(pts, r)
    return np.bincount(ii, minlength=len(pts)).astype(np.int64)


def neighbour_counts_bruteforce(points, r: float) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    return (d2 <= r * r).sum(axis=1) - 1


def _prepare(pattern: PointPattern, model: Model, window: Window, seed: SeedSpec | None, marks):
    if not pattern.window.contains_window(window.dilate(model.r)):
        raise BufferViolationError(
            f"input window {pattern.window} does not contain the core window dilated by r={model.r}"
        )
    counts = neighbour_counts(pattern.points, model.r)
    inside = window.contains(pattern.points) if len(pattern) else np.zeros(0, bool)
    n_in = int(inside.sum())
    if marks is None:
        if seed is None:
            raise ValueError("need a seed or explicit marks")
        marks = seed.rng(ROLE_MARKS).random(n_in)
    marks = np.asarray(marks, dtype=float)
    if marks.shape != (n_in,):
        raise ValueError(f"expected {n_in} marks for the points in the core window, got {marks.shape}")
    return counts[inside], pattern.points[inside], marks


def thin(
    pattern: PointPattern,
    model: Model,
    window: Window,
    seed: SeedSpec | None = None,
    marks=None,
) -> PointPattern:
    """Neighbour-count thinning of a buffered input, reported on the core ``window``.

    Counts use the whole buffered input; a point of the core window is kept
    iff its mark U satisfies U <= p(n_r). The result holds every input point of
    the core window with its mark and retained flag; ``.kept()`` is T_r(X) on W.
    """
    counts, pts, u = _prepare(pattern, model, window, seed, marks)
    keep = u <= model.rule(counts) if len(counts) else np.zeros(0, bool)
    return PointPattern(pts, window, u, keep)


@dataclass
class CoupledThinning:
    dependent: PointPattern
    independent: PointPattern
    differ_count: int


def thin_coupled(
    pattern: PointPattern,
    model: Model,
    window: Window,
    seed: SeedSpec | None = None,
    marks=None,
    m_p: float | None = None,
) -> CoupledThinning:
    """Dependent thinning and independent m_p-thinning driven by the same marks."""
    counts, pts, u = _prepare(pattern, model, window, seed, marks)
    if m_p is None:
        m_p = poisson_mixture(model.rule, model.mu)
    dep = u <= model.rule(counts) if len(counts) else np.zeros(0, bool)
    ind = u <= m_p
    return CoupledThinning(
        dependent=PointPattern(pts, window, u, dep),
        independent=PointPattern(pts, window, u, ind),
        differ_count=int(np.count_nonzero(dep != ind)),
    )


def simulate_input(model: Model, window: Window, seed: SeedSpec, buffer: float | None = None) -> PointPattern:
    buffered = window.dilate(model.r if buffer is None else buffer)
    intensity = model.lam if model.homogeneous else (model.density, model.lam_bound)
    return sample_ppp(intensity, buffered, seed)


def simulate_thinning(model: Model, window: Window, seed: SeedSpec) -> PointPattern:
    return thin(simulate_input(model, window, seed), model, window, seed)


def simulate_coupled(model: Model, window: Window, seed: SeedSpec, m_p: float | None = None) -> CoupledThinning:
    return thin_coupled(simulate_input(model, window, seed), model, window, seed, m_p=m_p)


def run_replicates(task: Callable[[SeedSpec], object], master_seed: int, n_replicates: int, threads: int = 1) -> list:
    """Run ``task`` once per replicate index; results come back in index order."""
    if n_replicates < 1:
        raise ValueError("need at least one replicate")
    seeds = [SeedSpec(master_seed, i) for i in range(n_replicates)]
    if threads <= 1:
        return [task(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(task, seeds))
