"""Retention rules p: N_0 -> [0, 1] and their discrete calculus."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit


class RuleError(ValueError):
    pass


def _check_prob(name: str, value: float) -> float:
    value = float(value)
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        raise RuleError(f"{name} must lie in [0, 1], got {value}")
    return value


class RetentionRule:
    """Base class. Subclasses implement ``_values`` on a non-negative integer array."""

    kind: str = "abstract"

    def __call__(self, n):
        arr = np.asarray(n)
        if np.any(arr < 0):
            raise RuleError("neighbour counts must be non-negative")
        out = self._values(arr.astype(np.int64))
        return float(out) if np.ndim(out) == 0 else out

    def _values(self, n: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def table(self, n_max: int) -> np.ndarray:
        return np.asarray(self._values(np.arange(n_max + 1, dtype=np.int64)), dtype=float)

    def finite_difference(self, k: int) -> float:
        return finite_difference(self, k)

    def lipschitz_modulus(self, n_max: int = 200) -> float:
        return lipschitz_modulus(self, n_max)

    def to_dict(self) -> dict:
        raise NotImplementedError

    @property
    def name(self) -> str:
        params = {k: v for k, v in self.to_dict().items() if k != "kind"}
        if not params:
            return self.kind
        inner = ",".join(f"{k}={v}" for k, v in params.items())
        return f"{self.kind}({inner})"


@dataclass(frozen=True)
class MaternI(RetentionRule):
    kind = "matern_i"

    def _values(self, n):
        return (n == 0).astype(float)

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class Geometric(RetentionRule):
    """p(n) = q s^n (soft core)."""

    q: float
    s: float
    kind = "geometric"

    def __post_init__(self):
        object.__setattr__(self, "q", _check_prob("q", self.q))
        object.__setattr__(self, "s", _check_prob("s", self.s))

    def _values(self, n):
        return self.q * np.power(self.s, n.astype(float))

    def to_dict(self):
        return {"kind": self.kind, "q": self.q, "s": self.s}


@dataclass(frozen=True)
class ClusterFavouring(RetentionRule):
    """p(n) = 1 - exp(-alpha n)."""

    alpha: float
    kind = "cluster"

    def __post_init__(self):
        if not self.alpha > 0:
            raise RuleError(f"alpha must be > 0, got {self.alpha}")
        object.__setattr__(self, "alpha", float(self.alpha))

    def _values(self, n):
        return -np.expm1(-self.alpha * n)

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha}


@dataclass(frozen=True)
class Logistic(RetentionRule):
    """p(n) = 1 / (1 + exp(beta (n - n0)))."""

    beta: float
    n0: float
    kind = "logistic"

    def __post_init__(self):
        if not self.beta >= 0:
            raise RuleError(f"beta must be >= 0, got {self.beta}")
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "n0", float(self.n0))

    def _values(self, n):
        return expit(-self.beta * (n - self.n0))

    def to_dict(self):
        return {"kind": self.kind, "beta": self.beta, "n0": self.n0}


@dataclass(frozen=True)
class Parity(RetentionRule):
    kind = "parity"

    def _values(self, n):
        return (n % 2 == 0).astype(float)

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class Constant(RetentionRule):
    """Independent thinning with retention probability ``c``."""

    c: float
    kind = "constant"

    def __post_init__(self):
        object.__setattr__(self, "c", _check_prob("c", self.c))

    def _values(self, n):
        return np.full(n.shape, self.c) if n.ndim else np.float64(self.c)

    def to_dict(self):
        return {"kind": self.kind, "c": self.c}


@dataclass(frozen=True)
class Table(RetentionRule):
    """Explicit values for n = 0..K and a constant tail for n > K."""

    values: tuple[float, ...]
    tail: float = 0.0
    kind = "table"

    def __post_init__(self):
        vals = tuple(_check_prob(f"values[{i}]", v) for i, v in enumerate(self.values))
        if not vals:
            raise RuleError("table needs at least one value")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "tail", _check_prob("tail", self.tail))

    def _values(self, n):
        arr = np.asarray(self.values)
        return np.where(n < len(arr), arr[np.minimum(n, len(arr) - 1)], self.tail)

    def to_dict(self):
        return {"kind": self.kind, "values": list(self.values), "tail": self.tail}


@dataclass(frozen=True)
class CountFavouring(Table):
    """Table rule with p(1) > p(0) (crowded points are favoured)."""

    kind = "count_favouring"

    def __post_init__(self):
        super().__post_init__()
        p = self.table(1)
        if not p[1] > p[0]:
            raise RuleError(f"count-favouring rule needs p(1) > p(0), got {p[0]}, {p[1]}")


RULE_KINDS = {
    "matern_i": MaternI,
    "geometric": Geometric,
    "cluster": ClusterFavouring,
    "logistic": Logistic,
    "parity": Parity,
    "constant": Constant,
    "table": Table,
    "count_favouring": CountFavouring,
}


def rule_from_dict(spec: dict) -> RetentionRule:
    """Build a rule from ``{"kind": ..., **params}``; raises RuleError with the bad field."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise RuleError("rule spec must be an object with a 'kind' field")
    kind = spec["kind"]
    if kind not in RULE_KINDS:
        raise RuleError(f"unknown rule kind {kind!r}; expected one of {sorted(RULE_KINDS)}")
    params = {k: v for k, v in spec.items() if k != "kind"}
    if kind in ("table", "count_favouring"):
        params = {"values": tuple(params.get("values", ())), "tail": params.get("tail", 0.0)}
    try:
        return RULE_KINDS[kind](**params)
    except TypeError as exc:
        raise RuleError(f"bad parameters for rule {kind!r}: {exc}") from None


def finite_difference(rule: RetentionRule, k: int) -> float:
    """k-th forward difference of p at 0: sum_j (-1)^j C(k, j) p(k - j)."""
    if k < 0:
        raise ValueError("order must be >= 0")
    p = rule.table(k)
    return math.fsum((-1) ** j * math.comb(k, j) * p[k - j] for j in range(k + 1))


def lipschitz_modulus(rule: RetentionRule, n_max: int = 200) -> float:
    """sup_k |p(k+1) - p(k)|, exact where the family allows it."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if isinstance(rule, MaternI) or isinstance(rule, Parity):
        return 1.0
    if isinstance(rule, Constant):
        return 0.0
    if isinstance(rule, Geometric):
        return rule.q * (1.0 - rule.s)
    if isinstance(rule, ClusterFavouring):
        return -math.expm1(-rule.alpha)
    if isinstance(rule, Logistic):
        # increments of a logistic curve peak next to n0
        hi = max(1, int(math.ceil(rule.n0)) + 2)
        return float(np.max(np.abs(np.diff(rule.table(hi)))))
    if isinstance(rule, Table):
        # values[K] -> tail is the last non-trivial step
        return float(np.max(np.abs(np.diff(rule.table(len(rule.values))))))
    return float(np.max(np.abs(np.diff(rule.table(n_max)))))


def showcase_rules() -> dict[str, RetentionRule]:
    """The four rules used to contrast the approximation routes."""
    return {
        "flat012": Table((0.6, 0.6, 0.6), tail=0.1),
        "matern_flat01": Table((1.0, 1.0), tail=0.0),
        "logistic": Logistic(beta=0.1, n0=3.0),
        "parity": Parity(),
    }
