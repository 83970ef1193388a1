"""Run configuration: parsing with path-aware diagnostics, defaults, canonical hashing."""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analytic import HalfSpaceDensity, LinearDensity, Model
from .bounds import Constants
from .estim import BoxIndicator
from .geometry import Window
from .rules import RuleError, rule_from_dict

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_REQUIRED = object()
# fields that change how a run executes but not what it produces
RUNTIME_FIELDS = ("threads", "out")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class _Reader:
    """Pops typed fields out of one JSON object, tracking the path for errors."""

    def __init__(self, data, path: str):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(path, f"expected an object, got {type(data).__name__}")
        self.data = data
        self.path = path
        self.used: set[str] = set()

    def at(self, key: str) -> str:
        return f"{self.path}.{key}"

    def raw(self, key: str, default=_REQUIRED):
        self.used.add(key)
        if key not in self.data or self.data[key] is None:
            if default is _REQUIRED:
                raise ConfigError(self.at(key), "required field is missing")
            return copy.deepcopy(default)
        return self.data[key]

    def number(self, key, default=_REQUIRED, *, positive=False, nonneg=False) -> float:
        v = self.raw(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(self.at(key), f"expected a finite number, got {v!r}")
        if positive and not v > 0:
            raise ConfigError(self.at(key), f"must be > 0, got {v}")
        if nonneg and v < 0:
            raise ConfigError(self.at(key), f"must be >= 0, got {v}")
        return float(v)

    def integer(self, key, default=_REQUIRED, *, minimum=None, maximum=None) -> int:
        v = self.raw(key, default)
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(self.at(key), f"expected an integer, got {v!r}")
        if minimum is not None and v < minimum:
            raise ConfigError(self.at(key), f"must be >= {minimum}, got {v}")
        if maximum is not None and v > maximum:
            raise ConfigError(self.at(key), f"must be <= {maximum}, got {v}")
        return v

    def boolean(self, key, default=_REQUIRED) -> bool:
        v = self.raw(key, default)
        if not isinstance(v, bool):
            raise ConfigError(self.at(key), f"expected true or false, got {v!r}")
        return v

    def choice(self, key, options, default=_REQUIRED) -> str:
        v = self.raw(key, default)
        if v not in options:
            raise ConfigError(self.at(key), f"expected one of {list(options)}, got {v!r}")
        return v

    def numbers(self, key, default=_REQUIRED, *, length=None, positive=False, integer=False) -> list:
        v = self.raw(key, default)
        if not isinstance(v, list):
            raise ConfigError(self.at(key), f"expected a list, got {type(v).__name__}")
        if length is not None and len(v) != length:
            raise ConfigError(self.at(key), f"expected {length} entries, got {len(v)}")
        out = []
        for i, x in enumerate(v):
            p = f"{self.at(key)}[{i}]"
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
                raise ConfigError(p, f"expected a finite number, got {x!r}")
            if integer and not isinstance(x, int):
                raise ConfigError(p, f"expected an integer, got {x!r}")
            if positive and not x > 0:
                raise ConfigError(p, f"must be > 0, got {x}")
            out.append(int(x) if integer else float(x))
        return out

    def sub(self, key, required=False) -> _Reader:
        return _Reader(self.raw(key, _REQUIRED if required else {}), self.at(key))

    def finish(self) -> None:
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(self.at(extra[0]), "unknown field")


# ---------------------------------------------------------------------------
# section parsers; each returns a fully defaulted plain dict


def _parse_rule(rd: _Reader) -> dict:
    spec = dict(rd.data)
    rd.used.update(spec)
    try:
        rule = rule_from_dict(spec)
    except RuleError as exc:
        # point at the parameter when the message starts with its name
        head = re.match(r"(\w+)(\[\d+\])?", str(exc))
        path = rd.at(head.group(0)) if head and head.group(1) in spec else rd.path
        raise ConfigError(path, str(exc)) from None
    return rule.to_dict()


def _parse_density(rd: _Reader, d: int) -> dict:
    kind = rd.choice("kind", ("constant", "halfspace", "linear"))
    if kind == "constant":
        out = {"kind": kind, "value": rd.number("value", nonneg=True)}
    elif kind == "halfspace":
        out = {
            "kind": kind,
            "value": rd.number("value", nonneg=True),
            "low": rd.number("low", 0.0, nonneg=True),
            "axis": rd.integer("axis", 0, minimum=0, maximum=d - 1),
            "threshold": rd.number("threshold", 0.5),
        }
    else:
        out = {
            "kind": kind,
            "intercept": rd.number("intercept"),
            "gradient": rd.numbers("gradient", length=d),
        }
    rd.finish()
    return out


def _parse_box(rd: _Reader, d: int, default_lower, default_upper) -> dict:
    lower = rd.numbers("lower", default_lower, length=d)
    upper = rd.numbers("upper", default_upper, length=d)
    for i, (a, b) in enumerate(zip(lower, upper)):
        if not b > a:
            raise ConfigError(f"{rd.at('upper')}[{i}]", f"must exceed lower bound {a}, got {b}")
    rd.finish()
    return {"lower": lower, "upper": upper}


def _parse_laplace(rd: _Reader, d: int, window: dict) -> dict:
    lo, hi = np.asarray(window["lower"]), np.asarray(window["upper"])
    box = _parse_box(rd.sub("box"), d, list(lo + 0.25 * (hi - lo)), list(lo + 0.75 * (hi - lo)))
    out = {"box": box, "height": rd.number("height", 0.5, nonneg=True)}
    rd.finish()
    return out


def _parse_constants(rd: _Reader) -> dict:
    base = Constants().to_dict()
    out = {k: rd.number(k, v, positive=True) for k, v in base.items()}
    rd.finish()
    return out


def _parse(data: dict) -> dict:
    root = _Reader(data, "$")
    out: dict = {
        "seed": root.integer("seed", 0, minimum=0, maximum=2**64 - 1),
        "threads": root.integer("threads", 1, minimum=1),
        "out": root.raw("out", "out"),
        "format": root.choice("format", ("csv", "json"), "csv"),
    }
    if not isinstance(out["out"], str) or not out["out"]:
        raise ConfigError("$.out", "expected a non-empty path string")

    m = root.sub("model", required=True)
    d = m.integer("d", minimum=1, maximum=6)
    model = {"d": d, "r": m.number("r", positive=True), "rule": _parse_rule(m.sub("rule", required=True))}
    if "density" in m.data and m.data["density"] is not None:
        model["density"] = _parse_density(m.sub("density"), d)
        m.used.add("lambda")
        if m.data.get("lambda") is not None:
            raise ConfigError(m.at("lambda"), "give either lambda or density, not both")
    else:
        model["lambda"] = m.number("lambda", nonneg=True)
    m.finish()
    out["model"] = model

    window = _parse_box(root.sub("window"), d, [0.0] * d, [1.0] * d)
    out["window"] = window

    a = root.sub("analyze")
    tg = a.sub("t_grid")
    out["analyze"] = {
        "t_grid": {"n": tg.integer("n", 400, minimum=2), "t_max": tg.number("t_max", 2.2, positive=True)},
        "tol": a.number("tol", 1e-14, positive=True),
        "quad_tol": a.number("quad_tol", 1e-8, positive=True),
        "expansion_orders": a.numbers("expansion_orders", [0, 1, 2], integer=True),
        "expansion_mus": a.numbers("expansion_mus", [2.0**-j for j in range(3, 10)], positive=True),
        "expansion_t": a.numbers("expansion_t", [0.5, 1.5], positive=True),
        "points": a.raw("points", [list(0.5 * (np.asarray(window["lower"]) + window["upper"]))]),
    }
    tg.finish()
    for i, k in enumerate(out["analyze"]["expansion_orders"]):
        if k < 0:
            raise ConfigError(f"$.analyze.expansion_orders[{i}]", "must be >= 0")
    pts = out["analyze"]["points"]
    if not isinstance(pts, list) or not all(isinstance(p, list) and len(p) == d for p in pts):
        raise ConfigError("$.analyze.points", f"expected a list of {d}-vectors")
    out["analyze"]["points"] = [[float(v) for v in p] for p in pts]
    a.finish()

    s = root.sub("simulate")
    out["simulate"] = {
        "n_replicates": s.integer("n_replicates", 10, minimum=1),
        "mode": s.choice("mode", ("thin", "coupled"), "thin"),
        "write_patterns": s.boolean("write_patterns", True),
        "pattern_format": s.choice("pattern_format", ("csv", "bin"), "csv"),
    }
    s.finish()

    e = root.sub("estimate")
    out["estimate"] = {
        "n_replicates": e.integer("n_replicates", 100, minimum=1),
        "bin_width": e.number("bin_width", 0.1, positive=True),
        "bin_extent": e.number("bin_extent", 3.0, positive=True),
        "plugin": e.boolean("plugin", False),
        "control_variate": e.boolean("control_variate", False),
        "laplace": _parse_laplace(e.sub("laplace"), d, window),
    }
    e.finish()

    b = root.sub("bounds")
    out["bounds"] = {
        "g_sup": b.number("g_sup", 1.0, nonneg=True),
        "quad_tol": b.number("quad_tol", 1e-8, positive=True),
        "inhomog_quad_tol": b.number("inhomog_quad_tol", 1e-5, positive=True),
        "constants": _parse_constants(b.sub("constants")),
    }
    b.finish()

    st = root.sub("selftest")
    out["selftest"] = {"n_replicates": st.integer("n_replicates", 40, minimum=2)}
    st.finish()
    root.finish()
    return out


# ---------------------------------------------------------------------------


def _density(spec: dict, window: Window):
    """(density, bound over ``window``) for a density spec."""
    if spec["kind"] == "halfspace":
        f = HalfSpaceDensity(spec["value"], spec["low"], spec["axis"], spec["threshold"])
        return f, f.sup()
    f = LinearDensity(spec["intercept"], tuple(spec["gradient"]))
    vmin, vmax = f.extremes(window.lower, window.upper)
    if vmin < 0:
        raise ConfigError("$.model.density", f"linear density is negative on the buffered window (min {vmin:.6g})")
    return f, vmax


@dataclass
class RunConfig:
    data: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> RunConfig:
        return cls(_parse(copy.deepcopy(raw)))

    @classmethod
    def load(cls, path: str | Path, overrides: dict | None = None) -> RunConfig:
        path = Path(path)
        try:
            text = path.read_bytes()
        except OSError as exc:
            raise ConfigError("$", f"cannot read {path}: {exc.strerror}") from None
        try:
            raw = tomllib.loads(text.decode()) if path.suffix == ".toml" else json.loads(text)
        except (ValueError, UnicodeDecodeError) as exc:
            raise ConfigError("$", f"cannot parse {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("$", "top level must be an object")
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    @property
    def sha256(self) -> str:
        """Hash of the canonical config minus runtime-only fields (threads, output dir)."""
        content = {k: v for k, v in self.data.items() if k not in RUNTIME_FIELDS}
        return hashlib.sha256(json.dumps(content, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    def __getitem__(self, key):
        return self.data[key]

    # builders ---------------------------------------------------------------

    def window(self) -> Window:
        w = self.data["window"]
        return Window(tuple(w["lower"]), tuple(w["upper"]))

    def model(self) -> Model:
        m = self.data["model"]
        rule = rule_from_dict(m["rule"])
        dens = m.get("density")
        if dens is None:
            return Model(m["d"], m["r"], rule, lam=m["lambda"])
        if dens["kind"] == "constant":
            return Model(m["d"], m["r"], rule, lam=dens["value"])
        f, bound = _density(dens, self.window().dilate(m["r"]))
        return Model(m["d"], m["r"], rule, density=f, lam_bound=bound)

    def laplace_test(self) -> BoxIndicator:
        lap = self.data["estimate"]["laplace"]
        return BoxIndicator(Window(tuple(lap["box"]["lower"]), tuple(lap["box"]["upper"])), lap["height"])

    def constants(self) -> Constants:
        return Constants(**self.data["bounds"]["constants"])
