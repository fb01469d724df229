"""Experiment configuration: sectioned TOML with exact-decimal numbers.

Floats are parsed as :class:`decimal.Decimal`, so values such as ``dt = 0.001``
survive parse -> serialize -> parse unchanged.  Validation errors carry the
line of the offending key.
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any

import tomli

from .errors import ConfigError

TESTS = ("solve", "simulate", "oracle", "flow", "markov", "ck", "fdd", "domination")
INITIAL_KINDS = ("dirac", "uniform", "gaussian", "barenblatt", "file")
Number = int | Decimal


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    tests: tuple[str, ...]
    coefficient: str
    coefficient_params: tuple[tuple[str, Any], ...]
    initial_kind: str
    initial_params: tuple[tuple[str, Any], ...]
    s: Decimal
    r: tuple[Decimal, ...]
    t: tuple[Decimal, ...]
    n_cells: int = 1024
    N: int = 100_000
    dt: Decimal = Decimal("0.001")
    kernel: str = "gaussian"
    bandwidth: str | Decimal = "silverman"
    n_boot: int = 200
    bin_factor: Decimal = Decimal("4")
    min_count: int = 200
    tolerances: tuple[tuple[str, Decimal], ...] = field(default_factory=tuple)

    def tol(self, key: str) -> float:
        d = dict(self.tolerances)
        return float(d.get(key, DEFAULT_TOLERANCES[key]))

    @property
    def output_times(self) -> list[float]:
        return sorted({float(self.s), *map(float, self.r), *map(float, self.t)})

    def replace(self, **kw) -> ExperimentConfig:
        return dataclasses.replace(self, **kw)


DEFAULT_TOLERANCES = {
    "oracle_l1": Decimal("0.01"),
    "oracle_w1": Decimal("0.05"),
    "flow_l1": Decimal("0.001"),
    "flow_w1": Decimal("0.05"),
    "setup_w1": Decimal("0.05"),
    "ck_small": Decimal("0.01"),
    "domination": Decimal("2.1"),
    "fdd_se": Decimal("3"),
}


def _line_of(text: str, section: str | None, key: str) -> int | None:
    cur = None
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for i, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"^\s*\[([^\]]+)\]", line)
        if m:
            cur = m.group(1).strip()
            continue
        if cur == section and pat.match(line):
            return i
    return None


class _Reader:
    def __init__(self, doc: dict, text: str, path: str | None):
        self.doc = doc
        self.text = text
        self.path = path

    def fail(self, section, key, msg):
        raise ConfigError(msg, _line_of(self.text, section, key) if key else None, self.path)

    def get(self, section, key, kind, default=dataclasses.MISSING):
        sec = self.doc.get(section, {})
        if key not in sec:
            if default is dataclasses.MISSING:
                raise ConfigError(f"missing key [{section}] {key}", None, self.path)
            return default
        v = sec[key]
        if kind == "int":
            if isinstance(v, bool) or not isinstance(v, int):
                self.fail(section, key, f"[{section}] {key} must be an integer")
        elif kind == "num":
            if isinstance(v, bool) or not isinstance(v, (int, Decimal)):
                self.fail(section, key, f"[{section}] {key} must be a number")
            if isinstance(v, Decimal) and not v.is_finite():
                self.fail(section, key, f"[{section}] {key} must be finite")
            v = Decimal(v) if isinstance(v, int) else v
        elif kind == "str":
            if not isinstance(v, str):
                self.fail(section, key, f"[{section}] {key} must be a string")
        elif kind == "numlist":
            if isinstance(v, (int, Decimal)) and not isinstance(v, bool):
                v = [v]
            if not isinstance(v, list) or not all(isinstance(x, (int, Decimal)) and not isinstance(x, bool)
                                                  for x in v):
                self.fail(section, key, f"[{section}] {key} must be a number or a list of numbers")
            v = tuple(Decimal(x) if isinstance(x, int) else x for x in v)
        elif kind == "strlist":
            if isinstance(v, str):
                v = [v]
            if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
                self.fail(section, key, f"[{section}] {key} must be a list of strings")
            v = tuple(v)
        return v


def _plain(v):
    if isinstance(v, dict):
        return tuple(sorted((k, _plain(x)) for k, x in v.items()))
    if isinstance(v, list):
        return tuple(_plain(x) for x in v)
    return v


def parse_config(text: str, path: str | None = None) -> ExperimentConfig:
    try:
        doc = tomli.loads(text, parse_float=Decimal)
    except tomli.TOMLDecodeError as e:
        m = re.search(r"line (\d+)", str(e))
        raise ConfigError(f"parse error: {e}", int(m.group(1)) if m else None, path) from e
    rd = _Reader(doc, text, path)
    known = {"experiment", "coefficients", "initial", "time", "numerics", "kde", "tolerances"}
    for sec in doc:
        if sec not in known:
            raise ConfigError(f"unknown section [{sec}]", _section_line(text, sec), path)

    name = rd.get("experiment", "name", "str", "experiment")
    if "seed" not in doc.get("experiment", {}):
        raise ConfigError("[experiment] seed is required (no silent nondeterminism)", None, path)
    seed = rd.get("experiment", "seed", "int")
    if not 0 <= seed < 2**64:
        rd.fail("experiment", "seed", "seed must fit in 64 unsigned bits")
    tests = rd.get("experiment", "tests", "strlist", ("solve",))
    for tname in tests:
        if tname not in TESTS:
            rd.fail("experiment", "tests", f"unknown test {tname!r}; choose from {', '.join(TESTS)}")

    coef = dict(doc.get("coefficients", {}))
    cname = coef.pop("name", None)
    if not isinstance(cname, str):
        raise ConfigError("[coefficients] name is required", _section_line(text, "coefficients"), path)

    init = dict(doc.get("initial", {}))
    ikind = init.pop("kind", "dirac")
    if ikind not in INITIAL_KINDS:
        rd.fail("initial", "kind", f"unknown initial kind {ikind!r}")

    s = rd.get("time", "s", "num", Decimal("0"))
    r = rd.get("time", "r", "numlist", ())
    t = rd.get("time", "t", "numlist")
    for key, seq in (("r", r), ("t", t)):
        if any(b <= a for a, b in zip(seq, seq[1:])):
            rd.fail("time", key, f"[time] {key} must be strictly increasing")
    if r and r[0] < s:
        rd.fail("time", "r", "[time] r must not precede s")
    if not t:
        rd.fail("time", "t", "[time] t must not be empty")
    if t[0] <= s:
        rd.fail("time", "t", "[time] t must come after s")
    if r and r[-1] > t[0]:
        rd.fail("time", "r", "[time] every r must precede the first t")

    n_cells = rd.get("numerics", "n_cells", "int", 1024)
    N = rd.get("numerics", "N", "int", 100_000)
    dt = rd.get("numerics", "dt", "num", Decimal("0.001"))
    if n_cells < 16:
        rd.fail("numerics", "n_cells", "n_cells must be at least 16")
    if N < 1:
        rd.fail("numerics", "N", "N must be positive")
    if dt <= 0:
        rd.fail("numerics", "dt", "dt must be positive")
    for tv in (*r, *t):
        if ((tv - s) / dt) % 1 != 0:
            rd.fail("numerics", "dt", f"dt must divide every time gap (fails at {tv})")

    kernel = rd.get("kde", "kernel", "str", "gaussian")
    if kernel not in ("gaussian", "epanechnikov", "histogram"):
        rd.fail("kde", "kernel", f"unknown kernel {kernel!r}")
    bw = doc.get("kde", {}).get("bandwidth", "silverman")
    if isinstance(bw, str):
        if bw != "silverman":
            rd.fail("kde", "bandwidth", "bandwidth must be 'silverman' or a positive number")
    else:
        bw = rd.get("kde", "bandwidth", "num")
        if bw <= 0:
            rd.fail("kde", "bandwidth", "bandwidth must be positive")
    n_boot = rd.get("kde", "n_boot", "int", 200)
    bin_factor = rd.get("kde", "bin_factor", "num", Decimal("4"))
    min_count = rd.get("kde", "min_count", "int", 200)
    if n_boot < 10:
        rd.fail("kde", "n_boot", "n_boot must be at least 10")
    if bin_factor <= 0:
        rd.fail("kde", "bin_factor", "bin_factor must be positive")

    tols = []
    for k, v in doc.get("tolerances", {}).items():
        if k not in DEFAULT_TOLERANCES:
            rd.fail("tolerances", k, f"unknown tolerance {k!r}")
        v = rd.get("tolerances", k, "num")
        if v <= 0:
            rd.fail("tolerances", k, f"tolerance {k} must be positive")
        tols.append((k, v))

    return ExperimentConfig(
        name=name,
        seed=seed,
        tests=tests,
        coefficient=cname,
        coefficient_params=_plain(coef),
        initial_kind=ikind,
        initial_params=_plain(init),
        s=s,
        r=r,
        t=t,
        n_cells=n_cells,
        N=N,
        dt=dt,
        kernel=kernel,
        bandwidth=bw,
        n_boot=n_boot,
        bin_factor=bin_factor,
        min_count=min_count,
        tolerances=tuple(sorted(tols)),
    )


def _section_line(text: str, section: str) -> int | None:
    for i, line in enumerate(text.splitlines(), start=1):
        if re.match(rf"^\s*\[{re.escape(section)}\]", line):
            return i
    return None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", None, str(path)) from e
    return parse_config(text, str(path))


# -- writing -------------------------------------------------------------------------


def _value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, Decimal):
        s = str(v)
        # TOML floats need a fraction or an exponent
        return s if any(ch in s for ch in ".eE") else s + ".0"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, tuple) and v and all(isinstance(x, tuple) and len(x) == 2 and isinstance(x[0], str)
                                          for x in v):
        return "{ " + ", ".join(f"{k} = {_value(x)}" for k, x in v) + " }"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialise {v!r}")


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialise the validated form back to TOML."""
    out = ["[experiment]", f"name = {_value(cfg.name)}", f"seed = {cfg.seed}",
           f"tests = {_value(list(cfg.tests))}", "", "[coefficients]", f"name = {_value(cfg.coefficient)}"]
    out += [f"{k} = {_value(v)}" for k, v in cfg.coefficient_params]
    out += ["", "[initial]", f"kind = {_value(cfg.initial_kind)}"]
    out += [f"{k} = {_value(v)}" for k, v in cfg.initial_params]
    out += ["", "[time]", f"s = {_value(cfg.s)}", f"r = {_value(list(cfg.r))}", f"t = {_value(list(cfg.t))}"]
    out += ["", "[numerics]", f"n_cells = {cfg.n_cells}", f"N = {cfg.N}", f"dt = {_value(cfg.dt)}"]
    out += ["", "[kde]", f"kernel = {_value(cfg.kernel)}", f"bandwidth = {_value(cfg.bandwidth)}",
            f"n_boot = {cfg.n_boot}", f"bin_factor = {_value(cfg.bin_factor)}", f"min_count = {cfg.min_count}"]
    if cfg.tolerances:
        out += ["", "[tolerances]"] + [f"{k} = {_value(v)}" for k, v in cfg.tolerances]
    return "\n".join(out) + "\n"


def to_float(v):
    if isinstance(v, Decimal):
        return float(v)
    if isinstance(v, tuple) and v and all(isinstance(x, tuple) and len(x) == 2 for x in v):
        return {k: to_float(x) for k, x in v}
    if isinstance(v, tuple):
        return [to_float(x) for x in v]
    return v
