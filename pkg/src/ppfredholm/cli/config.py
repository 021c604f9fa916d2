"""Sectioned run configuration: parsing, validation, resolution and serialization.

The document is INI-like.  Keys are lowercase snake case, lists are written
in brackets (``bounds = [0, 0, 1, 1]``).  Every key has a default, so a
resolved configuration lists all of them; serializing a resolved
configuration and parsing it again gives the same configuration.
"""
import configparser
import math
import os
from dataclasses import dataclass

from ..errors import ConfigError


@dataclass(frozen=True)
class Key:
    kind: str
    default: object
    choices: tuple = ()
    length: tuple = ()
    help: str = ""


SCHEMA = {
    "window": {
        "bounds": Key("floats", (0.0, 0.0, 1.0, 1.0), length=(4,), help="outer rectangle"),
        "hole": Key("floats", (0.35, 0.35, 0.65, 0.65), length=(0, 4),
                    help="unobserved rectangle; [] for none"),
        "file": Key("path", "", help="polygon CSV (ring,x,y) replacing bounds and hole"),
    },
    "mesh": {
        "target_edge": Key("float", 0.012),
        "file": Key("path", "", help="mesh text file written by save_mesh"),
        "cache_dir": Key("path", "", help="operator cache directory; empty disables caching"),
        "orders": Key("ints", (2, 4), length=(2,)),
    },
    "process": {
        "model": Key("choice", "matern", choices=("matern", "poisson")),
        "kappa": Key("float", 50.0),
        "mu": Key("float", 40.0),
        "radius": Key("float", 0.09),
        "intensity": Key("float", 100.0, help="Poisson intensity before thinning"),
    },
    "thinning": {
        "p": Key("str", "step", help="step, linear or a constant in [0, 1]"),
        "alpha1": Key("float", 0.8),
        "alpha2": Key("float", 0.2),
        "v": Key("float", 0.5),
    },
    "moments": {
        "intensity": Key("choice", "true", choices=("true", "constant", "piecewise_fit", "loglinear_fit")),
        "value": Key("float", 100.0, help="constant intensity"),
        "split": Key("float", 0.5, help="x1 split of the piecewise fit"),
        "pcf": Key("choice", "true", choices=("true", "poisson", "matern", "exp_plus_one",
                                              "exp_scaled", "empirical", "kernel", "matern_fit",
                                              "exp_plus_one_fit", "exp_scaled_fit")),
        "pcf_params": Key("floats", (), help="family parameters in declaration order"),
        "wrapped": Key("bool", True),
        "pcf_file": Key("path", ""),
        "fit_range": Key("floats", (), length=(0, 2)),
        "bandwidth": Key("float", 0.0, help="kernel half-width; 0 selects the default"),
        "normalization": Key("choice", "appendix", choices=("appendix", "main_text")),
    },
    "covariates": {
        "design": Key("choice", "linear", choices=("linear", "banded")),
        "files": Key("paths", (), help="covariate CSVs for the linear design"),
        "intercept": Key("bool", True),
        "fault": Key("path", ""),
        "volcano": Key("path", ""),
        "plate": Key("path", ""),
        "knots": Key("floats", (6.73, 43.48, 54.783, 112.0), length=(4,)),
        "fit_edge": Key("float", 0.0, help="quadrature mesh edge; 0 selects the default"),
        "synthetic": Key("bool", False, help="generate the synthetic analogue inputs"),
        "synthetic_points": Key("int", 1200),
    },
    "pattern": {
        "file": Key("path", ""),
        "clip": Key("bool", False),
    },
    "targets": {
        "bounds": Key("floats", (), length=(0, 4), help="defaults to window.hole"),
        "shape": Key("ints", (21, 21), length=(2,)),
        "file": Key("path", "", help="x,y CSV of target points"),
    },
    "study": {
        "kind": Key("choice", "goodness", choices=("goodness", "sensitivity")),
        "scenario": Key("choice", "p1", choices=("p1", "p2")),
        "radius": Key("float", 0.09),
        "kappa": Key("float", 50.0),
        "mu": Key("float", 40.0),
        "replicates": Key("int", 200),
        "full_n": Key("bool", False),
        "target_edge": Key("float", 0.0, help="0 selects 0.012 (goodness) or 0.024 (sensitivity)"),
        "grid": Key("ints", (), length=(0, 2)),
        "write_replicates": Key("bool", False),
    },
    "run": {
        "seed": Key("int", 0),
        "threads": Key("int", 0, help="0 means available parallelism"),
        "clamp": Key("bool", False),
        "variance": Key("bool", False),
        "svg": Key("bool", True),
        "output": Key("path", ""),
        "replicates": Key("int", 0, help="fit: number of simulated replicates"),
    },
}

FULL_N = {"goodness": 1000, "sensitivity": 250}


def _split_list(text, key):
    text = text.strip()
    if not (text.startswith("[") and text.endswith("]")):
        raise ConfigError(f"expected a bracketed list, got {text!r}", key)
    body = text[1:-1].strip()
    return [t.strip() for t in body.split(",")] if body else []


def _convert(kind, text, key, spec):
    try:
        if kind == "float":
            v = float(text)
            if not math.isfinite(v):
                raise ValueError
            return v
        if kind == "int":
            return int(text)
        if kind == "bool":
            low = text.strip().lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError
        if kind in ("str", "path"):
            return text.strip()
        if kind == "choice":
            v = text.strip().lower()
            if v not in spec.choices:
                raise ConfigError(f"must be one of {', '.join(spec.choices)}, got {text!r}", key)
            return v
        if kind in ("floats", "ints", "paths"):
            items = _split_list(text, key)
            conv = {"floats": float, "ints": int, "paths": str}[kind]
            vals = tuple(conv(t) for t in items)
            if kind == "floats" and not all(math.isfinite(v) for v in vals):
                raise ValueError
            if spec.length and len(vals) not in spec.length:
                want = " or ".join(str(n) for n in spec.length)
                raise ConfigError(f"expected {want} entries, got {len(vals)}", key)
            return vals
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"cannot parse {text!r} as {kind}", key) from None
    raise ConfigError(f"unsupported key type {kind}", key)


def _format(kind, value):
    if kind == "float":
        return repr(float(value))
    if kind == "bool":
        return "true" if value else "false"
    if kind in ("floats", "ints", "paths"):
        return "[" + ", ".join(repr(float(v)) if kind == "floats" else str(v) for v in value) + "]"
    return str(value)


class RunConfig:
    """Resolved configuration with attribute access per section.

    ``cfg.get("mesh.target_edge")`` and ``cfg.mesh["target_edge"]`` are
    equivalent.
    """

    def __init__(self, values, base_dir="."):
        self.values = values
        self.base_dir = base_dir

    def __getattr__(self, section):
        if section in SCHEMA:
            return self.values[section]
        raise AttributeError(section)

    def get(self, dotted):
        sec, key = dotted.split(".", 1)
        return self.values[sec][key]

    def path(self, dotted):
        """Path value resolved against the directory of the config file."""
        p = self.get(dotted)
        if not p:
            return ""
        return p if os.path.isabs(p) else os.path.normpath(os.path.join(self.base_dir, p))

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def to_text(self):
        return serialize(self)


def parse(text, base_dir=".", overrides=()):
    """Parse, validate and resolve a configuration document.

    ``overrides`` is a sequence of ``section.key=value`` strings applied
    after the document.
    """
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__",
                                   inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}".replace("\n", " ")) from None
    raw = {s: dict(cp[s]) for s in cp.sections()}
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        sec, key = dotted.strip().split(".", 1)
        raw.setdefault(sec, {})[key] = value
    values = {}
    for sec, keys in raw.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", sec)
        for key in keys:
            if key not in SCHEMA[sec]:
                raise ConfigError("unknown key", f"{sec}.{key}")
            if key != key.lower():
                raise ConfigError("keys must be lowercase", f"{sec}.{key}")
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, spec in keys.items():
            dotted = f"{sec}.{key}"
            if key in raw.get(sec, {}):
                values[sec][key] = _convert(spec.kind, raw[sec][key], dotted, spec)
            else:
                values[sec][key] = spec.default
    _resolve(values)
    _validate(values)
    return RunConfig(values, base_dir)


def load(path, overrides=()):
    if not os.path.exists(path):
        raise ConfigError(f"configuration file not found: {path}")
    with open(path) as fh:
        return parse(fh.read(), os.path.dirname(os.path.abspath(path)), overrides)


def serialize(cfg):
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key, spec in keys.items():
            lines.append(f"{key} = {_format(spec.kind, cfg.values[sec][key])}")
        lines.append("")
    return "\n".join(lines)


def _resolve(v):
    if not v["targets"]["bounds"] and v["window"]["hole"]:
        v["targets"]["bounds"] = v["window"]["hole"]
    st = v["study"]
    if st["target_edge"] == 0.0:
        st["target_edge"] = 0.012 if st["kind"] == "goodness" else 0.024
    if not st["grid"]:
        st["grid"] = (21, 21) if st["scenario"] == "p1" else (31, 11)
    if st["full_n"]:
        st["replicates"] = FULL_N[st["kind"]]
    if v["run"]["threads"] == 0:
        v["run"]["threads"] = os.cpu_count() or 1


def _validate(v):
    def need(cond, msg, key):
        if not cond:
            raise ConfigError(msg, key)

    x0, y0, x1, y1 = v["window"]["bounds"]
    need(x1 > x0 and y1 > y0, "bounds must be [xmin, ymin, xmax, ymax] with positive extent",
         "window.bounds")
    hole = v["window"]["hole"]
    if hole:
        need(x0 < hole[0] < hole[2] < x1 and y0 < hole[1] < hole[3] < y1,
             "hole must lie strictly inside the bounds", "window.hole")
    need(v["mesh"]["target_edge"] > 0, "must be positive", "mesh.target_edge")
    pr = v["process"]
    need(pr["kappa"] >= 0, "must be non-negative", "process.kappa")
    need(pr["mu"] >= 0, "must be non-negative", "process.mu")
    need(pr["radius"] > 0, "must be positive", "process.radius")
    need(pr["intensity"] >= 0, "must be non-negative", "process.intensity")
    th = v["thinning"]
    p = th["p"].lower()
    if p not in ("step", "linear"):
        try:
            val = float(p)
        except ValueError:
            raise ConfigError(f"must be step, linear or a number, got {th['p']!r}", "thinning.p") from None
        need(0.0 <= val <= 1.0, f"constant thinning {val:g} outside [0, 1]", "thinning.p")
    for k in ("alpha1", "alpha2"):
        need(0.0 <= th[k] <= 1.0, f"thinning probability {th[k]:g} outside [0, 1]", f"thinning.{k}")
    mo = v["moments"]
    need(mo["value"] >= 0, "must be non-negative", "moments.value")
    need(mo["bandwidth"] >= 0, "must be non-negative", "moments.bandwidth")
    arity = {"matern": 2, "exp_plus_one": 2, "exp_scaled": 2}
    if mo["pcf"] in arity:
        need(len(mo["pcf_params"]) == arity[mo["pcf"]],
             f"{mo['pcf']} needs {arity[mo['pcf']]} parameters", "moments.pcf_params")
    if mo["fit_range"]:
        need(0 <= mo["fit_range"][0] < mo["fit_range"][1], "must be [rmin, rmax] with rmin < rmax",
             "moments.fit_range")
    tg = v["targets"]
    need(all(n > 0 for n in tg["shape"]), "must be positive", "targets.shape")
    if tg["bounds"]:
        b = tg["bounds"]
        need(b[2] > b[0] and b[3] > b[1], "must have positive extent", "targets.bounds")
    st = v["study"]
    need(st["radius"] > 0, "must be positive", "study.radius")
    need(st["replicates"] >= 1, "must be at least 1", "study.replicates")
    need(st["target_edge"] > 0, "must be positive", "study.target_edge")
    need(v["run"]["threads"] >= 1, "must be at least 1", "run.threads")
    need(v["run"]["replicates"] >= 0, "must be non-negative", "run.replicates")
    need(v["covariates"]["synthetic_points"] > 0, "must be positive", "covariates.synthetic_points")
