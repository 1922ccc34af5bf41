"""Experiment configuration files.

INI-style text: ``[section]`` headers, flat ``key = value`` lines and ``#``
comments.  Every key has a declared type; unknown sections or keys, missing
required keys and unparseable values are all reported together, each with a
line number.
"""
from dataclasses import dataclass, field

from .exceptions import ConfigurationError

SUBCOMMANDS = ("simulate", "bifurcate", "lyapunov", "sweep", "control", "plot")


def _parse_bool(text):
    low = text.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int(text):
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


def _parse_floats(text):
    return tuple(float(v) for v in text.split(","))


def _parse_ints(text):
    return tuple(_parse_int(v.strip()) for v in text.split(","))


def _parse_names(text):
    names = tuple(v.strip() for v in text.split(","))
    if not all(names):
        raise ValueError(f"empty name in {text!r}")
    return names


def _parse_str(text):
    if not text:
        raise ValueError("empty value")
    return text


_PARSERS = {
    "float": float,
    "int": _parse_int,
    "bool": _parse_bool,
    "str": _parse_str,
    "floats": _parse_floats,
    "ints": _parse_ints,
    "names": _parse_names,
}

SCHEMA = {
    "system": {
        "kind": "str",
        "initial": "floats",
        "sigma": "float", "rho": "float", "beta": "float",
        "c1": "float", "c2": "float", "l": "float",
        "r_coupling": "float", "r_inductor": "float",
        "ga": "float", "gb": "float", "bp": "float",
        "mu": "float", "mu_min": "float", "mu_max": "float", "n_mu": "int", "x0": "float",
        "r_min": "float", "r_max": "float", "n_r": "int",
        "c1_min": "float", "c1_max": "float", "n_c1": "int",
        "scroll_threshold": "float",
    },
    "integrator": {
        "dt": "float", "n_steps": "int", "transient_steps": "int", "stride": "int",
        "divergence_bound": "float", "renorm_interval": "int", "delta0": "float",
        "lyapunov_steps": "int",
    },
    "ann": {
        "net_shape": "ints", "learning_rate": "float", "init_scale": "float",
        "seed": "int", "zero_output_layer": "bool",
    },
    "control": {
        "control_interval": "int", "r_mult_min": "float", "r_mult_max": "float",
        "u_max": "float", "sensitivity_eps": "float", "duration": "float",
        "record_stride": "int", "snapshot_every": "int", "divergence_bound": "float",
        "obs_scale": "floats", "tol_fp": "float",
    },
    "objective": {
        "kind": "str", "v1_star": "float", "amplitude": "float", "frequency": "float",
        "index": "int",
    },
    "plot": {
        "input": "str", "x": "str", "y": "names", "title": "str",
    },
}

SECTION_ORDER = tuple(SCHEMA)

REQUIRED = {
    "simulate": {"system": ("kind", "initial"), "integrator": ("dt", "n_steps")},
    "bifurcate": {"system": ("kind", "mu_min", "mu_max", "n_mu"),
                  "integrator": ("n_steps", "transient_steps")},
    "lyapunov": {"system": ("kind",), "integrator": ("n_steps",)},
    "sweep": {"system": ("kind", "r_min", "r_max", "n_r", "c1_min", "c1_max", "n_c1"),
              "integrator": ("dt", "n_steps", "transient_steps")},
    "control": {"system": ("kind", "initial"), "integrator": ("dt",),
                "ann": ("net_shape", "learning_rate"),
                "control": ("control_interval", "duration"),
                "objective": ("kind",)},
    "plot": {"plot": ("input", "x", "y")},
}


class ConfigError(ConfigurationError):
    """All problems found in one config text."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class ExperimentSpec:
    """Typed sections of one experiment config.

    ``sections`` maps section name to ``{key: typed value}``.  ``lines``
    records where each section and key was defined, for error messages only;
    it does not take part in equality.
    """

    sections: dict
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def has(self, section, key):
        return key in self.sections.get(section, {})

    def require(self, subcommand):
        """Raise :class:`ConfigError` naming every key ``subcommand`` needs but lacks."""
        if subcommand not in REQUIRED:
            raise ConfigError([f"unknown subcommand {subcommand!r}"])
        errors = []
        for section, keys in REQUIRED[subcommand].items():
            where = self.lines.get((section, None))
            loc = f"line {where}" if where else "end of file"
            for key in keys:
                if not self.has(section, key):
                    errors.append(f"{loc}: missing required key '{key}' in [{section}]")
        if errors:
            raise ConfigError(errors)
        return self

    def with_value(self, section, key, value):
        sections = {name: dict(body) for name, body in self.sections.items()}
        sections.setdefault(section, {})[key] = value
        return ExperimentSpec(sections, dict(self.lines))

    def serialize(self):
        return serialize(self)


def parse_config(text, subcommand=None):
    """Parse config ``text``; with ``subcommand`` also check its required keys."""
    sections = {}
    lines = {}
    errors = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if name not in SCHEMA:
                errors.append(f"line {lineno}: unknown section [{name}]")
                current = None
                continue
            if name in sections:
                errors.append(f"line {lineno}: duplicate section [{name}]")
            current = name
            sections.setdefault(name, {})
            lines[(name, None)] = lineno
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if current is None:
            if not any(e.startswith(f"line {lineno}") for e in errors):
                errors.append(f"line {lineno}: key '{key}' outside a known section")
            continue
        kind = SCHEMA[current].get(key)
        if kind is None:
            errors.append(f"line {lineno}: unknown key '{key}' in [{current}]")
            continue
        if key in sections[current]:
            errors.append(f"line {lineno}: duplicate key '{key}' in [{current}]")
            continue
        try:
            sections[current][key] = _PARSERS[kind](value)
        except ValueError:
            errors.append(f"line {lineno}: cannot parse {value!r} as {kind} for '{key}'")
            continue
        lines[(current, key)] = lineno
    if errors:
        raise ConfigError(errors)
    spec = ExperimentSpec(sections, lines)
    if subcommand is not None:
        spec.require(subcommand)
    return spec


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    return str(value)


def serialize(spec):
    """Render ``spec`` back to config text that reparses to an equal spec."""
    chunks = []
    for name in SECTION_ORDER:
        if name not in spec.sections:
            continue
        body = [f"[{name}]"]
        for key in SCHEMA[name]:
            if key in spec.sections[name]:
                body.append(f"{key} = {_format_value(spec.sections[name][key])}")
        chunks.append("\n".join(body))
    return "\n\n".join(chunks) + "\n"


def load_config(path, subcommand=None):
    with open(path) as fh:
        return parse_config(fh.read(), subcommand)
