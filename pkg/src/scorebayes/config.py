"""Flat ``key = value`` experiment configuration."""
from dataclasses import dataclass, field

from .errors import ConfigError

EXAMPLES = ("vmf", "eqcorr", "regression", "custom")
U64_MAX = 2 ** 64 - 1


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _words(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _seed(text):
    v = int(text)
    if not 0 <= v <= U64_MAX:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


KEY_TYPES = {
    "example": str,
    "seed": _seed,
    "score": str,
    "gamma": float,
    "prior": str,
    "prior_method": str,
    "prior_mean": float,
    "prior_sd": float,
    "n": int,
    "q": int,
    "p": int,
    "kappa": float,
    "theta0": float,
    "mu": float,
    "sigma2": float,
    "rho": float,
    "beta": _floats,
    "eps": float,
    "delta": float,
    "free": _words,
    "data": str,
    "T": int,
    "burn_in": int,
    "thin": int,
    "calibrate": _bool,
    "grid_points": int,
    "replicates": int,
    "mc_n": int,
    "support_sd": float,
}


def _render(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_render(v) for v in value)
    return str(value)


@dataclass
class ExperimentConfig:
    """Typed key-value settings; ``seed`` is mandatory."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        if "seed" not in self.values:
            raise ConfigError("config must set seed", "config")
        ex = self.values.get("example")
        if ex is not None and ex not in EXAMPLES:
            raise ConfigError(f"unknown example {ex!r}; expected one of {EXAMPLES}", "config")

    @property
    def seed(self):
        return self.values["seed"]

    def get(self, key, default=None):
        if key not in KEY_TYPES:
            raise KeyError(key)
        return self.values.get(key, default)

    def to_text(self):
        return "".join(f"{k} = {_render(self.values[k])}\n" for k in sorted(self.values))

    @classmethod
    def from_text(cls, text, overrides=None):
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value", "config")
            key, _, val = (s.strip() for s in line.partition("="))
            if key not in KEY_TYPES:
                raise ConfigError(f"line {lineno}: unknown key {key!r}", "config")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}", "config")
            try:
                values[key] = KEY_TYPES[key](val)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}", "config") from exc
        values.update(overrides or {})
        return cls(values)

    @classmethod
    def load(cls, path, overrides=None):
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}", "config") from exc
        return cls.from_text(text, overrides)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())
