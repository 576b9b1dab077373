"""Registration schedules and their flat ``key = value`` text format.

A file holds global keys followed by one ``[level]`` section per pyramid
level, coarse to fine::

    lambda = 0.005
    n_alpha = 7

    [level]
    subsample_factor = 4
    sigma = 5
    control_points = 10
    ...
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LevelConfig:
    subsample_factor: int = 1
    sigma: float = 0.0
    control_points: tuple[int, ...] = (10,)
    iterations: int = 100
    sampling_fraction: float = 0.01
    d_max_over_diameter: float = 0.1
    step_size: float = 1.0
    momentum: float = 0.5
    gw_m: float = 0.5
    gw_sigma: float = 1.0

    def __post_init__(self):
        cp = self.control_points
        if isinstance(cp, int):
            cp = (cp,)
        object.__setattr__(self, "control_points", tuple(int(c) for c in cp))
        checks = {
            "subsample_factor": self.subsample_factor >= 1,
            "sigma": self.sigma >= 0,
            "control_points": len(self.control_points) >= 1 and min(self.control_points) >= 1,
            "iterations": self.iterations >= 0,
            "sampling_fraction": 0 < self.sampling_fraction <= 1,
            "d_max_over_diameter": self.d_max_over_diameter > 0,
            "step_size": self.step_size > 0,
            "momentum": 0 <= self.momentum < 1,
            "gw_m": 0 <= self.gw_m <= 1,
            "gw_sigma": self.gw_sigma > 0,
        }
        for key, ok in checks.items():
            if not ok:
                raise ConfigError(f"{key}: value {getattr(self, key)!r} out of range")

    def controls_for(self, ndim: int) -> tuple[int, ...]:
        if len(self.control_points) == 1:
            return self.control_points * ndim
        if len(self.control_points) != ndim:
            raise ConfigError(f"control_points has {len(self.control_points)} entries for a {ndim}D image")
        return self.control_points


@dataclass(frozen=True)
class RegistrationConfig:
    levels: tuple[LevelConfig, ...]
    lam: float = 0.005
    n_alpha: int = 7
    beta: float = 1.2
    d_t: float = 20.0
    eps: float = 0.01
    normalize_q: float = 0.025
    hist_eq: bool = False
    hist_bins: int = 256
    t_gm: float = 1e-9
    fit_density: int = 3
    seed: int = 0

    def __post_init__(self):
        levels = tuple(self.levels)
        if not levels:
            raise ConfigError("at least one [level] section is required")
        for a, b in zip(levels, levels[1:]):
            if len(a.control_points) == len(b.control_points) and any(
                    y < x for x, y in zip(a.control_points, b.control_points)):
                raise ConfigError("control_points must be non-decreasing across levels")
        object.__setattr__(self, "levels", levels)
        checks = {
            "lambda": 0 <= self.lam <= 1,
            "n_alpha": self.n_alpha >= 1,
            "beta": self.beta >= 1,
            "d_t": self.d_t >= 0,
            "eps": self.eps >= 0,
            "normalize_q": 0 <= self.normalize_q < 50,
            "hist_bins": self.hist_bins >= 2,
            "t_gm": self.t_gm >= 0,
            "fit_density": self.fit_density >= 1,
        }
        for key, ok in checks.items():
            if not ok:
                raise ConfigError(f"{key}: value out of range")

    def replace(self, **kw) -> "RegistrationConfig":
        return dataclasses.replace(self, **kw)

    def replace_levels(self, **kw) -> "RegistrationConfig":
        return dataclasses.replace(self, levels=tuple(dataclasses.replace(lv, **kw) for lv in self.levels))


# key in file -> (attribute, parser)
def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


_GLOBAL_KEYS = {
    "lambda": ("lam", float),
    "n_alpha": ("n_alpha", int),
    "beta": ("beta", float),
    "d_t": ("d_t", float),
    "eps": ("eps", float),
    "normalize_q": ("normalize_q", float),
    "hist_eq": ("hist_eq", _parse_bool),
    "hist_bins": ("hist_bins", int),
    "t_gm": ("t_gm", float),
    "fit_density": ("fit_density", int),
    "seed": ("seed", int),
}
_LEVEL_KEYS = {
    "subsample_factor": int,
    "sigma": float,
    "control_points": _parse_ints,
    "iterations": int,
    "sampling_fraction": float,
    "d_max_over_diameter": float,
    "step_size": float,
    "momentum": float,
    "gw_m": float,
    "gw_sigma": float,
}


def parse_config_text(text: str, source: str = "<config>") -> RegistrationConfig:
    glob: dict = {}
    levels: list[dict] = []
    current = glob
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line != "[level]":
                raise ConfigError(f"{source}:{lineno}: unknown section {line}")
            current = {}
            levels.append(current)
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        table = _GLOBAL_KEYS if current is glob else _LEVEL_KEYS
        if key not in table:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in current:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        parser = table[key][1] if current is glob else table[key]
        try:
            current[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    try:
        lv = []
        for i, d in enumerate(levels, 1):
            try:
                lv.append(LevelConfig(**d))
            except ConfigError as exc:
                raise ConfigError(f"{source}: level {i}: {exc}") from None
        kw = {_GLOBAL_KEYS[k][0]: v for k, v in glob.items()}
        return RegistrationConfig(levels=tuple(lv), **kw)
    except ConfigError as exc:
        if str(exc).startswith(source):
            raise
        raise ConfigError(f"{source}: {exc}") from None


def parse_config(path) -> RegistrationConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return " ".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def serialize_config(cfg: RegistrationConfig) -> str:
    lines = [f"{key} = {_fmt(getattr(cfg, attr))}" for key, (attr, _) in _GLOBAL_KEYS.items()]
    for lv in cfg.levels:
        lines.append("")
        lines.append("[level]")
        lines.extend(f"{key} = {_fmt(getattr(lv, key))}" for key in _LEVEL_KEYS)
    return "\n".join(lines) + "\n"


CONFIG_DIR = Path(__file__).parent / "configs"


def preset(name: str) -> RegistrationConfig:
    """Bundled schedules: ``retinal`` (2D fundus), ``brain`` (3D MR), ``phantom`` (desk scale)."""
    path = CONFIG_DIR / f"{name}.cfg"
    if not path.exists():
        raise ConfigError(f"no preset named {name!r}")
    return parse_config(path)
