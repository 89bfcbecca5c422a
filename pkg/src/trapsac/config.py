"""Experiment configuration: presets, INI files and environment overrides.

Files use ``[section]`` headers with ``key = value`` lines.  Sections:
``experiment``, ``scenario``, ``trap``, ``idm``, ``mobil``, ``reward``, ``sac``
and ``heuristic``.  Keys are the dataclass field names; tuples are written as
comma-separated numbers.  Any key can also be set from the environment as
``TRAPSAC_<SECTION>_<KEY>`` (upper case).
"""

import configparser
from dataclasses import dataclass, field, fields, replace, asdict
import hashlib
import json
import os

from .env import RewardWeights, ScenarioConfig
from .heuristic import HeuristicParams
from .sac import SacConfig
from .traffic import IdmParams, MobilParams, TrapParams

ENV_PREFIX = "TRAPSAC_"
DEMO_MODES = ("none", "margin", "reward-aug")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    heuristic: HeuristicParams = field(default_factory=HeuristicParams)
    soft_constraint: bool = False
    demo_buffer: bool = False
    demo_mode: str = "none"
    demo_path: str = ""
    demo_episodes: int = 200
    beta_init: float = 0.6
    beta_horizon: int = 1000
    reward_bonus: float = 2.0
    episodes: int = 3000
    eval_every: int = 100
    eval_episodes: int = 20
    seed: int = 0
    rule_only: bool = False

    def __post_init__(self):
        if self.demo_mode not in DEMO_MODES:
            raise ConfigError(f"demo_mode must be one of {DEMO_MODES}")
        if self.demo_mode != "none" and not self.demo_buffer:
            raise ConfigError("demo_mode requires demo_buffer")
        if self.demo_buffer and self.demo_mode == "none":
            raise ConfigError("demo_buffer needs demo_mode margin or reward-aug")
        if self.episodes < 0 or self.eval_episodes < 0 or self.eval_every < 0:
            raise ConfigError("episode counts must be non-negative")
        if not 0.0 <= self.beta_init <= 1.0:
            raise ConfigError("beta_init must lie in [0, 1]")

    def as_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Stable short hash of every setting (used to key cached results)."""
        blob = json.dumps(self.as_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


PRESETS = {
    "sac": {},
    "soft-constraint": {"soft_constraint": True},
    "offline-replay": {"demo_buffer": True, "demo_mode": "reward-aug"},
    "ours": {"soft_constraint": True, "demo_buffer": True, "demo_mode": "reward-aug"},
    "rule": {"rule_only": True},
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ExperimentConfig(**{**PRESETS[name], **overrides})


# -- text coercion -------------------------------------------------------------

def _coerce(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if isinstance(default, int) or (default is None and text.lstrip("-").isdigit()):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        parts = [p for p in text.replace("(", "").replace(")", "").split(",") if p.strip()]
        kind = type(default[0]) if default else float
        return tuple(kind(p) for p in parts)
    if default is None:
        if text.lower() in ("", "none"):
            return None
        low = text.lower()
        if low in ("true", "false"):
            return low == "true"
        return int(text)
    return text


# section name -> (path of attribute inside ExperimentConfig)
_SECTIONS = {
    "experiment": (),
    "scenario": ("scenario",),
    "trap": ("scenario", "trap"),
    "idm": ("scenario", "idm"),
    "mobil": ("scenario", "mobil"),
    "reward": ("scenario", "weights"),
    "sac": ("sac",),
    "heuristic": ("heuristic",),
}
_NESTED = (ScenarioConfig, SacConfig, HeuristicParams, TrapParams, IdmParams, MobilParams,
           RewardWeights)


def _get(cfg, path):
    for p in path:
        cfg = getattr(cfg, p)
    return cfg


def _put(cfg, path, inner):
    if not path:
        return inner
    return replace(cfg, **{path[0]: _put(getattr(cfg, path[0]), path[1:], inner)})


def _parse(cfg: ExperimentConfig, section: str, key: str, text: str):
    section = section.lower()
    key = key.lower().replace("-", "_")
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section [{section}]")
    path = _SECTIONS[section]
    target = _get(cfg, path)
    names = {f.name.lower(): f.name for f in fields(target)}
    if key not in names:
        raise ConfigError(f"unknown key {key!r} in [{section}]")
    key = names[key]
    default = getattr(target, key)
    if isinstance(default, _NESTED):
        raise ConfigError(f"[{section}] {key} is a nested section, set its keys instead")
    try:
        return path, key, _coerce(text, default)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from None


def apply_settings(cfg: ExperimentConfig, items) -> ExperimentConfig:
    """Apply ``(section, key, text)`` triples together.

    Each section is replaced in one step, innermost first, so settings that are
    only valid in combination (``demo_buffer`` with ``demo_mode``) can be given
    in any order.
    """
    pending = {}
    for section, key, text in items:
        path, key, value = _parse(cfg, section, key, text)
        pending.setdefault(path, {})[key] = value
    for path in sorted(pending, key=len, reverse=True):
        try:
            cfg = _put(cfg, path, replace(_get(cfg, path), **pending[path]))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
    return cfg


def apply_setting(cfg: ExperimentConfig, section: str, key: str, text: str) -> ExperimentConfig:
    return apply_settings(cfg, [(section, key, text)])


def apply_file(cfg: ExperimentConfig, path) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read(path, encoding="utf-8")
    return apply_settings(cfg, [(section, key, text) for section in parser.sections()
                                for key, text in parser.items(section)])


def apply_environ(cfg: ExperimentConfig, environ=None) -> ExperimentConfig:
    """Apply ``TRAPSAC_<SECTION>_<KEY>`` variables (the numba switch is ignored)."""
    environ = os.environ if environ is None else environ
    items = []
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX) or name == ENV_PREFIX + "NUMBA":
            continue
        section, _, key = name[len(ENV_PREFIX):].lower().partition("_")
        if section in _SECTIONS and key:
            items.append((section, key, environ[name]))
    return apply_settings(cfg, items)


def apply_assignments(cfg: ExperimentConfig, assignments) -> ExperimentConfig:
    """Apply ``section.key=value`` strings such as ``sac.gamma=0.9``."""
    items = []
    for item in assignments or ():
        lhs, sep, value = item.partition("=")
        section, dot, key = lhs.partition(".")
        if not sep or not dot:
            raise ConfigError(f"expected section.key=value, got {item!r}")
        items.append((section, key, value))
    return apply_settings(cfg, items)


def dump(cfg: ExperimentConfig) -> str:
    """INI text that :func:`apply_file` maps back onto ``cfg``."""
    lines = []
    for section, path in _SECTIONS.items():
        target = _get(cfg, path)
        lines.append(f"[{section}]")
        for f in fields(target):
            value = getattr(target, f.name)
            if isinstance(value, _NESTED):
                continue
            if isinstance(value, tuple):
                value = ", ".join(repr(v) for v in value)
            lines.append(f"{f.name} = {value}")
        lines.append("")
    return "\n".join(lines)
