"""Pipeline configuration: TOML file, then ``DHG_<SECTION>_<FIELD>`` environment overrides.

Sections and their defaults::

    [energy]   SymOpt energies and Adam settings (see EnergyConfig)
    [loss]     training loss weights (LossConfig)
    [tta]      test-time refinement (TtaConfig)
    [ddpm]     T, beta_start, beta_end, guidance
    [contact]  k, threshold

``DHG_TTA_LR=1e-3`` overrides ``[tta] lr``. Variables that do not name a
known section are ignored (``DHG_DISABLE_JIT`` is read elsewhere).
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli

from .contact import CONTACT_K, PART_THRESHOLD
from .losses import LossConfig
from .symopt import EnergyConfig
from .tta import TtaConfig


class ConfigError(ValueError):
    pass


@dataclass
class DdpmConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    guidance: float = 2.0

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("T must be >= 2")
        if not 0 < self.beta_start < self.beta_end < 1:
            raise ValueError("need 0 < beta_start < beta_end < 1")

    def schedule(self):
        from .ddpm import DdpmSchedule

        return DdpmSchedule.linear(self.T, self.beta_start, self.beta_end)


@dataclass
class ContactConfig:
    k: float = CONTACT_K
    threshold: float = PART_THRESHOLD

    def __post_init__(self):
        if self.k <= 0 or not 0 < self.threshold < 1:
            raise ValueError("contact k must be positive and threshold inside (0, 1)")


SECTIONS = {"energy": EnergyConfig, "loss": LossConfig, "tta": TtaConfig, "ddpm": DdpmConfig, "contact": ContactConfig}


@dataclass
class PipelineConfig:
    energy: EnergyConfig = field(default_factory=EnergyConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    tta: TtaConfig = field(default_factory=TtaConfig)
    ddpm: DdpmConfig = field(default_factory=DdpmConfig)
    contact: ContactConfig = field(default_factory=ContactConfig)
    source: bytes = field(default=b"", repr=False, compare=False)

    def to_dict(self):
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    @property
    def digest(self) -> str:
        """sha256 of the config file bytes plus the effective values."""
        h = hashlib.sha256(self.source)
        h.update(json.dumps(self.to_dict(), sort_keys=True).encode())
        return h.hexdigest()


def _coerce(cls, name, value, where):
    types = {f.name: f.type for f in fields(cls)}
    if name not in types:
        raise ConfigError(f"{where}: unknown key {name!r}")
    want = types[name] if isinstance(types[name], str) else types[name].__name__
    try:
        if want == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: {name} expects {want}, got {value!r}") from None


def _section(cls, values: dict, where):
    kw = {k: _coerce(cls, k, v, f"{where}") for k, v in values.items()}
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path=None, env=None) -> PipelineConfig:
    """Defaults, overlaid by the TOML file at ``path``, overlaid by environment."""
    env = os.environ if env is None else env
    raw, data = b"", {}
    if path is not None:
        p = Path(path)
        try:
            raw = p.read_bytes()
            data = tomli.loads(raw.decode("utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except (tomli.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"{p}: {exc}") from None
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s) {sorted(unknown)}")
    for name, value in data.items():
        if not isinstance(value, dict):
            raise ConfigError(f"[{name}]: expected a table")
    tables = {name: dict(data.get(name, {})) for name in SECTIONS}
    for key, value in env.items():
        if not key.startswith("DHG_"):
            continue
        sec, _, name = key[4:].lower().partition("_")
        if sec not in SECTIONS or not name:
            continue
        name = {f.name.lower(): f.name for f in fields(SECTIONS[sec])}.get(name, name)
        tables[sec][name] = value
    cfg = PipelineConfig(**{name: _section(SECTIONS[name], tables[name], f"[{name}]") for name in SECTIONS})
    return replace(cfg, source=raw)
