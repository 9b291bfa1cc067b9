"""System and experiment configuration.

All dimension/power parameters live in frozen dataclasses. Experiment
configs load from JSON; command-line flags may override individual
fields. Powers are linear throughout; the downlink operating point is
expressed as an effective SNR (total transmit power over noise power)
because the synthetic channel is normalized to unit element energy and
carries no pathloss.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

__all__ = [
    "ConfigError",
    "SystemConfig",
    "TrainingConfig",
    "EvalConfig",
    "PathsConfig",
    "ExperimentConfig",
    "desk_system_config",
    "load_experiment_config",
    "experiment_config_from_dict",
    "config_as_dict",
    "dbm_to_mw",
    "git_blob_sha1",
]


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def dbm_to_mw(dbm: float) -> float:
    """Convert a dBm power figure to linear milliwatts."""
    return 10.0 ** (dbm / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions and powers of the FDD MU-MIMO-OFDM system.

    `n_subcarriers` downlink subcarriers group into resource blocks of
    `sc_per_rb` subcarriers, and `rb_per_subband` RBs form one subband
    (precoding granularity). `latent_dim` is the number of complex
    feedback symbols per UE, carried on `n_ul_subcarriers` uplink
    subcarriers.
    """

    n_subcarriers: int = 48
    n_tx: int = 8
    n_rx: int = 2
    n_streams: int = 1
    n_users: int = 2
    sc_per_rb: int = 4
    rb_per_subband: int = 4
    n_ul_subcarriers: int = 16
    latent_dim: int = 16
    total_power: float = 10.0
    noise_power_dl: float = 1.0
    f_dl_hz: float = 1.9e9
    f_ul_hz: float = 2.1e9
    bandwidth_hz: float = 10e6

    def __post_init__(self):
        for name in (
            "n_subcarriers",
            "n_tx",
            "n_rx",
            "n_streams",
            "n_users",
            "sc_per_rb",
            "rb_per_subband",
            "n_ul_subcarriers",
            "latent_dim",
        ):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.n_subcarriers % self.sc_per_rb:
            raise ConfigError(
                f"n_subcarriers={self.n_subcarriers} not divisible by sc_per_rb={self.sc_per_rb}"
            )
        if (self.n_subcarriers // self.sc_per_rb) % self.rb_per_subband:
            raise ConfigError(
                f"n_rb={self.n_subcarriers // self.sc_per_rb} not divisible by "
                f"rb_per_subband={self.rb_per_subband}"
            )
        if self.n_streams > self.n_rx:
            raise ConfigError(f"n_streams={self.n_streams} exceeds n_rx={self.n_rx}")
        if self.total_power <= 0 or self.noise_power_dl <= 0:
            raise ConfigError("total_power and noise_power_dl must be positive")
        for name in ("f_dl_hz", "f_ul_hz", "bandwidth_hz"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def n_rb(self) -> int:
        return self.n_subcarriers // self.sc_per_rb

    @property
    def n_subbands(self) -> int:
        return self.n_rb // self.rb_per_subband

    @property
    def downlink_snr_db(self) -> float:
        import math

        return 10.0 * math.log10(self.total_power / self.noise_power_dl)


def desk_system_config(**overrides) -> SystemConfig:
    """Desk-scale default system (CPU-trainable in minutes)."""
    return replace(SystemConfig(), **overrides) if overrides else SystemConfig()


@dataclass(frozen=True)
class TrainingConfig:
    seed: int
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 1e-3
    snr_db_min: float = -10.0
    snr_db_max: float = 10.0

    def __post_init__(self):
        if not isinstance(self.seed, int):
            raise ConfigError(f"training seed is mandatory and must be an integer, got {self.seed!r}")
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.snr_db_min > self.snr_db_max:
            raise ConfigError("snr_db_min must not exceed snr_db_max")


@dataclass(frozen=True)
class EvalConfig:
    snr_grid_db: tuple = (-10.0, 0.0, 10.0)
    n_train: int = 4000
    n_val: int = 500
    n_test: int = 1000

    def __post_init__(self):
        if len(self.snr_grid_db) == 0:
            raise ConfigError("snr_grid_db must be nonempty")
        if min(self.n_train, self.n_val, self.n_test) <= 0:
            raise ConfigError("dataset split sizes must be positive")


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    results_dir: str = "results"


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig
    training: TrainingConfig
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)


_SECTION_TYPES = {
    "system": SystemConfig,
    "training": TrainingConfig,
    "evaluation": EvalConfig,
    "paths": PathsConfig,
}


def _build_section(cls, data: dict, section: str):
    if section == "system":
        data = dict(data)
        snr = data.pop("downlink_snr_db", None)
        p_dbm = data.pop("transmit_power_dbm", None)
        n_dbm = data.pop("noise_power_dbm", None)
        if snr is not None and p_dbm is not None:
            raise ConfigError("give either downlink_snr_db or dBm powers, not both")
        if (p_dbm is None) != (n_dbm is None):
            raise ConfigError("transmit_power_dbm and noise_power_dbm must be given together")
        if snr is not None:
            data.setdefault("noise_power_dl", 1.0)
            data["total_power"] = data["noise_power_dl"] * 10.0 ** (float(snr) / 10.0)
        elif p_dbm is not None:
            data["total_power"] = dbm_to_mw(float(p_dbm))
            data["noise_power_dl"] = dbm_to_mw(float(n_dbm))
    allowed = set(cls.__dataclass_fields__)
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown {section} config keys: {sorted(unknown)}")
    if "snr_grid_db" in data:
        data["snr_grid_db"] = tuple(float(x) for x in data["snr_grid_db"])
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {section} config: {exc}") from exc


def experiment_config_from_dict(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Build an ExperimentConfig from parsed JSON, applying flat overrides.

    `overrides` maps "section.field" to values (CLI flags win over file
    values).
    """
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - set(_SECTION_TYPES)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    merged = {k: dict(raw.get(k, {})) for k in _SECTION_TYPES}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, fieldname = dotted.partition(".")
        if section not in merged or not fieldname:
            raise ConfigError(f"bad override target {dotted!r}")
        merged[section][fieldname] = value
    if "seed" not in merged["training"]:
        raise ConfigError("training.seed is mandatory")
    sections = {name: _build_section(cls, merged[name], name) for name, cls in _SECTION_TYPES.items()}
    return ExperimentConfig(**sections)


def load_experiment_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return experiment_config_from_dict(raw, overrides)


def config_as_dict(cfg: ExperimentConfig) -> dict:
    """Fully resolved config as a JSON-serializable dict (for output echo)."""
    return asdict(cfg)


def git_blob_sha1(data: bytes) -> str:
    """Content hash the way git hashes blobs: sha1 over 'blob <len>\\0<data>'."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()
