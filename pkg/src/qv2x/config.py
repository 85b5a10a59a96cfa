"""Scenario configuration: strict INI loading, validation, canonical hashing.

The file format is flat key = value lines under one section per module.
Unknown sections or keys are hard errors; a silent typo in an experiment
config is worse than a loud one. Every key has a default, so an empty
file (or no file) is a complete scenario.
"""

import configparser
import hashlib
import os
from dataclasses import dataclass, fields, replace

from . import dataio
from .errors import ConfigError

_CODEC_OPTIMIZERS = ("sgd", "adam", "rmsprop")
_FED_PARTITIONS = ("iid", "skew")


@dataclass(frozen=True)
class ChannelParams:
    rho: float = 0.95
    snr_db_min: float = 0.0
    snr_db_max: float = 20.0

    def validate(self):
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"channel.rho={self.rho} must be in [0, 1)")
        for name in ("snr_db_min", "snr_db_max"):
            v = getattr(self, name)
            if not -50.0 <= v <= 60.0:
                raise ConfigError(f"channel.{name}={v} outside [-50, 60] dB")
        if self.snr_db_min > self.snr_db_max:
            raise ConfigError("channel.snr_db_min exceeds snr_db_max")


@dataclass(frozen=True)
class CodecParams:
    lr: float = 0.01
    optimizer: str = "adam"
    batch_size: int = 64
    epochs: int = 150
    lam: float = 0.0
    checkpoint: str = ""

    def validate(self):
        if self.lr <= 0.0:
            raise ConfigError(f"codec.lr={self.lr} must be > 0")
        if self.optimizer not in _CODEC_OPTIMIZERS:
            raise ConfigError(
                f"codec.optimizer={self.optimizer!r} not one of {_CODEC_OPTIMIZERS}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"codec.batch_size={self.batch_size} must be >= 1")
        if self.epochs < 0:
            raise ConfigError(f"codec.epochs={self.epochs} must be >= 0")
        if self.lam < 0.0:
            raise ConfigError(f"codec.lam={self.lam} must be >= 0")
        if self.checkpoint and not os.path.isfile(self.checkpoint):
            raise ConfigError(f"codec.checkpoint={self.checkpoint!r} not found")


@dataclass(frozen=True)
class RlParams:
    gamma: float = 0.95
    tau: float = 1.0
    w_latency: float = 0.2
    w_accuracy: float = 1.0
    w_semantic: float = 0.5
    fixture_episodes: int = 5000
    env_episodes: int = 10
    steps_per_episode: int = 50

    def validate(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"rl.gamma={self.gamma} must be in [0, 1)")
        if self.tau <= 0.0:
            raise ConfigError(f"rl.tau={self.tau} must be > 0")
        for name in ("w_latency", "w_accuracy", "w_semantic"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"rl.{name} must be >= 0")
        if self.fixture_episodes < 0 or self.env_episodes < 0:
            raise ConfigError("rl episode counts must be >= 0")
        if self.steps_per_episode < 1:
            raise ConfigError("rl.steps_per_episode must be >= 1")


@dataclass(frozen=True)
class FedParams:
    tau_energy: float = 0.95
    cloud_tau: float = 1.0
    r_max: tuple = (9, 8)
    alpha: float = 0.75
    rounds: int = 20
    clients: int = 4
    steps: int = 25
    lr: float = 0.5
    lr_final: float = 0.1
    cool_rounds: int = 5
    codec_epochs: int = 50
    partition: str = "iid"
    dense_baseline: bool = True

    def validate(self):
        for name in ("tau_energy", "cloud_tau"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"fed.{name}={v} must be in (0, 1]")
        if any(r < 1 for r in self.r_max):
            raise ConfigError(f"fed.r_max={self.r_max} entries must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"fed.alpha={self.alpha} must be in [0, 1]")
        if self.rounds < 0:
            raise ConfigError(f"fed.rounds={self.rounds} must be >= 0")
        if self.clients < 2:
            raise ConfigError(f"fed.clients={self.clients} must be >= 2")
        if self.steps < 1:
            raise ConfigError(f"fed.steps={self.steps} must be >= 1")
        if self.lr < 0.0 or self.lr_final < 0.0:
            raise ConfigError("fed learning rates must be >= 0")
        if not 0 <= self.cool_rounds <= max(self.rounds, 0):
            raise ConfigError(
                f"fed.cool_rounds={self.cool_rounds} outside [0, rounds]"
            )
        if self.codec_epochs < 0:
            raise ConfigError("fed.codec_epochs must be >= 0")
        if self.partition not in _FED_PARTITIONS:
            raise ConfigError(
                f"fed.partition={self.partition!r} not one of {_FED_PARTITIONS}"
            )


@dataclass(frozen=True)
class FusionParams:
    n_frames: int = 5
    missing_cells: int = 3

    def validate(self):
        if self.n_frames < 1:
            raise ConfigError(f"fusion.n_frames={self.n_frames} must be >= 1")
        if not 0 <= self.missing_cells <= 15:
            # the demo camera grid has 16 cells and needs one donor left
            raise ConfigError(
                f"fusion.missing_cells={self.missing_cells} outside [0, 15]"
            )


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    n_vehicles: int = 4
    n_rsus: int = 2
    dataset: str = ""
    out: str = "runs"
    channel: ChannelParams = ChannelParams()
    codec: CodecParams = CodecParams()
    rl: RlParams = RlParams()
    fed: FedParams = FedParams()
    fusion: FusionParams = FusionParams()

    def validate(self):
        if self.seed < 0:
            raise ConfigError(f"run.seed={self.seed} must be >= 0")
        if self.n_vehicles < 1:
            raise ConfigError(f"run.n_vehicles={self.n_vehicles} must be >= 1")
        if self.n_rsus < 1:
            raise ConfigError(f"run.n_rsus={self.n_rsus} must be >= 1")
        if not self.out:
            raise ConfigError("run.out must not be empty")
        if not os.path.isfile(self.dataset):
            raise ConfigError(f"run.dataset={self.dataset!r} not found")
        for sub in (self.channel, self.codec, self.rl, self.fed, self.fusion):
            sub.validate()
        return self


def _parse_bool(section, key, raw):
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{section}.{key}={raw!r} is not a boolean")


def _parse_rank_caps(section, key, raw):
    try:
        caps = tuple(int(part) for part in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{section}.{key}={raw!r} is not an integer list")
    if not caps:
        raise ConfigError(f"{section}.{key} must list at least one cap")
    return caps


def _coerce(section, key, raw, default):
    if isinstance(default, bool):
        return _parse_bool(section, key, raw)
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}={raw!r} is not an integer")
    if isinstance(default, float):
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}={raw!r} is not a number")
        return value
    if isinstance(default, tuple):
        return _parse_rank_caps(section, key, raw)
    return raw.strip()


_SECTIONS = {
    "run": None,  # maps onto the top-level ScenarioConfig fields
    "channel": ChannelParams,
    "codec": CodecParams,
    "rl": RlParams,
    "fed": FedParams,
    "fusion": FusionParams,
}

_RUN_KEYS = ("seed", "n_vehicles", "n_rsus", "dataset", "out")


def load_config(path=None, seed=None, out=None) -> ScenarioConfig:
    """Parse, default-fill, override, and validate one scenario file.

    path=None yields the all-defaults scenario. seed and out, when
    given, override the file (the CLI flags). The returned config is
    fully resolved: hashing it pins the complete run.
    """
    values = {"run": {}}
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file {path!r} not found")
        parser = configparser.ConfigParser(
            interpolation=None, delimiters=("=",), strict=True
        )
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (configparser.Error, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot parse {path!r}: {exc}")
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(
                    f"unknown section [{section}] in {path!r}; "
                    f"expected one of {sorted(_SECTIONS)}"
                )
            cls = _SECTIONS[section]
            known = (
                _RUN_KEYS
                if cls is None
                else tuple(f.name for f in fields(cls))
            )
            sec_values = {}
            for key, raw in parser.items(section):
                if key not in known:
                    raise ConfigError(
                        f"unknown key {key!r} in [{section}]; "
                        f"expected one of {sorted(known)}"
                    )
                if cls is None:
                    default = getattr(ScenarioConfig(), key)
                else:
                    default = getattr(cls(), key)
                sec_values[key] = _coerce(section, key, raw, default)
            values[section] = sec_values

    run = values.get("run", {})
    cfg = ScenarioConfig(
        **run,
        **{
            name: _SECTIONS[name](**values.get(name, {}))
            for name in _SECTIONS
            if _SECTIONS[name] is not None
        },
    )
    if not cfg.dataset:
        cfg = replace(cfg, dataset=str(dataio.bundled_path()))
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    if out is not None:
        cfg = replace(cfg, out=str(out))
    cfg.validate()
    return cfg


def canonical_text(cfg: ScenarioConfig) -> str:
    """Stable section.key = value rendering of a resolved config."""
    lines = []
    for key in _RUN_KEYS:
        lines.append(f"run.{key} = {getattr(cfg, key)}")
    for section, cls in _SECTIONS.items():
        if cls is None:
            continue
        sub = getattr(cfg, section)
        for f in fields(cls):
            lines.append(f"{section}.{f.name} = {getattr(sub, f.name)}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ScenarioConfig) -> str:
    """sha256 of the canonical rendering; stamped into every artifact."""
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()
