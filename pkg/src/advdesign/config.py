"""Run configuration read from flat ``key = value`` TOML files."""

import dataclasses
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .gda import GdaConfig
from .models import MODELS

THREADS_ENV = "ADVDESIGN_THREADS"

_GDA_KEYS = {f.name for f in dataclasses.fields(GdaConfig)} - {"threads"}
_RUN_KEYS = {"model", "out", "exchange", "radius", "exchange_max_iters"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str
    model_constants: dict = field(default_factory=dict)
    gda: GdaConfig = field(default_factory=GdaConfig)
    out: Path = Path("out")
    exchange: bool = False
    radius: float = None  # None: the model's default cluster radius
    exchange_max_iters: int = 100

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {sorted(MODELS)}")
        allowed = {f.name for f in dataclasses.fields(MODELS[self.model])}
        unknown = set(self.model_constants) - allowed
        if unknown:
            raise ConfigError(f"unknown keys for model {self.model!r}: {sorted(unknown)}")
        if self.gda.estimator == "score" and self.model != "pk":
            raise ConfigError("estimator = 'score' is only available for the pk model")
        if self.radius is not None and self.radius <= 0:
            raise ConfigError("radius must be positive")
        if self.exchange_max_iters < 1:
            raise ConfigError("exchange_max_iters must be >= 1")
        self.out = Path(self.out)

    def build_model(self, **overrides):
        constants = {k: tuple(v) if isinstance(v, list) else v for k, v in self.model_constants.items()}
        constants.update(overrides)
        try:
            return MODELS[self.model](**constants)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"invalid constants for model {self.model!r}: {err}") from None

    def cluster_radius(self, model):
        return model.default_cluster_radius if self.radius is None else self.radius

    def echo(self):
        """Plain-data copy of every setting, suitable for JSON."""
        gda = dataclasses.asdict(self.gda)
        gda.pop("threads")
        return {
            "model": self.model,
            "model_constants": {k: list(v) if isinstance(v, tuple) else v for k, v in self.model_constants.items()},
            "gda": gda,
            "exchange": self.exchange,
            "radius": self.radius,
            "exchange_max_iters": self.exchange_max_iters,
        }

    @classmethod
    def from_mapping(cls, data, threads=None):
        data = dict(data)
        nested = [k for k, v in data.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"config must be flat; found tables {nested}")
        if "model" not in data:
            raise ConfigError("config must set 'model'")
        run = {k: data.pop(k) for k in list(data) if k in _RUN_KEYS}
        gda = {k: data.pop(k) for k in list(data) if k in _GDA_KEYS}
        try:
            gda_config = GdaConfig(**gda, threads=threads or threads_from_env())
            return cls(model_constants=data, gda=gda_config, **run)
        except (TypeError, ValueError) as err:
            if isinstance(err, ConfigError):
                raise
            raise ConfigError(str(err)) from None

    @classmethod
    def from_echo(cls, echo, threads=None):
        flat = {k: v for k, v in echo.items() if k not in ("model_constants", "gda")}
        flat.update(echo.get("model_constants", {}))
        flat.update(echo.get("gda", {}))
        return cls.from_mapping(flat, threads)


def threads_from_env():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1")
    return value


def load_config(path, threads=None):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"malformed config {path}: {err}") from None
    return RunConfig.from_mapping(data, threads)
