import logging
import os
from typing import Dict, Iterable, List, Literal, Optional, Tuple

from colorlog import ColoredFormatter
from datadog import DogStatsd
from envparse import env
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from semisup.contrast.augment import IMAGE_KINDS, AugmentPolicy
from semisup.contrast.exc import ConfigurationError
from semisup.contrast.utils import split_list

envfile = os.environ.get("APP_SETTINGS", os.path.join(os.getcwd(), ".env"))

if os.path.exists(envfile):
    env.read_envfile(envfile)


class Config:
    DEBUG = env("DEBUG", cast=bool, default=False)
    ENVIRONMENT = env("ENVIRONMENT", default="development")

    OUTPUT_DIR = env("OUTPUT_DIR", default="runs")
    CIFAR10_DIR = env("CIFAR10_DIR", default="data/cifar-10-batches-bin")

    # Wall time is the one non-reproducible metrics column.
    RECORD_WALL_TIME = env("RECORD_WALL_TIME", cast=bool, default=False)

    DATADOG_HOST = env("DATADOG_HOST", default="localhost")
    DATADOG_PORT = env("DATADOG_PORT", cast=int, default=8125)
    STATSD_NAMESPACE = env("STATSD_NAMESPACE", default="semisup_contrast")


config = Config()


def init_logging(loglevel: int = logging.INFO, color: bool = False):
    """
    Initialize the logging subsystem.

    :param loglevel: The log level (e.g. logging.DEBUG)
    :param color: Whether to use a colorized console formatter.
    """
    ch = logging.StreamHandler()
    ch.setLevel(loglevel)

    if color:
        formatter = ColoredFormatter(
            "%(log_color)s%(levelname)-8s%(reset)s [%(name)s] %(message)s",
            datefmt=None,
            reset=True,
            log_colors={
                "DEBUG": "cyan",
                "INFO": "green",
                "WARNING": "yellow",
                "ERROR": "red",
                "CRITICAL": "red",
            },
        )
    else:
        formatter = logging.Formatter("%(levelname)-8s [%(name)s] %(message)s")

    ch.setFormatter(formatter)

    logging.root.addHandler(ch)
    logging.root.setLevel(logging.DEBUG)
    logging.getLogger("semisup").setLevel(
        logging.DEBUG if loglevel <= logging.DEBUG else logging.INFO
    )

    # The statsd client logs every dropped packet when no agent is listening.
    logging.getLogger("datadog").setLevel(logging.WARNING)


statsd = DogStatsd(
    host=config.DATADOG_HOST,
    port=config.DATADOG_PORT,
    namespace=config.STATSD_NAMESPACE,
)


def _int_tuple(value):
    if isinstance(value, str):
        return tuple(int(v) for v in split_list(value))
    return value


def _none_if_blank(value):
    if isinstance(value, str) and not value.strip():
        return None
    return value


class TrainConfig(BaseModel):
    """
    The full hyperparameter record of one training run.

    Defaults are the desk-scale recipe; see `full_scale()` for the full one.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    lr0: float = Field(default=0.1, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=1e-4, ge=0)
    epochs: int = Field(default=100, ge=0)
    milestones: Tuple[int, ...] = (50, 75)
    decay_factor: float = Field(default=0.1, gt=0, le=1)
    batch: int = Field(default=128, ge=2)
    eval_every: int = Field(default=10, ge=1)

    tau_f: float = Field(default=0.5, gt=0)
    tau_s: float = Field(default=0.9, gt=0)
    w_ce: float = Field(default=1.0, ge=0)
    w_z: float = Field(default=1.0, ge=0)
    w_q: float = Field(default=1.0, ge=0)
    normalize: bool = True

    use_feature_contrast: bool = True
    use_semantic_contrast: bool = True

    seed: int = Field(default=0, ge=0)

    parse_milestones = field_validator("milestones", mode="before")(_int_tuple)

    @field_validator("milestones")
    @classmethod
    def check_milestones(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("milestones must be strictly increasing")
        if any(m < 0 for m in v):
            raise ValueError("milestones must be non-negative")
        return v

    @property
    def loss_weights(self) -> Tuple[float, float, float]:
        """(w_ce, w_z, w_q) with ablated terms zeroed."""
        return (
            self.w_ce,
            self.w_z if self.use_feature_contrast else 0.0,
            self.w_q if self.use_semantic_contrast else 0.0,
        )

    @classmethod
    def full_scale(cls, **overrides) -> "TrainConfig":
        values = dict(epochs=1000, milestones=(500, 750), batch=512)
        values.update(overrides)
        return cls(**values)


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    hidden: Tuple[int, ...] = (64,)
    feature_dim: int = Field(default=64, ge=1)

    parse_hidden = field_validator("hidden", mode="before")(_int_tuple)


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["blobs", "cifar10"] = "blobs"

    # blobs
    classes: int = Field(default=3, ge=2)
    per_class: int = Field(default=500, ge=1)
    test_per_class: int = Field(default=100, ge=0)
    dim: int = Field(default=8, ge=2)
    spread: float = Field(default=1.0, gt=0)
    separation: Optional[float] = Field(default=None, gt=0)

    # cifar10
    path: Optional[str] = None
    subset: Optional[int] = Field(default=None, ge=1)

    labels_per_class: int = Field(default=10, ge=1)
    standardize: bool = True

    blank_to_none = field_validator("separation", "path", "subset", mode="before")(
        _none_if_blank
    )


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    train: TrainConfig = TrainConfig()
    model: ModelConfig = ModelConfig()
    augment: AugmentPolicy = AugmentPolicy()
    data: DataConfig = DataConfig()

    @model_validator(mode="after")
    def check_augment_fits_data(self) -> "ExperimentConfig":
        if self.augment.kind in IMAGE_KINDS and self.data.kind != "cifar10":
            raise ValueError(
                "augment.kind={} needs image data, data.kind is {}".format(
                    self.augment.kind, self.data.kind
                )
            )
        return self

    def to_flat(self) -> List[Tuple[str, str]]:
        """
        The complete effective configuration as sorted (key, value) pairs, in the
        same namespace the config file uses.
        """
        flat = {}
        for section_name in ("model", "augment", "data"):
            section = getattr(self, section_name)
            for name in type(section).model_fields:
                flat[f"{section_name}.{name}"] = _format_value(getattr(section, name))
        for name in TrainConfig.model_fields:
            if name == "seed":
                key = "seed"
            elif name in _LOSS_KEYS:
                key = f"loss.{name}"
            else:
                key = f"train.{name}"
            flat[key] = _format_value(getattr(self.train, name))
        return sorted(flat.items())

    def with_overrides(self, overrides: Dict[str, str]) -> "ExperimentConfig":
        values = dict(self.to_flat())
        values.update(overrides)
        return build_experiment_config(values.items())


_LOSS_KEYS = frozenset({"tau_f", "tau_s", "w_ce", "w_z", "w_q", "normalize"})

_SECTIONS = {
    "train": ("train", frozenset(TrainConfig.model_fields) - _LOSS_KEYS - {"seed"}),
    "loss": ("train", _LOSS_KEYS),
    "model": ("model", frozenset(ModelConfig.model_fields)),
    "augment": ("augment", frozenset(AugmentPolicy.model_fields)),
    "data": ("data", frozenset(DataConfig.model_fields)),
}


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_key_values(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    """
    Parse flat key=value text. Blank lines and `#` comments are skipped.
    """
    values = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(
                "{}:{}: expected key=value, got {!r}".format(source, lineno, raw)
            )
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def build_experiment_config(items: Iterable[Tuple[str, str]]) -> ExperimentConfig:
    nested: Dict[str, Dict[str, str]] = {name: {} for name in ExperimentConfig.model_fields}
    for key, value in items:
        if key == "seed":
            nested["train"]["seed"] = value
            continue
        namespace, _, name = key.partition(".")
        if namespace not in _SECTIONS or name not in _SECTIONS[namespace][1]:
            raise ConfigurationError("Unknown config key: {}".format(key))
        nested[_SECTIONS[namespace][0]][name] = value
    try:
        return ExperimentConfig.model_validate(nested)
    except ValidationError as e:
        raise ConfigurationError(str(e)) from e


def load_experiment_config(
    path: Optional[str] = None, overrides: Optional[Iterable[str]] = None
) -> ExperimentConfig:
    """
    Load an experiment config file and apply `key=value` overrides on top.

    :param path: Config file path, or None for all defaults.
    :param overrides: Override strings applied after the file, in order.
    """
    values = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fp:
            values.update(parse_key_values(fp, source=path))
    if overrides:
        values.update(parse_key_values(overrides, source="--override"))
    return build_experiment_config(values.items())


def write_experiment_config(cfg: ExperimentConfig, path: str):
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        for key, value in cfg.to_flat():
            fp.write("{}={}\n".format(key, value))
