"""
Configuration Parser Module

Loads the experiment configuration from an INI-style file into a validated,
frozen RunConfig. Every section maps to one dataclass; missing keys take the
dataclass defaults, unknown keys and out-of-range values raise ConfigError
naming "section.key" and the line they were read from.
"""
import configparser
import dataclasses
import logging
import os
import re
from configparser import ConfigParser
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

from src.defense.bundle import MODES
from src.evaluation.acceptance import AcceptanceCriteria, DatasetThresholds
from src.models.classifiers import ARCHITECTURES
from src.utils import find_missing_entries_in_list

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATHS = [os.path.join("config", "config_hidden.cfg"), os.path.join("config", "config.cfg")]
DATA_DIR_ENV = "DEFENSE_VAE_DATA_DIR"
IDX_FILES = {
    ("train", "images"): "train-images-idx3-ubyte",
    ("train", "labels"): "train-labels-idx1-ubyte",
    ("test", "images"): "t10k-images-idx3-ubyte",
    ("test", "labels"): "t10k-labels-idx1-ubyte",
}


class ConfigError(ValueError):
    """Invalid configuration value; the message names section.key and the line."""


def _range(low=None, high=None, choices=None) -> Dict[str, Any]:
    return {"low": low, "high": high, "choices": choices}


@dataclass(frozen=True)
class AdminConfig:
    log_file: str = "logs/logs.log"
    seed: int = field(default=0, metadata=_range(0))
    output_dir: str = "output"
    cache_dir: str = "data/cache"
    threads: int = field(default=os.cpu_count() or 1, metadata=_range(1))
    precision: int = field(default=32, metadata=_range(choices=(32, 64)))
    progress: bool = True


@dataclass(frozen=True)
class DataConfig:
    """IDX paths are keyed '<dataset>_<split>_<images|labels>'."""
    datasets: Tuple[str, ...] = ("mnist",)
    paths: Dict[str, str] = field(default_factory=dict)

    def idx_path(self, dataset: str, split: str, kind: str) -> str:
        default = os.path.join("data", "raw", dataset, IDX_FILES[split, kind])
        return self.paths.get(f"{dataset}_{split}_{kind}", default)


@dataclass(frozen=True)
class ClassifierConfig:
    archs: Tuple[str, ...] = field(default=("A", "B", "C", "D"), metadata=_range(choices=ARCHITECTURES))
    epochs: int = field(default=10, metadata=_range(1))
    batch_size: int = field(default=100, metadata=_range(1))
    lr: float = field(default=1e-3, metadata=_range(0.0))
    optimizer: str = field(default="adam", metadata=_range(choices=("adam", "sgd")))
    holdout: int = field(default=1000, metadata=_range(0))


@dataclass(frozen=True)
class FgsmConfig:
    eps: float = field(default=0.3, metadata=_range(0.0, 1.0))
    corpus_eps: Tuple[float, ...] = field(default=(0.25, 0.3, 0.35, 0.4), metadata=_range(0.0, 1.0))


@dataclass(frozen=True)
class RandFgsmConfig:
    eps: float = field(default=0.3, metadata=_range(0.0, 1.0))
    alpha: float = field(default=0.05, metadata=_range(0.0, 1.0))


@dataclass(frozen=True)
class CwConfig:
    lr: float = field(default=10.0, metadata=_range(0.0))
    corpus_lr: Tuple[float, ...] = field(default=(6.0, 8.0, 10.0, 12.0), metadata=_range(0.0))
    lr_scale: float = field(default=1e-3, metadata=_range(0.0))
    steps: int = field(default=100, metadata=_range(1))
    const_c: float = field(default=10.0, metadata=_range(0.0))
    kappa: float = field(default=0.0, metadata=_range(0.0))
    binary_search_steps: int = field(default=1, metadata=_range(1))


@dataclass(frozen=True)
class DeepfoolConfig:
    max_iter: int = field(default=50, metadata=_range(1))
    overshoot: float = field(default=0.02, metadata=_range(0.0))


@dataclass(frozen=True)
class VaeConfig:
    corpus_arch: str = field(default="A", metadata=_range(choices=ARCHITECTURES))
    likelihood: str = field(default="bernoulli", metadata=_range(choices=("bernoulli", "gaussian")))
    latent_dim: int = field(default=128, metadata=_range(1))
    epochs: int = field(default=10, metadata=_range(1))
    batch_size: int = field(default=100, metadata=_range(1))
    lr: float = field(default=1e-3, metadata=_range(0.0))
    corpus_subsample: int = field(default=0, metadata=_range(0))


@dataclass(frozen=True)
class FinetuneSettings:
    lam: float = field(default=1.0, metadata=_range(0.0))
    epochs: int = field(default=2, metadata=_range(1))
    batch_size: int = field(default=100, metadata=_range(1))
    lr: float = field(default=1e-4, metadata=_range(0.0))
    validation: int = field(default=1000, metadata=_range(0))
    eval_eps: float = field(default=0.3, metadata=_range(0.0, 1.0))


@dataclass(frozen=True)
class EvaluationConfig:
    modes: Tuple[str, ...] = field(default=MODES, metadata=_range(choices=MODES))
    batch_size: int = field(default=256, metadata=_range(1))
    cw_subset: int = field(default=2000, metadata=_range(0))
    grid_samples: int = field(default=8, metadata=_range(1))
    leaveoneout_arch: str = field(default="A", metadata=_range(choices=ARCHITECTURES))
    deepfool_augment: bool = True


@dataclass(frozen=True)
class BlackboxConfig:
    targets: Tuple[str, ...] = field(default=("A",), metadata=_range(choices=ARCHITECTURES))
    substitutes: Tuple[str, ...] = field(default=("B",), metadata=_range(choices=("B", "E")))
    queries: int = field(default=150, metadata=_range(1))
    rounds: int = field(default=6, metadata=_range(1))
    step: float = field(default=0.1, metadata=_range(0.0))
    epochs: int = field(default=10, metadata=_range(1))
    eps: float = field(default=0.3, metadata=_range(0.0, 1.0))


@dataclass(frozen=True)
class ZSearchSettings:
    steps: int = field(default=200, metadata=_range(0))
    restarts: int = field(default=10, metadata=_range(1))
    step_size: float = field(default=0.01, metadata=_range(0.0))
    bench_images: int = field(default=1000, metadata=_range(1))
    bench_configs: Tuple[str, ...] = ("200x10", "400x10", "200x20", "400x20")
    measure_accuracy: bool = True

    @property
    def bench_pairs(self) -> List[Tuple[int, int]]:
        return [tuple(int(v) for v in item.split("x")) for item in self.bench_configs]


@dataclass(frozen=True)
class AcceptanceSettings:
    enabled: bool = True
    ordering_tolerance: float = field(default=0.02, metadata=_range(0.0))
    e2e_tolerance: float = field(default=0.01, metadata=_range(0.0))
    e2e_gain_min: Optional[float] = 0.01
    heldout_cw_drop_min: Optional[float] = 0.25
    deepfool_recovery_max: Optional[float] = 0.05
    speedup_min: Optional[float] = 20.0
    scaling_tolerance: Optional[float] = 0.25


DEFAULT_THRESHOLDS = {
    "mnist": DatasetThresholds("A", 0.98, 0.25, 0.94, 0.75, 0.94),
    "fmnist": DatasetThresholds("A", 0.89, 0.20, 0.82, None, 0.78),
}

SECTIONS = {
    "admin": ("admin", AdminConfig),
    "classifier": ("classifier", ClassifierConfig),
    "attacks.fgsm": ("fgsm", FgsmConfig),
    "attacks.rand_fgsm": ("rand_fgsm", RandFgsmConfig),
    "attacks.cw": ("cw", CwConfig),
    "attacks.deepfool": ("deepfool", DeepfoolConfig),
    "vae": ("vae", VaeConfig),
    "finetune": ("finetune", FinetuneSettings),
    "evaluation": ("evaluation", EvaluationConfig),
    "blackbox": ("blackbox", BlackboxConfig),
    "zsearch": ("zsearch", ZSearchSettings),
    "acceptance": ("acceptance", AcceptanceSettings),
}


@dataclass(frozen=True)
class RunConfig:
    admin: AdminConfig = field(default_factory=AdminConfig)
    data: DataConfig = field(default_factory=DataConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    fgsm: FgsmConfig = field(default_factory=FgsmConfig)
    rand_fgsm: RandFgsmConfig = field(default_factory=RandFgsmConfig)
    cw: CwConfig = field(default_factory=CwConfig)
    deepfool: DeepfoolConfig = field(default_factory=DeepfoolConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    finetune: FinetuneSettings = field(default_factory=FinetuneSettings)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    blackbox: BlackboxConfig = field(default_factory=BlackboxConfig)
    zsearch: ZSearchSettings = field(default_factory=ZSearchSettings)
    acceptance: AcceptanceSettings = field(default_factory=AcceptanceSettings)
    thresholds: Dict[str, DatasetThresholds] = field(default_factory=dict)

    def criteria(self) -> AcceptanceCriteria:
        a = self.acceptance
        settings = {f.name: getattr(a, f.name) for f in fields(a) if f.name != "enabled"}
        return AcceptanceCriteria(self.thresholds, **settings)

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None,
                       threads: Optional[int] = None, precision: Optional[int] = None) -> "RunConfig":
        """Apply command-line overrides; None keeps the configured value."""
        changes = {k: v for k, v in {"seed": seed, "output_dir": output_dir, "threads": threads,
                                      "precision": precision}.items() if v is not None}
        admin = dataclasses.replace(self.admin, **changes)
        _validate(admin, "admin", {})
        return dataclasses.replace(self, admin=admin)

    def validate_paths(self) -> None:
        """Raise ConfigError for any IDX file that does not exist."""
        for dataset in self.data.datasets:
            for split, kind in IDX_FILES:
                path = self.data.idx_path(dataset, split, kind)
                if not os.path.exists(path):
                    raise ConfigError(f"data.{dataset}_{split}_{kind}: file {path} does not exist")

    def to_parser(self) -> ConfigParser:
        """The fully resolved configuration, reloadable by load_config."""
        parser = create_config_parser()
        for section, (attr, _) in SECTIONS.items():
            parser[section] = {f.name: _render(getattr(getattr(self, attr), f.name))
                               for f in fields(getattr(self, attr))}
        parser["data"] = {"datasets": _render(self.data.datasets)}
        for dataset in self.data.datasets:
            for split, kind in IDX_FILES:
                parser["data"][f"{dataset}_{split}_{kind}"] = self.data.idx_path(dataset, split, kind)
        for dataset, limits in self.thresholds.items():
            parser[f"acceptance.{dataset}"] = {f.name: _render(getattr(limits, f.name)) for f in fields(limits)}
        return parser


def create_config_parser() -> configparser.ConfigParser:
    """
    Create and initialize a ConfigParser object with appropriate settings.

    Returns:
        configparser.ConfigParser: Initialized ConfigParser object
    """
    parser = configparser.ConfigParser(interpolation=configparser.ExtendedInterpolation())
    parser.optionxform = str.lower
    return parser


def read_config_file(config_paths: List[str] = None) -> Tuple[ConfigParser, Optional[str]]:
    """
    Read the first existing file of config_paths.

    Returns:
        (parser, path read); path is None when no file exists and defaults apply
    """
    if config_paths is None:
        config_paths = DEFAULT_CONFIG_PATHS

    config_parser = create_config_parser()
    for path in config_paths:
        if os.path.exists(path):
            try:
                config_parser.read(path, encoding="utf-8")
            except configparser.Error as e:
                raise ConfigError(f"{path}: {e}") from e
            logger.info(f"Loaded configuration from {path}")
            return config_parser, path
    logger.warning(f"No configuration file found in {config_paths}, using defaults")
    return config_parser, None


def _line_index(path: Optional[str]) -> Dict[Tuple[str, str], int]:
    """(section, key) -> 1-based line number of its assignment in path."""
    index: Dict[Tuple[str, str], int] = {}
    if path is None:
        return index
    section = None
    with open(path, encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            header = re.match(r"^\s*\[([^\]]+)\]", line)
            if header:
                section = header.group(1).strip()
                index.setdefault((section, ""), number)
                continue
            assignment = re.match(r"^\s*([^#;\s][^=:]*?)\s*[=:]", line)
            if assignment and section is not None:
                index[(section, assignment.group(1).strip().lower())] = number
    return index


def _where(lines: Dict[Tuple[str, str], int], section: str, key: str) -> str:
    number = lines.get((section, key))
    return f"{section}.{key}" + (f" (line {number})" if number else "")


def get_config_value(config_parser: configparser.ConfigParser, section: str, option: str,
                     default: Any = None, value_type: str = "str") -> Any:
    """
    Get a configuration value with type conversion.

    Args:
        config_parser: ConfigParser object to get value from
        section: Configuration section name
        option: Configuration option name
        default: Default value to return if option is not found
        value_type: 'str', 'int', 'float', 'bool', 'list', 'floats' or 'optional_float'

    Returns:
        Configuration value with appropriate type

    Raises:
        ConfigError: the stored text does not convert to value_type
    """
    if not config_parser.has_option(section, option):
        return default
    try:
        if value_type == "str":
            return config_parser.get(section, option).strip()
        elif value_type == "int":
            return config_parser.getint(section, option)
        elif value_type == "float":
            return config_parser.getfloat(section, option)
        elif value_type == "bool":
            return config_parser.getboolean(section, option)
        elif value_type == "list":
            value = config_parser.get(section, option)
            return tuple(item.strip() for item in value.split(",") if item.strip())
        elif value_type == "floats":
            value = config_parser.get(section, option)
            return tuple(float(item) for item in value.split(",") if item.strip())
        elif value_type == "optional_float":
            value = config_parser.get(section, option).strip()
            return float(value) if value else None
        else:
            raise ConfigError(f"Unknown value type '{value_type}' for {section}.{option}")
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{section}.{option}: expected {value_type}, "
                          f"got '{config_parser.get(section, option, raw=True)}'") from e


def _value_type(annotation: Any) -> str:
    return {int: "int", float: "float", bool: "bool", str: "str", Tuple[str, ...]: "list",
            Tuple[float, ...]: "floats", Optional[float]: "optional_float"}[annotation]


def _render(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ", ".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _validate(instance: Any, section: str, lines: Dict[Tuple[str, str], int]) -> None:
    for f in fields(instance):
        bounds = f.metadata
        value = getattr(instance, f.name)
        if not bounds or value is None:
            continue
        # list values are checked item by item
        for item in (value if isinstance(value, tuple) else (value,)):
            where = _where(lines, section, f.name)
            if bounds["choices"] is not None and item not in bounds["choices"]:
                raise ConfigError(f"{where}: {item!r} is not one of {bounds['choices']}")
            if bounds["low"] is not None and item < bounds["low"]:
                raise ConfigError(f"{where}: {item!r} is below the minimum {bounds['low']}")
            if bounds["high"] is not None and item > bounds["high"]:
                raise ConfigError(f"{where}: {item!r} is above the maximum {bounds['high']}")


def _read_section(parser: ConfigParser, section: str, cls, lines: Dict[Tuple[str, str], int]):
    known = [f.name for f in fields(cls)]
    if parser.has_section(section):
        unknown = find_missing_entries_in_list(known, list(parser[section].keys()))
        if unknown:
            raise ConfigError(f"{_where(lines, section, unknown[0])}: unknown key")
    hints = {f.name: f.type for f in fields(cls)}
    values = {}
    for name in known:
        try:
            value = get_config_value(parser, section, name, None, _value_type(hints[name]))
        except ConfigError as e:
            raise ConfigError(f"{_where(lines, section, name)}: {str(e).split(': ', 1)[-1]}") from e
        if value is not None or parser.has_option(section, name):
            values[name] = value
    instance = cls(**values)
    _validate(instance, section, lines)
    return instance


def _read_data(parser: ConfigParser, lines: Dict[Tuple[str, str], int]) -> DataConfig:
    datasets = get_config_value(parser, "data", "datasets", DataConfig.datasets, "list")
    if not datasets:
        raise ConfigError(f"{_where(lines, 'data', 'datasets')}: at least one dataset is needed")
    known = ["datasets"] + [f"{d}_{split}_{kind}" for d in datasets for split, kind in IDX_FILES]
    keys = list(parser["data"].keys()) if parser.has_section("data") else []
    unknown = find_missing_entries_in_list(known, keys)
    if unknown:
        raise ConfigError(f"{_where(lines, 'data', unknown[0])}: unknown key")
    paths = {key: parser.get("data", key).strip() for key in keys if key != "datasets"}
    # entries naming the default location are not kept
    defaults = DataConfig(datasets)
    return DataConfig(datasets, {key: path for key, path in paths.items()
                                 if path != defaults.idx_path(*key.rsplit("_", 2))})


def _read_thresholds(parser: ConfigParser, datasets: Tuple[str, ...],
                     lines: Dict[Tuple[str, str], int]) -> Dict[str, DatasetThresholds]:
    thresholds = {}
    for dataset in datasets:
        section = f"acceptance.{dataset}"
        base = DEFAULT_THRESHOLDS.get(dataset, DatasetThresholds())
        if not parser.has_section(section):
            thresholds[dataset] = base
            continue
        read = _read_section(parser, section, DatasetThresholds, lines)
        overrides = {f.name: getattr(read, f.name) for f in fields(read) if parser.has_option(section, f.name)}
        thresholds[dataset] = dataclasses.replace(base, **overrides)
    return thresholds


def load_config(path: Optional[str] = None) -> RunConfig:
    """
    Load and validate the run configuration.

    Args:
        path: config file; None searches config/config_hidden.cfg, then config/config.cfg

    Returns:
        RunConfig with defaults filled in and the data directory override applied

    Raises:
        ConfigError: unknown section or key, type mismatch, or out-of-range value
    """
    if path is not None and not os.path.exists(path):
        raise ConfigError(f"Configuration file {path} does not exist")
    parser, source = read_config_file([path] if path else None)
    lines = _line_index(source)

    datasets = get_config_value(parser, "data", "datasets", DataConfig.datasets, "list")
    allowed = list(SECTIONS) + ["data"] + [f"acceptance.{d}" for d in datasets]
    unknown = find_missing_entries_in_list(allowed, parser.sections())
    if unknown:
        number = lines.get((unknown[0], ""))
        raise ConfigError(f"[{unknown[0]}]" + (f" (line {number})" if number else "") + ": unknown section")

    sections = {attr: _read_section(parser, section, cls, lines) for section, (attr, cls) in SECTIONS.items()}
    config = RunConfig(data=_read_data(parser, lines), thresholds=_read_thresholds(parser, datasets, lines),
                       **sections)
    if os.environ.get(DATA_DIR_ENV):
        config = dataclasses.replace(config, admin=dataclasses.replace(config.admin,
                                                                      cache_dir=os.environ[DATA_DIR_ENV]))
    if config.rand_fgsm.alpha >= config.rand_fgsm.eps:
        raise ConfigError(f"{_where(lines, 'attacks.rand_fgsm', 'alpha')}: alpha must be below eps")
    return config
