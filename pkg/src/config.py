"""
Configuration management for Genre Memory Model

Handles loading and managing run settings from a JSON document
with fallback defaults and validation.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union
from dataclasses import dataclass, asdict, field, fields

from .errors import ConfigError

ALGORITHMS = ['TOP', 'CF_u', 'CF_i', 'POP_u', 'TIME_u', 'BLL_u', 'ACT_ua']
DEBUG_ALGORITHMS = ['ORACLE', 'RANDOM']
MAINSTREAMINESS_MODES = ['cosine', 'prefer-supplied']
DECAY_FIT_EVENTS = ['train', 'all']
GROUP_NAMES = ['LowMS', 'MedMS', 'HighMS']


@dataclass
class PathsConfig:
    """Input files and output directory"""
    events: str = 'data/events.tsv'
    profiles: Optional[str] = 'data/profiles.tsv'
    tags: str = 'data/tags.tsv'
    allowed_genres: Optional[str] = 'data/allowed_genres.txt'
    out_dir: str = 'out'


@dataclass
class IngestConfig:
    """Parsing, user filtering and grouping"""
    min_le: int = 6000
    max_le: int = 12000
    min_rel_freq: float = 0.5
    group_size: int = 1000
    mainstreaminess_mode: str = 'cosine'
    strict: bool = False


@dataclass
class ModelConfig:
    """Memory model and baseline parameters"""
    d_override: Dict[str, float] = field(default_factory=dict)  # group name -> d
    attentional_weight: float = 1.0
    decay_bins: int = 100
    decay_reference_grid: Optional[List[float]] = None  # explicit histogram bin edges
    decay_fit_events: str = 'train'  # 'train' (evaluation split train portion) or 'all'
    cf_user_neighbors: int = 20
    cf_item_neighbors: int = 20
    cf_item_top_artists: int = 20


@dataclass
class EvaluationConfig:
    """Offline evaluation protocol"""
    split_fraction: float = 0.01
    k_max: int = 10
    alpha: float = 0.001
    paired: bool = True
    algorithms: list = field(default_factory=lambda: list(ALGORITHMS))
    seed: int = 42
    workers: int = 1


@dataclass
class LoggingConfig:
    """Logging configuration"""
    level: str = 'INFO'
    max_file_size: int = 10 * 1024 * 1024  # 10MB
    backup_count: int = 5
    log_to_file: bool = True
    log_to_console: bool = True


_SECTIONS = {
    'paths': PathsConfig,
    'ingest': IngestConfig,
    'model': ModelConfig,
    'evaluation': EvaluationConfig,
    'logging': LoggingConfig,
}


def _build_section(name: str, data: Dict[str, Any]):
    """Instantiate a config section, rejecting unknown keys"""
    cls = _SECTIONS[name]
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in section '{name}': {', '.join(unknown)}")
    return cls(**data)


class Config:
    """Main configuration class"""

    def __init__(self, config_path: Union[str, Path] = None):
        """
        Initialize configuration

        Args:
            config_path: Path to a JSON configuration file (optional)
        """
        self.config_path = Path(config_path) if config_path else None

        # Initialize with defaults
        self.paths = PathsConfig()
        self.ingest = IngestConfig()
        self.model = ModelConfig()
        self.evaluation = EvaluationConfig()
        self.logging = LoggingConfig()

        if self.config_path is not None:
            self.load()

    def load(self) -> bool:
        """
        Load configuration from file

        Returns:
            bool: True if a file was loaded, False if defaults are in use

        Raises:
            ConfigError: if the file is not valid JSON or has unknown keys
        """
        if self.config_path is None or not self.config_path.exists():
            logging.getLogger('genre_memory').info(
                f"Config file not found: {self.config_path}, using defaults")
            return False

        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Failed to load configuration {self.config_path}: {e}") from e

        if not isinstance(data, dict):
            raise ConfigError(f"Configuration root must be an object: {self.config_path}")

        unknown = sorted(set(data) - set(_SECTIONS))
        if unknown:
            raise ConfigError(f"Unknown configuration section(s): {', '.join(unknown)}")

        for name, section in data.items():
            try:
                setattr(self, name, _build_section(name, section))
            except TypeError as e:
                raise ConfigError(f"Invalid section '{name}': {e}") from e

        logging.getLogger('genre_memory').info(f"Configuration loaded from: {self.config_path}")
        return True

    def save(self, path: Union[str, Path] = None) -> Path:
        """
        Save configuration to file

        Args:
            path: Target path (default: the path it was loaded from)

        Returns:
            Path: the written file
        """
        target = Path(path) if path else self.config_path
        if target is None:
            raise ConfigError("No configuration path to save to")
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write('\n')
        return target

    def update_from_dict(self, data: Dict[str, Any]) -> None:
        """
        Update configuration from a nested dictionary; None values are ignored
        so unset command line flags leave file values in place.

        Args:
            data: Dictionary with configuration updates
        """
        for name, updates in data.items():
            if name not in _SECTIONS:
                raise ConfigError(f"Unknown configuration section: {name}")
            section = getattr(self, name)
            for key, value in updates.items():
                if not hasattr(section, key):
                    raise ConfigError(f"Unknown key '{key}' in section '{name}'")
                if value is not None:
                    setattr(section, key, value)

    def to_dict(self) -> Dict[str, Any]:
        """
        Convert configuration to dictionary

        Returns:
            Dict: Configuration as dictionary
        """
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def validate(self) -> bool:
        """
        Validate configuration values

        Returns:
            bool: True if configuration is valid

        Raises:
            ConfigError: listing every violated constraint
        """
        problems = []
        ingest, model, evaluation = self.ingest, self.model, self.evaluation

        if ingest.min_le < 1 or ingest.max_le < 1:
            problems.append(f"min_le/max_le must be positive ({ingest.min_le}, {ingest.max_le})")
        if ingest.min_le > ingest.max_le:
            problems.append(f"min_le {ingest.min_le} exceeds max_le {ingest.max_le}")
        if not (0 <= ingest.min_rel_freq <= 1):
            problems.append(f"min_rel_freq must be in [0, 1]: {ingest.min_rel_freq}")
        if ingest.group_size < 1:
            problems.append(f"group_size must be positive: {ingest.group_size}")
        if ingest.mainstreaminess_mode not in MAINSTREAMINESS_MODES:
            problems.append(f"Unknown mainstreaminess mode: {ingest.mainstreaminess_mode}")

        for group, d in model.d_override.items():
            if group not in GROUP_NAMES:
                problems.append(f"d_override names unknown group: {group}")
            if not d > 0:
                problems.append(f"d_override for {group} must be positive: {d}")
        if model.decay_fit_events not in DECAY_FIT_EVENTS:
            problems.append(f"decay_fit_events must be one of {DECAY_FIT_EVENTS}: {model.decay_fit_events}")
        if model.decay_bins < 2:
            problems.append(f"decay_bins must be at least 2: {model.decay_bins}")
        grid = model.decay_reference_grid
        if grid is not None and (len(grid) < 3 or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] <= 0):
            problems.append("decay_reference_grid must be at least 3 increasing positive edges")
        for key in ('cf_user_neighbors', 'cf_item_neighbors', 'cf_item_top_artists'):
            if getattr(model, key) < 1:
                problems.append(f"{key} must be positive: {getattr(model, key)}")

        if not (0 < evaluation.split_fraction < 1):
            problems.append(f"split_fraction must be in (0, 1): {evaluation.split_fraction}")
        if evaluation.k_max < 1:
            problems.append(f"k_max must be positive: {evaluation.k_max}")
        if not (0 < evaluation.alpha < 1):
            problems.append(f"alpha must be in (0, 1): {evaluation.alpha}")
        if evaluation.workers < 1:
            problems.append(f"workers must be positive: {evaluation.workers}")
        unknown = [a for a in evaluation.algorithms if a not in ALGORITHMS + DEBUG_ALGORITHMS]
        if unknown:
            problems.append(f"Unknown algorithm(s): {', '.join(unknown)}")

        if self.logging.level.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            problems.append(f"Invalid log level: {self.logging.level}")

        if problems:
            raise ConfigError("Invalid configuration: " + "; ".join(problems))
        return True


def load_config(config_path: Union[str, Path] = None) -> Config:
    """
    Load configuration from file or create default

    Args:
        config_path: Path to configuration file (optional)

    Returns:
        Config: Loaded configuration object
    """
    return Config(config_path)
