"""
Runtime settings for the fracspde command line.

Settings come from environment variables (optionally via a ``.env`` file
loaded by the entry point):

- FRACSPDE_SEED        default random seed, below ``--seed`` and above the config file
- FRACSPDE_WORKERS     concurrent trajectory workers
- FRACSPDE_LOG_LEVEL   logging level name
- FRACSPDE_OUTPUT_DIR  artifact directory, below ``--out`` and above the config file
"""

import logging
import os
from dataclasses import dataclass
from typing import Optional

DEFAULT_SEED = 42
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


@dataclass
class RuntimeSettings:
    """Environment-level overrides for a CLI run."""
    seed: Optional[int] = None
    workers: int = 1
    log_level: str = "INFO"
    output_dir: Optional[str] = None


def _int_env(name: str) -> Optional[int]:
    raw = os.getenv(name)
    if raw is None or raw.strip() == '':
        return None
    try:
        return int(raw)
    except ValueError:
        logging.warning(f"⚠️ Ignoring non-integer {name}={raw!r}")
        return None


def load_runtime_settings() -> RuntimeSettings:
    """
    Load runtime settings from environment variables.

    Returns:
        RuntimeSettings: settings with environment overrides applied
    """
    workers = _int_env('FRACSPDE_WORKERS')
    return RuntimeSettings(
        seed=_int_env('FRACSPDE_SEED'),
        workers=workers if workers and workers > 0 else 1,
        log_level=os.getenv('FRACSPDE_LOG_LEVEL', 'INFO').upper(),
        output_dir=os.getenv('FRACSPDE_OUTPUT_DIR') or None,
    )


def resolve_seed(cli_seed: Optional[int], settings: RuntimeSettings, config_seed: Optional[int]) -> int:
    """Seed precedence: CLI flag > FRACSPDE_SEED > config file > default."""
    for candidate in (cli_seed, settings.seed, config_seed):
        if candidate is not None:
            return candidate
    return DEFAULT_SEED


def resolve_workers(cli_workers: Optional[int], settings: RuntimeSettings) -> int:
    if cli_workers is not None:
        if cli_workers < 1:
            raise ValueError(f"--workers must be >= 1, got {cli_workers}")
        return cli_workers
    return settings.workers


def configure_logging(level: str = "INFO") -> None:
    """
    Configure root logging for the CLI.

    Args:
        level: logging level name (debug, info, warning, error, critical)
    """
    numeric = logging.getLevelName(level.upper())
    if not isinstance(numeric, int):
        numeric = logging.INFO
    logging.basicConfig(level=numeric, format=LOG_FORMAT, force=True)


def initialize_runtime(log_level: Optional[str] = None) -> RuntimeSettings:
    """
    Load environment settings and set up logging.

    Returns:
        RuntimeSettings: the loaded settings
    """
    settings = load_runtime_settings()
    if log_level:
        settings.log_level = log_level.upper()
    configure_logging(settings.log_level)

    overrides = []
    if settings.seed is not None:
        overrides.append(f"seed={settings.seed}")
    if settings.workers != 1:
        overrides.append(f"workers={settings.workers}")
    if settings.output_dir:
        overrides.append(f"output_dir={settings.output_dir}")

    if overrides:
        logging.info(f"🔧 Environment overrides: {', '.join(overrides)}")
    else:
        logging.debug("No environment overrides")
    return settings
