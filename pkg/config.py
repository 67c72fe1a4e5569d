import os
from pathlib import Path

from dotenv import dotenv_values, load_dotenv

from errors import ArgumentError

load_dotenv()

_ROOT = Path(__file__).parent

THREADS: int = int(os.environ["CLOUDATTN_THREADS"]) if os.environ.get("CLOUDATTN_THREADS") else (os.cpu_count() or 1)
RUNS_DB: Path = Path(os.environ.get("CLOUDATTN_RUNS_DB") or _ROOT / "runs.db")
CHECKPOINT_DIR: Path = Path(os.environ.get("CLOUDATTN_CHECKPOINT_DIR") or _ROOT / "checkpoints")
DTYPE: str = os.environ.get("CLOUDATTN_DTYPE", "float64")


def read_config_file(path: str | os.PathLike | None) -> dict[str, str]:
    """Parse a flat key=value config file. Missing path -> FileNotFoundError."""
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise FileNotFoundError(f"config file not found: {path}")
    return {k: v for k, v in dotenv_values(path).items() if v is not None}


def parse_overrides(pairs: list[str] | None) -> dict[str, str]:
    """Turn repeated `--set key=value` flags into a dict."""
    out: dict[str, str] = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ArgumentError(f"expected key=value, got '{pair}'")
        out[key.strip()] = value.strip()
    return out


def merge_overrides(file_values: dict[str, str], flag_values: dict[str, str]) -> dict[str, str]:
    """Flags win over file values."""
    return {**file_values, **flag_values}


def parse_bool(value: str | bool) -> bool:
    if isinstance(value, bool):
        return value
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ArgumentError(f"expected a boolean, got '{value}'")


def parse_ints(value: str | list | tuple) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    try:
        return tuple(int(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise ArgumentError(f"expected a comma-separated integer list, got '{value}'") from None


def parse_floats(value: str | list | tuple) -> tuple[float, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    try:
        return tuple(float(v) for v in value.split(",") if v.strip())
    except ValueError:
        raise ArgumentError(f"expected a comma-separated number list, got '{value}'") from None
