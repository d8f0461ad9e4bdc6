import hashlib
import json
from concurrent.futures import Future, as_completed
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import yaml
from rich.console import Console
from tqdm import tqdm

from privclust.errors import ConfigError


def load_config(config_path: str) -> Dict[str, Any]:
    """
    Load and parse a YAML experiment configuration.

    Args:
        config_path (str): Path to the YAML configuration file.

    Returns:
        Dict[str, Any]: Parsed configuration as a dictionary.

    Raises:
        ConfigError: If the file is missing, unparsable, or not a mapping.
    """
    try:
        with open(config_path, "r", encoding="utf-8") as config_file:
            config = yaml.safe_load(config_file)
    except FileNotFoundError:
        raise ConfigError(f"Configuration file not found: {config_path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"Error parsing YAML configuration: {e}")
    if not isinstance(config, dict):
        raise ConfigError(
            f"Configuration file {config_path} must contain a mapping at top level"
        )
    return config


def config_hash(config: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON dump of a configuration."""
    dumped = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(dumped.encode()).hexdigest()


def derive_seeds(seed: int, count: int) -> List[int]:
    """
    Derive `count` independent integer seeds from a master seed.

    The derivation only depends on (seed, position), so adding more children
    never changes the seeds already handed out.
    """
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in children]


class classproperty(object):
    def __init__(self, f):
        self.f = f

    def __get__(self, obj, owner):
        return self.f(owner)


class RichLoopBar:
    """
    tqdm progress bar that writes to a rich Console's file, used as a
    context manager with manual `update` calls.
    """

    def __init__(
        self,
        total: Optional[int] = None,
        desc: Optional[str] = None,
        leave: bool = True,
        console: Optional[Console] = None,
    ):
        if console is None:
            raise ValueError("Console must be provided")
        self.console = console
        self.total = total
        self.description = desc
        self.leave = leave
        self.tqdm: Optional[tqdm] = None

    def __enter__(self) -> "RichLoopBar":
        self.tqdm = tqdm(
            total=self.total,
            desc=self.description,
            leave=self.leave,
            file=self.console.file,
        )
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        if self.tqdm is not None:
            self.tqdm.close()

    def update(self, n: int = 1) -> None:
        if self.tqdm is not None:
            self.tqdm.update(n)


def rich_as_completed(
    futures: Sequence[Future],
    desc: Optional[str] = None,
    console: Optional[Console] = None,
) -> List[Any]:
    """
    Wait for `futures` with a progress bar and return their results in
    submission order, whatever order they complete in.
    """
    if console is None:
        raise ValueError("Console must be provided")
    index = {id(future): i for i, future in enumerate(futures)}
    results: List[Any] = [None] * len(futures)
    with RichLoopBar(total=len(futures), desc=desc, console=console) as pbar:
        for future in as_completed(futures):
            results[index[id(future)]] = future.result()
            pbar.update()
    return results
