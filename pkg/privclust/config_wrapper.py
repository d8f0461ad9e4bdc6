import os
from typing import Any, Dict, List, Optional

from pydantic import ValidationError
from rich.console import Console

from privclust.errors import ConfigError
from privclust.schemas import ExperimentConfig
from privclust.utils import config_hash, load_config

OUTPUT_ROOT_ENV = "PRIVCLUST_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"
UNHASHED_KEYS = ("output_dir", "workers")


def format_validation_error(e: ValidationError) -> str:
    """One line per failing field, dotted path first."""
    lines = []
    for err in e.errors():
        loc = ".".join(str(part) for part in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "Invalid configuration:\n  " + "\n  ".join(lines)


class ConfigWrapper(object):
    """
    Holds a validated experiment configuration together with the console
    and the worker count every stage of a run shares.
    """

    @classmethod
    def from_yaml(cls, yaml_file: str, **kwargs: Any) -> "ConfigWrapper":
        # check that file ends with .yaml or .yml
        if not yaml_file.endswith(".yaml") and not yaml_file.endswith(".yml"):
            raise ConfigError(
                "Invalid file type. Please provide a YAML file ending with '.yaml' or '.yml'."
            )

        base_name = yaml_file.rsplit(".", 1)[0]
        config = load_config(yaml_file)
        return cls(config, base_name=base_name, **kwargs)

    def __init__(
        self,
        config: Dict[str, Any],
        base_name: Optional[str] = None,
        seed: Optional[int] = None,
        output_root: Optional[str] = None,
        max_threads: Optional[int] = None,
        console: Optional[Console] = None,
    ):
        config = dict(config)
        if seed is not None:
            config["seeds"] = [seed]
        if max_threads is not None:
            config["workers"] = max_threads
        try:
            self.experiment = ExperimentConfig.model_validate(config)
        except ValidationError as e:
            raise ConfigError(format_validation_error(e)) from e

        self.config = self.experiment.model_dump(mode="json")
        self.base_name = base_name
        self.console = console or Console()
        self.max_threads = self.experiment.workers
        self.output_root = (
            output_root
            or self.experiment.output_dir
            or os.environ.get(OUTPUT_ROOT_ENV)
            or DEFAULT_OUTPUT_ROOT
        )

    @property
    def seeds(self) -> List[int]:
        return list(self.experiment.seeds)

    @property
    def hash(self) -> str:
        # where results land and how many threads made them do not change them
        hashed = {k: v for k, v in self.config.items() if k not in UNHASHED_KEYS}
        return config_hash(hashed)

    def run_dir(self, command: str) -> str:
        """Content-addressed directory of one command run for this config and its seeds."""
        seeds = self.seeds
        label = f"seed{seeds[0]}" if len(seeds) == 1 else f"seeds{seeds[0]}-{seeds[-1]}"
        return os.path.join(
            self.output_root, f"{self.experiment.name}-{self.hash[:12]}-{label}", command
        )
