__version__ = "0.1.0"

from privclust.runner import ExperimentRunner
from privclust.protocol import run_protocol
from privclust.selection import server_recommend

__all__ = ["ExperimentRunner", "run_protocol", "server_recommend"]
