"""Command-level DDR4 Rowhammer testing simulator."""

__version__ = "0.1.0"

from .adjacency import AdjacencyMap, Kind
from .device import DramDevice, FlipReport
from .profiles import DeviceProfile, load_profile
from .protocol import Command, Op, decode, encode
from .timing import TimingParams, optimal_act_rate

__all__ = ["AdjacencyMap", "Command", "DeviceProfile", "DramDevice", "FlipReport", "Kind", "Op",
           "TimingParams", "decode", "encode", "load_profile", "optimal_act_rate"]
