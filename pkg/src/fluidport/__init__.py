"""Fluid-antenna port prediction toolkit.

Pipeline: synthesize time-varying channel tables from a geometric
multipath model, train a transformer with low-rank adapters to forecast
future tables, select the port that keeps the effective channel aligned
with a reference, and score the result against baselines.
"""

__version__ = "0.1.0"

from .channel import (
    BsArray,
    CarrierConfig,
    FluidGrid,
    MultipathChannel,
    PathParams,
    channel_table,
    channel_vector,
    reference_table,
)
from .configio import ConfigError, RunConfig, load_config
from .dataset import (
    Dataset,
    ScenarioConfig,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .evaluation import EvalConfig, evaluate, nmse_t, nmse_v, sinr, spectral_efficiency
from .kernels import BACKEND
from .model import NetConfig, PortLLM, build_model, load_checkpoint, save_checkpoint
from .ports import PortIndex, select_port_multi, select_port_single, unravel_index
from .training import TrainConfig, train

__all__ = [
    "__version__",
    "BACKEND",
    "BsArray",
    "CarrierConfig",
    "ConfigError",
    "Dataset",
    "EvalConfig",
    "FluidGrid",
    "MultipathChannel",
    "NetConfig",
    "PathParams",
    "PortIndex",
    "PortLLM",
    "RunConfig",
    "ScenarioConfig",
    "TrainConfig",
    "build_model",
    "channel_table",
    "channel_vector",
    "evaluate",
    "generate_dataset",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "nmse_t",
    "nmse_v",
    "reference_table",
    "save_checkpoint",
    "save_dataset",
    "select_port_multi",
    "select_port_single",
    "sinr",
    "spectral_efficiency",
    "train",
    "unravel_index",
]
