"""Vertex-reinforced random walk laboratory on the integer line."""
from .rng import DERIVATION_VERSION, UniformTable, parse_seed, replicate_seed
from .walk import VRRW, RunRecord, Snapshot, WalkState, __version__, run, step

__all__ = [
    "DERIVATION_VERSION",
    "RunRecord",
    "Snapshot",
    "UniformTable",
    "VRRW",
    "WalkState",
    "__version__",
    "parse_seed",
    "replicate_seed",
    "run",
    "step",
]
