from ._ddsm import (
    Block,
    BlockConfig,
    ConfigError,
    ShapeError,
    affinity_ratio,
    boundary_f_score,
    dense_nonlocal,
    grid,
    reduced_width,
    run_cli,
    sample,
    spatial_attention,
)

__all__ = [
    "Block",
    "BlockConfig",
    "ConfigError",
    "ShapeError",
    "affinity_ratio",
    "boundary_f_score",
    "dense_nonlocal",
    "grid",
    "reduced_width",
    "run_cli",
    "sample",
    "spatial_attention",
]
