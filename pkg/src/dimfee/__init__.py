"""Laboratory for one- versus multi-dimensional blockchain fee markets."""

from .mechanism import (
    BaseFeeState,
    Block,
    GasConfig,
    Mempool,
    ResourceBounds,
    SyntheticProjection,
    Transaction,
    update_base_fee_1d,
    update_base_fee_md,
)

__version__ = "0.1.0"

__all__ = [
    "BaseFeeState",
    "Block",
    "GasConfig",
    "Mempool",
    "ResourceBounds",
    "SyntheticProjection",
    "Transaction",
    "update_base_fee_1d",
    "update_base_fee_md",
    "__version__",
]
