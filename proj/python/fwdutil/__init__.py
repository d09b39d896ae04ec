"""Forward utility flows: markets, flow-built utilities and verification runs."""

from ._fwdutil import (
    FwdError,
    InitialUtility,
    Market,
    load_config,
    log_grid,
    merton_utility_field,
    mixture_primal,
    run,
    summarize,
)

__all__ = [
    "FwdError",
    "InitialUtility",
    "Market",
    "load_config",
    "log_grid",
    "merton_utility_field",
    "mixture_primal",
    "run",
    "summarize",
]
