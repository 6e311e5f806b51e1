from .adam import AdamState, adam_step
from .autodiff import Tape, Var, stop_gradient
from .network import (CacheParams, EncodingConfig, ForwardTrace, cache_backward, cache_evaluate,
                      cache_forward, cache_radiance, constant_params, default_topology, encode_query,
                      init_params, parameter_count, query_features)

__all__ = [
    "AdamState", "CacheParams", "EncodingConfig", "ForwardTrace", "Tape", "Var",
    "adam_step", "cache_backward", "cache_evaluate", "cache_forward", "cache_radiance",
    "constant_params", "default_topology", "encode_query", "init_params", "parameter_count",
    "query_features", "stop_gradient",
]
