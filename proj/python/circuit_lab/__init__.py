"""Python bindings for the circuit_lab C++ core."""

from ._core import (
    CapacityError,
    Checkpoint,
    ConfigError,
    CorruptionError,
    Dataset,
    DivergenceError,
    Error,
    ExperimentConfig,
    IncompatibleVersion,
    InvalidInput,
    ModelConfig,
    ModelParams,
    ParseError,
    TaskConfig,
    attention_weights,
    barrier_ratio,
    cli_main,
    cluster_purity,
    enumerate_dataset,
    evaluate,
    export_clusters,
    forward,
    generate_dataset,
    grad_check,
    init_params,
    interpolate_losses,
    lerp,
    load_checkpoint,
    load_config,
    load_dataset,
    loss_and_grads,
    mean_attention,
    oracle_label,
    param_count,
    parse_config,
    run_curriculum,
    save_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
