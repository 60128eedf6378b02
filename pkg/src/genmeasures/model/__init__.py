"""Network architectures, parameter storage, forward inference, and checkpoints."""
from .checkpoint import (
    Checkpoint,
    CheckpointFormatError,
    CheckpointVersionError,
    Outputs,
    ParamVector,
    build,
    devectorize,
    forward,
    forward_squared_on_ones,
    load,
    predict_logits,
    save,
    vectorize,
    with_params,
)
from .network import NonFiniteActivationError, run_graph
from .spec import (
    Graph,
    NetworkSpec,
    Node,
    SequentialSpec,
    SpecError,
    conv_param_count,
    param_count,
    spec_from_dict,
)

__all__ = [
    "Checkpoint", "CheckpointFormatError", "CheckpointVersionError", "Graph", "NetworkSpec",
    "Node", "NonFiniteActivationError", "Outputs", "ParamVector", "SequentialSpec", "SpecError",
    "build", "conv_param_count", "devectorize", "forward", "forward_squared_on_ones", "load",
    "param_count", "predict_logits", "run_graph", "save", "spec_from_dict", "vectorize",
    "with_params",
]
