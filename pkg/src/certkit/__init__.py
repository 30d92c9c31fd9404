"""Robustness verification, attack, training and benchmarking for feed-forward ReLU classifiers."""

from .core import (
    TAU,
    Affine,
    LabeledSample,
    Network,
    Norm,
    Relu,
    Status,
    VerificationProblem,
    Verdict,
    backward_input,
    forward,
    load_dataset,
    load_network,
    predict,
    save_dataset,
    save_network,
)

__version__ = "0.1.0"

__all__ = [
    "TAU",
    "Affine",
    "LabeledSample",
    "Network",
    "Norm",
    "Relu",
    "Status",
    "VerificationProblem",
    "Verdict",
    "backward_input",
    "forward",
    "load_dataset",
    "load_network",
    "predict",
    "save_dataset",
    "save_network",
]
