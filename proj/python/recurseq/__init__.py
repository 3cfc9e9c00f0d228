"""Recursive convolutional sequence auto-encoders."""

from ._recurseq import (
    Autoencoder,
    DataError,
    ModelConfig,
    NumericalError,
    QuoteIndex,
    TrainConfig,
    balanced_pad,
    cosine,
    decode_output,
    load_autoencoder,
    nearest_pow2,
    param_count,
    run_cli,
    tokenize_bytes,
    tokenize_words,
    unpad,
)

__all__ = [
    "Autoencoder",
    "DataError",
    "ModelConfig",
    "NumericalError",
    "QuoteIndex",
    "TrainConfig",
    "balanced_pad",
    "cosine",
    "decode_output",
    "load_autoencoder",
    "nearest_pow2",
    "param_count",
    "run_cli",
    "tokenize_bytes",
    "tokenize_words",
    "unpad",
]
