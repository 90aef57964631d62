"""PUF-keyed logit fingerprinting for knowledge distillation traceability."""

from puffprint.encoding import EncodingScheme, Variant, analytic_decode, embed, encode
from puffprint.puf import (
    KeyRegistry,
    NoiseModel,
    PufKey,
    apply_noise,
    generate_registry,
    hamming_distance,
)
from puffprint.quantize import QuantSpec, quantize

__version__ = "0.1.0"

__all__ = [
    "EncodingScheme",
    "KeyRegistry",
    "NoiseModel",
    "PufKey",
    "QuantSpec",
    "Variant",
    "analytic_decode",
    "apply_noise",
    "embed",
    "encode",
    "generate_registry",
    "hamming_distance",
    "quantize",
]
