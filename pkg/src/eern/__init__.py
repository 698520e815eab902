"""Equivariant layers for multi-relational data, with a factorized auto-encoder
for missing-record prediction and coupled factorization baselines."""

__version__ = "0.1.0"

from .schema import Schema, SchemaError, parse_schema, load_schema, make_schema  # noqa: E402
from .relstore import RelInstance, DataError  # noqa: E402
from .tying import TiedWeights, num_free_params, class_of  # noqa: E402
from .eerl import Activation, forward, backward  # noqa: E402
from .model import FactorizedAutoencoder  # noqa: E402
from .cmtf import CoupledFactorization, fit_ccpf, fit_ctkf  # noqa: E402

__all__ = [
    "Schema", "SchemaError", "parse_schema", "load_schema", "make_schema",
    "RelInstance", "DataError", "TiedWeights", "num_free_params", "class_of",
    "Activation", "forward", "backward", "FactorizedAutoencoder",
    "CoupledFactorization", "fit_ccpf", "fit_ctkf",
]
