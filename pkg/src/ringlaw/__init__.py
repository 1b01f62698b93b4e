"""Single-ring-law analysis of multichannel measurement streams."""
from .errors import RingLawError
from .rmt import (
    DataWindow,
    RingParams,
    Spectrum,
    eigenvalues,
    expected_msr,
    msr,
    normalize_product,
    normalize_product_rows,
    ring_conformance,
    ring_density,
    ring_product,
    singular_value_equivalent,
    standardize_rows,
)

__version__ = "0.1.0"
