"""Federated non-IID quantification via encrypted CDF aggregation.

Clients evaluate their local empirical CDFs on a server-merged grid, encrypt
them under an additive ring-LWE scheme, the server sums the ciphertexts
blindly, and every client decrypts the aggregate to score how far its data
sits from the federation's.
"""

from .ecdf import (
    Dataset,
    DistributionPolicy,
    DomainSummary,
    Ecdf,
    average_cdfs,
    ecdf_eval,
    local_domain,
    merge_domains,
    pdf_from_cdf,
)
from .errors import FcdfError
from .fhe import (
    Ciphertext,
    PlainVector,
    PublicKey,
    SchemeParams,
    SecretKey,
    ct_add,
    ct_sum,
    decrypt,
    default_scheme,
    encrypt,
    keygen,
    noise_budget,
)
from .metrics import NonIidReport, build_report, ks_distance, l1_distance
from .ring import RingParams, RingPoly, make_params

__version__ = "0.1.0"
