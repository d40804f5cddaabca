"""Multi-user MIMO uplink detection and link-level simulation.

Submodules
----------
numkit
    Complex QR (plain and sorted), Cholesky, whitening, Hermitian solves.
airlink
    Constellations, correlated channel with interferers, pilot channel
    estimation, interference+noise covariance estimation.
detectors
    Linear MMSE/IRC/MRC, sorted-QR OSIC, K-best and sorting-reduced
    K-best tree searches, exhaustive ML, and the interference-whitening
    robust detector chain.
fec
    Seeded (288, 144) regular LDPC code with normalized min-sum decoding.
bench
    Scenario configs, the deterministic Monte-Carlo BER engine, and CSV /
    plot-data output.
"""

from . import airlink, bench, detectors, errors, fec, numkit

__version__ = "0.1.0"

__all__ = ["airlink", "bench", "detectors", "errors", "fec", "numkit", "__version__"]
