"""Keyframe-conditioned video generation on a multi-chunk causal latent codec.

Everything runs on float64 numpy arrays.  Hot inner loops live in
``mcflow.kernels`` and are jitted with numba when available; set
``MCFLOW_BACKEND=numpy`` to force the pure-numpy fallbacks.
"""

__version__ = "0.1.0"
