"""Ground-plane point cloud registration toolkit.

Subpackages: geom (transform algebra), synth (scan simulation and
datasets), icp (classic baseline), autodiff (tensor library), alignnet
(learned aligner), harness (training, metrics, CLI).  estimators wraps
the two aligners behind a fit/predict interface.
"""

from . import alignnet, autodiff, geom, harness, icp, synth
from .estimators import AlignNetAligner, BaseEstimator, IcpAligner

__version__ = "0.1.0"

__all__ = [
    "alignnet",
    "autodiff",
    "geom",
    "harness",
    "icp",
    "synth",
    "AlignNetAligner",
    "BaseEstimator",
    "IcpAligner",
    "__version__",
]
