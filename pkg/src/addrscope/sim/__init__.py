"""Deterministic ADDR-gossip simulator with ground truth.

The cascade kernel has two interchangeable backends: a Cython extension
(built at install time) and a pure-Python fallback. They are bit-identical;
the compiled one is roughly an order of magnitude faster and is selected
automatically when available. Set ``ADDRSCOPE_PURE=1`` to force the
fallback.
"""

import os

from . import gossip_py

if os.environ.get("ADDRSCOPE_PURE"):
    kernel = gossip_py
else:
    try:
        from . import _gossip as kernel  # type: ignore[no-redef]
    except ImportError:
        kernel = gossip_py

KERNEL_BACKEND = kernel.BACKEND

from .config import ChurnConfig, SimConfig, load_config  # noqa: E402
from .engine import Simulation, SimResultPaths  # noqa: E402
from .evaluate import evaluate_run, write_recall_csv  # noqa: E402
