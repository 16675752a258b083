"""Hot kernels with a compiled core and a pure-Python fallback.

The compiled extension is used when it was built and imports cleanly;
set ``DTQNCC_PURE_PYTHON=1`` to force the fallback. ``BACKEND`` names the
implementation in use.
"""

import os

from . import _pykernels as python

compiled = None
if os.environ.get("DTQNCC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

pick_min_rtt = _impl.pick_min_rtt
pick_min_rtt_batch = _impl.pick_min_rtt_batch
attention_forward = _impl.attention_forward
attention_backward = _impl.attention_backward

__all__ = [
    "BACKEND",
    "attention_backward",
    "attention_forward",
    "compiled",
    "pick_min_rtt",
    "pick_min_rtt_batch",
    "python",
]
