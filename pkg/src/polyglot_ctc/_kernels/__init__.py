"""Hot-loop kernels: compiled Cython core when built, numpy fallback otherwise.

Set ``POLYGLOT_CTC_PURE=1`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
if os.environ.get("POLYGLOT_CTC_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
else:
    _impl = _fallback

ctc_lattice = _impl.ctc_lattice
lstm_sweep_forward = _impl.lstm_sweep_forward
lstm_sweep_backward = _impl.lstm_sweep_backward

__all__ = ["BACKEND", "ctc_lattice", "lstm_sweep_forward", "lstm_sweep_backward"]
