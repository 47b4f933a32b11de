"""Kernel backend selection.

The compiled extension is preferred when importable; set SEQDA_BACKEND=python
to force the numpy fallback (SEQDA_BACKEND=c fails loudly if the extension is
missing).  ``BACKEND`` names the active choice.
"""

import os

from . import numpy_backend

_choice = os.environ.get("SEQDA_BACKEND", "").lower()

if _choice == "python":
    _impl = numpy_backend
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "c"
    except ImportError:
        if _choice == "c":
            raise
        _impl = numpy_backend
        BACKEND = "python"

lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
ctc_forward_backward = _impl.ctc_forward_backward
