"""Hot numerical kernels with a compiled core and a numpy fallback.

The compiled extension is used when it imports; otherwise (or when the
environment variable ``LATENTRL_PURE_PYTHON`` is set to a non-empty value
other than ``0``) the numpy versions are used. ``BACKEND`` names the active one.
"""
from __future__ import annotations

import os

from . import _fallback

_force_py = os.environ.get("LATENTRL_PURE_PYTHON", "") not in ("", "0")

if _force_py:
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

diag_gaussian_logp = _impl.diag_gaussian_logp
diag_gaussian_logp_grad = _impl.diag_gaussian_logp_grad
clipped_surrogate = _impl.clipped_surrogate
diag_gaussian_kl = _impl.diag_gaussian_kl
contrastive_loss = _impl.contrastive_loss

LOG_2PI = _fallback.LOG_2PI
LOG_RATIO_BOUND = _fallback.LOG_RATIO_BOUND


def compiled_available() -> bool:
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return False
    return True


__all__ = [
    "BACKEND", "LOG_2PI", "LOG_RATIO_BOUND", "compiled_available",
    "diag_gaussian_logp", "diag_gaussian_logp_grad", "clipped_surrogate",
    "diag_gaussian_kl", "contrastive_loss",
]
