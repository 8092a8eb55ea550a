"""CSR matvec kernels with a compiled core and a numpy fallback.

The compiled extension is preferred when importable; set the environment
variable ``SISQO_KERNELS=python`` (before import) or call
:func:`use_backend` to force the numpy reference implementation.
"""

import os

from . import reference

_BACKENDS = {"python": reference}
try:
    from . import _csrkern

    _BACKENDS["compiled"] = _csrkern
except ImportError:
    _csrkern = None

if os.environ.get("SISQO_KERNELS", "") == "python" or _csrkern is None:
    _active_name = "python"
else:
    _active_name = "compiled"
_active = _BACKENDS[_active_name]


def available_backends():
    """Names of the importable kernel backends."""
    return sorted(_BACKENDS)


def active_backend():
    """Name of the backend currently dispatched to."""
    return _active_name


def use_backend(name):
    """Switch kernel backend at runtime (used by tests and benchmarks)."""
    global _active, _active_name
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; "
                         f"available: {available_backends()}")
    _active_name = name
    _active = _BACKENDS[name]


def csr_matvec(indptr, indices, data, x, out):
    _active.csr_matvec(indptr, indices, data, x, out)


def csr_rmatvec(indptr, indices, data, x, out):
    _active.csr_rmatvec(indptr, indices, data, x, out)
