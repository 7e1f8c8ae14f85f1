"""Optional numba acceleration.

Hot kernels are decorated with :func:`njit`.  Setting ``HYBRIDSTAB_PURE_NUMPY=1``
in the environment (before import) makes the decorator a no-op so the very same
kernel source runs as plain Python/numpy.  Both paths must produce identical
floating point results; the test-suite checks this.
"""

import os

PURE_NUMPY = os.environ.get("HYBRIDSTAB_PURE_NUMPY", "0").lower() in ("1", "true", "yes")

if not PURE_NUMPY:
    try:
        import numba
    except ImportError:  # pragma: no cover
        PURE_NUMPY = True

if PURE_NUMPY:

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func

        return decorator

else:

    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        # fastmath would break bit-equality with the pure path
        kwargs["fastmath"] = False
        return numba.njit(*args, **kwargs)


BACKEND = "numpy" if PURE_NUMPY else "numba"
