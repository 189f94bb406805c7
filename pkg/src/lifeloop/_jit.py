"""Shared numba decorator; kernels compile once and are cached on disk."""

import numba

njit = numba.njit(cache=True, nogil=True)
