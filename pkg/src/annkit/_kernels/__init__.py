"""Kernel dispatch: compiled extension when available, numpy fallback otherwise.

``annkit._kernels.impl`` is the active backend. Set ANNKIT_PURE_PYTHON=1
before import to force the fallback (used by the kernel-equivalence tests and
the `bench kernels` comparison).
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("ANNKIT_PURE_PYTHON") == "1":
    impl = _pykernels
else:
    try:
        from . import _ckernels as impl  # type: ignore[no-redef]
    except ImportError:
        impl = _pykernels

COMPILED: bool = impl.COMPILED

METRIC_CODES = {
    "ip": _pykernels.M_IP,
    "l2": _pykernels.M_L2,
    "l1": _pykernels.M_L1,
    "linf": _pykernels.M_LINF,
    "lp": _pykernels.M_LP,
    "canberra": _pykernels.M_CANBERRA,
    "braycurtis": _pykernels.M_BRAYCURTIS,
    "jensenshannon": _pykernels.M_JENSENSHANNON,
    "jaccard": _pykernels.M_JACCARD,
    "naneuclidean": _pykernels.M_NANEUCLIDEAN,
}

pairwise = impl.pairwise
dist_single = impl.dist_single
hamming_matrix = impl.hamming_matrix
unpack_codes = impl.unpack_codes
lut_sum_packed = impl.lut_sum_packed
