"""Coordinate-descent kernel with compiled/pure backend selection.

The compiled extension is optional at build time; if it is absent (no C
compiler, or a source-only install) the pure-Python reference kernel takes
over with identical semantics. ``BACKEND`` records which one is live.
"""

try:
    from ._cd_fast import cd_quadratic_l1

    BACKEND = "compiled"
except ImportError:  # pragma: no cover - depends on build environment
    from ._cd_py import cd_quadratic_l1

    BACKEND = "python"

__all__ = ["cd_quadratic_l1", "BACKEND"]
