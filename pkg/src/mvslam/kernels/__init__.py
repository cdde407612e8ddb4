"""Hot loops with numba and numpy implementations (see :mod:`mvslam._accel`)."""

from . import features, texture, tsdf

__all__ = ["features", "texture", "tsdf"]
