"""Fiber orientation reconstruction with a network-guided sparse solver.

A diffusion-signal dictionary over dense basis orientations is solved per
voxel as weighted nonnegative l1-regularized least squares; the weights come
from a trained unfolded thresholding network operating on a coarse basis.
Includes a synthetic crossing phantom, classical l1 baselines, and a
quantitative evaluation harness.
"""

__version__ = "0.1.0"

from ._accel import backend_name  # noqa: F401
