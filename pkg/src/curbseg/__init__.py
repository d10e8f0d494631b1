"""Curb detection from LiDAR point clouds.

Pipeline: KITTI-style IO, distance-aware cylindrical voxelization, a small
sparse-convolution segmentation network with multi-scale channel attention,
imbalance-aware losses, DBSCAN + polynomial curve-fit noise removal, and a
tolerance-based evaluation harness.
"""

__version__ = "0.1.0"
