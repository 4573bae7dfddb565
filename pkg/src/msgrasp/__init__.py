"""Model-free grasp detection for multi-suction-cup grippers.

The pipeline turns a depth/intensity scene into geometric feature maps,
obtains a pixel-wise grasp quality map, matches rotated gripper
footprints against it and emits ranked 6-DoF grasp candidates.
"""

__version__ = "0.1.0"
