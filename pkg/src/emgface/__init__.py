"""Cycle-consistent facial reconstruction under electrode occlusion, with a
bidirectional expression/EMG mapping, exercised end-to-end on a synthetic
world with known ground truth."""

__version__ = "0.1.0"
