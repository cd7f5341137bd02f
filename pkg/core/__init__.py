"""Gauge structure functions of singular Lagrangians: parsing, tensors and identity checks."""
