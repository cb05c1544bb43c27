"""Cluster-partitioned mini-batch training of graph convolutional networks."""

__version__ = "0.1.0"
