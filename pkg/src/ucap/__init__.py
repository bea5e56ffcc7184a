"""Unsupervised image captioning on a desk-scale synthetic world."""

__version__ = "0.1.0"
