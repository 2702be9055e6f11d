"""Workbench for finding jointly sparse subgraphs and subnetworks."""

__version__ = "0.1.0"
