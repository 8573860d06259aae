"""Dynamic functional connectivity features and a population-graph GCN for AD/NC classification."""

__version__ = "0.1.0"
