"""Automated offline A/B evaluation.

Periodically evaluates populations of policy variants against windows of
logged interaction data using off-policy estimators, searches the variant
space with a genetic algorithm, and persists results with drift flags for
human review.
"""

__version__ = "0.1.0"
