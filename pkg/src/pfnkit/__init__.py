"""Desk-scale prior-data fitted networks for tabular classification.

A small transformer learns approximate posterior-predictive inference from
synthetic tasks; tuned prompts, context sketching, feature selection,
class extension, fairness-regularized tuning and a benchmark statistics
harness are built on top of it.
"""

__version__ = "0.1.0"
