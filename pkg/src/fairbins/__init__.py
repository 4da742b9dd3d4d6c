"""Post-process binned classifier scores to meet group-fairness tolerances."""

__version__ = "0.1.0"
