"""Weekly oil-news sentiment features, a boosted-tree learner and its evaluation."""

__version__ = "0.1.0"
