"""Compromise decisions for hybrid-control trials with Normal and binomial outcomes."""

__version__ = "0.1.0"
