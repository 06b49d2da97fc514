"""Membership-inference privacy scores for recommender-system training data."""

__version__ = "0.1.0"
