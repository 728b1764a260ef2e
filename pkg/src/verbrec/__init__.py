"""verbrec: verbalize tabular recommender data, embed it, train CTR models."""

__version__ = "0.1.0"
