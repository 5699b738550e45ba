"""Policy gradient methods as improvement and projection operators on tabular MDPs."""

__version__ = "0.1.0"
