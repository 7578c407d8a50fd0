"""Top-level utils package.

Allows imports like `from utils.data_access import DataAccess` when running
from the repository root.
"""

__all__ = ["data_access"]
