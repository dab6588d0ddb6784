"""Report rendering modules"""

from .formatter import ReportFormatter

__all__ = ['ReportFormatter']
