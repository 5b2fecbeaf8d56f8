"""
Under-reporting audit - simulate, predict, measure and mitigate differential
feature under-reporting in linear risk models.
"""

__version__ = "0.1.0"
__author__ = "Under-reporting audit developers"
