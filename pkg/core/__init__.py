"""
erank - Core Package
====================
Logging, configuration, error hierarchy and shared helpers for the ranking pipeline
"""

__version__ = "1.0.0"
