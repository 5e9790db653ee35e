"""
cprstab - Stability, throughput and simulation toolkit for coded Poisson receivers
"""

__version__ = "1.0.0"
