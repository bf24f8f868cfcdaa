"""
Genre Memory Model - Source Package

Models music-genre preferences of listeners with the ACT-R activation
equation and evaluates it against classic baselines on listening logs.
"""

__version__ = "1.0.0"
__author__ = "growmation21"
__description__ = "Psychology-inspired genre preference modeling and offline evaluation"
