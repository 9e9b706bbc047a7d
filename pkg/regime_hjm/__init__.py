"""Regime-switching HJM forward curves for energy futures and interest rates"""


__version__ = "0.3.0"
