"""moeplace-plots: comparison figures from moeplace sweep results."""

from .figures import FIGSETS, FigureSpec, load_results, render

__version__ = "0.1.0"
