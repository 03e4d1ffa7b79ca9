"""Figure rendering for experiment CSV artefacts."""

from .figures import (
    FigureSpec,
    ParseError,
    fit_slope,
    plot_band,
    plot_convergence,
    plot_histogram,
    plot_ranking,
    render,
)

__version__ = "0.1.0"
