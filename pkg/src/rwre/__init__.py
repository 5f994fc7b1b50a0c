"""Monte Carlo simulation of random walks in i.i.d. random environments on Z^d,
with cone renewal structures and the estimators built on them."""

__version__ = "0.1.0"
