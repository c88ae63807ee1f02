"""Numerical experiments on SLE flows coupled with Gaussian free fields.

Submodules
----------
analytic     closed-form exponents, Green functions and densities
loewner      driver paths, forward/reverse Loewner flows, welding partners
gff          free-field sampling, circle averages, regularised measures
martingales  pathwise identities and Monte Carlo martingale checks
zipper       coupled field/flow experiments (welding, conformal covariance)
runner       experiment registry and command-line entry point
"""

__version__ = "0.1.0"
