"""Numerical homogenization of pore-scale Stokes / Cahn-Hilliard flow.

Modules
-------
geometry    unit cell, pore masks, periodic perforated domain
linalg      CSR matrices, CG, MINRES, Uzawa, mean-zero projection
discretize  MAC / finite-volume operators on masked grids
cell        cell problems and effective coefficients
micro       pore-scale time stepping with energy and estimate monitors
unfolding   periodic unfolding and two-scale error measures
macro       upscaled Cahn-Hilliard-type equation and Darcy reconstruction
sweep       eps-sweeps comparing micro runs with two-scale limits
cli         ``porehomog`` command line
"""

__version__ = "0.1.0"
