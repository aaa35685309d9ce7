"""Planar hopping-robot learning stack.

Hybrid dynamics simulation, direct-collocation trajectory optimization,
iterative learning control, and a reusable feedforward torque library,
with a CLI harness for running the convergence / generalization /
runtime experiments.
"""

from jax import config as _jax_config

# Everything here is double precision; x64 must be set before any jax
# arrays are created, so it lives in the package root.
_jax_config.update("jax_enable_x64", True)

__version__ = "0.1.0"
