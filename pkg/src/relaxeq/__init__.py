"""Regularized equilibria of time-inconsistent stochastic control problems.

Finite-difference and Monte Carlo tools for entropy-regularized (exploratory)
equilibrium HJB systems: Gibbs policies, policy evaluation, a damped fixed
point at each temperature, annealing to zero temperature and a
spike-perturbation check of the equilibrium condition.
"""

from .annealing import *  # noqa: F401,F403
from .config import *  # noqa: F401,F403
from .evaluation import *  # noqa: F401,F403
from .fixed_point import *  # noqa: F401,F403
from .gibbs import *  # noqa: F401,F403
from .grid import *  # noqa: F401,F403
from .norms import *  # noqa: F401,F403
from .problem import *  # noqa: F401,F403
from .verifier import *  # noqa: F401,F403
from . import annealing, config, evaluation, fixed_point, gibbs, grid, norms, problem, verifier

__version__ = "0.1.0"

__all__ = sorted(set(annealing.__all__ + config.__all__ + evaluation.__all__ + fixed_point.__all__
                     + gibbs.__all__ + grid.__all__ + norms.__all__ + problem.__all__ + verifier.__all__))
