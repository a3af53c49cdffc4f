"""Policy synthesis for labeled MDPs under LTL tasks with probabilistic safe return.

Modules: ``model`` (labeled MDPs and solvers), ``ltl`` / ``automata``
(formulas, lasso words, Rabin automata), ``product`` (products and
accepting end components), ``synthesis`` (LPs and reachability),
``abstraction`` (feature semi-MDPs and options), ``planner`` (baseline and
hierarchical planners), ``execution`` (Monte-Carlo harness), ``workspace``
(grid and terrain maps) and ``cli``.
"""

__version__ = "0.1.0"

from importlib.resources import files as _files


def data_path(name: str):
    """Path of a bundled corpus file such as ``office.map``."""
    return _files(__name__).joinpath("data", name)
