"""Mean-field multi-agent RL on a network of states.

Library layout:
  graph      undirected state graph and k-hop windows
  env        model primitives, exact count distributions, team/agent steppers
  policies   individual policies, multinomial lift, energy-based team policy
  nets       two-layer ReLU nets, feature maps, box projection
  oracle     brute-force exact tables on enumerable instances
  sampling   stationary / visitation chain samplers
  training   localized neural TD critic and actor-critic (functional core)
  estimators sklearn-style wrappers around the trainers
  config     config schema, loading, overrides
  runs       run directories, manifests, checkpoints
  verification  the machine-checkable acceptance suite
  cli        the mfnet command line
"""

__version__ = "0.1.0"

from .env import line3_model  # noqa: F401
from .graph import build_graph, complement_k_hop, k_hop, restrict  # noqa: F401
