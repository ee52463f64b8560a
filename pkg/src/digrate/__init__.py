"""digrate: deterministic simulator and rate-bound toolkit for distributed
first-order optimization over time-varying undirected and directed graphs.

Gradient tracking keeps a running estimate of the network-average gradient
with fixed step sizes; the push-sum pairing extends it to directed graphs
with column stochastic mixing. The rates module evaluates the closed-form
geometric rate certificates and runs small-gain audits over recorded traces.
"""

__version__ = "0.1.0"

from . import algorithms, graphs, harness, mixing, objectives, rates, traces

__all__ = ["algorithms", "graphs", "harness", "mixing", "objectives",
           "rates", "traces", "__version__"]
