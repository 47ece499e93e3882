"""Decision-dominant zero-trust defense toolkit.

Lateral-movement games with hidden user types, trust engines, threshold access
policies, equilibrium computation, and Dynkin stopping games, each checked against
brute-force oracles at small scale.
"""

__version__ = "0.1.0"
