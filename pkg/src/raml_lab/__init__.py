"""Reward-augmented maximum likelihood at enumerable scale.

Exponentiated payoff distributions, stratified edit-distance sampling,
the ML / RAML / entropy-regularized RL objective family, and numerical
checks of the KL and Bregman identities that relate them.
"""

__version__ = "0.1.0"
