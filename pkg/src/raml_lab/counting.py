"""Edit-ball combinatorics in log space.

``c(e, m)`` is the approximate number of sequences reachable from a length-m
reference by ``e`` unit edits over a vocabulary of size ``v``, where a
deletion is a substitution by the nil token:

    c(e, m) = sum_s C(m, s) * C(m + e - 2s, e - s) * v**e

``s`` counts substitutions; the ``e - s`` insertions are spread over the
``m - s + 1`` gaps left around the unsubstituted reference tokens.
Repeated-token collisions are ignored, so this over-counts distinct outputs.
Values reach ~61**40, hence everything is kept as natural logs; the
big-integer :func:`exact_count_oracle` anchors the tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_LOG_FACT = [0.0]

ORACLE_MAX_M = 30


def _log_factorial(n: int) -> float:
    while len(_LOG_FACT) <= n:
        _LOG_FACT.append(math.lgamma(len(_LOG_FACT) + 1))
    return _LOG_FACT[n]


def log_binomial(n: int, k: int) -> float:
    """``log C(n, k)``; ``-inf`` when ``k < 0`` or ``k > n``."""
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    if k < 0 or k > n:
        return -math.inf
    if k == 0 or k == n:
        return 0.0
    return _log_factorial(n) - _log_factorial(k) - _log_factorial(n - k)


def logsumexp(values) -> float:
    """Log-sum-exp with exact (``math.fsum``) accumulation of the shifted terms."""
    finite = [x for x in values if x != -math.inf]
    if not finite:
        return -math.inf
    top = max(finite)
    return top + math.log(math.fsum(math.exp(x - top) for x in finite))


def _check_edit_args(e: int, m: int, v: int) -> None:
    if m < 1:
        raise ValueError(f"reference length m must be >= 1, got {m}")
    if v < 2:
        raise ValueError(f"vocab size v must be >= 2, got {v}")
    if not 0 <= e <= 2 * m:
        raise ValueError(f"edit count e={e} outside [0, {2 * m}]")


def substitution_log_terms(e: int, m: int) -> np.ndarray:
    """``log[C(m, s) * C(m + e - 2s, e - s)]`` for ``s = 0..m`` (``-inf`` if void).

    These are the relative weights of the substitution count ``s`` among all
    edit scripts of size ``e``; ``v**e`` is common to every term.
    """
    out = np.full(m + 1, -math.inf)
    for s in range(m + 1):
        ins = e - s
        if ins < 0:
            break
        out[s] = log_binomial(m, s) + log_binomial(m + e - 2 * s, ins)
    return out


def edit_ball_count(e: int, m: int, v: int) -> float:
    """Natural log of ``c(e, m)`` for vocabulary size ``v``."""
    _check_edit_args(e, m, v)
    return logsumexp(substitution_log_terms(e, m).tolist()) + e * math.log(v)


def hamming_ball_count(e: int, m: int, v: int) -> float:
    """``log[C(m, e) * (v - 1)**e]``: sequences at Hamming distance exactly ``e``."""
    if v < 2:
        raise ValueError(f"vocab size v must be >= 2, got {v}")
    if not 0 <= e <= m:
        raise ValueError(f"hamming distance e={e} outside [0, {m}]")
    return log_binomial(m, e) + e * math.log(v - 1)


def exact_count_oracle(e: int, m: int, v: int) -> int:
    """Exact integer value of ``c(e, m)`` by arbitrary-precision arithmetic."""
    if m > ORACLE_MAX_M:
        raise ValueError(f"oracle limited to m <= {ORACLE_MAX_M}, got {m}")
    _check_edit_args(e, m, v)
    total = 0
    for s in range(min(e, m) + 1):
        total += math.comb(m, s) * math.comb(m + e - 2 * s, e - s)
    return total * v**e


@dataclass(frozen=True)
class EditCountTable:
    """``log c(e, m)`` for every ``e`` in ``0..2m``."""

    m: int
    v: int
    log_counts: np.ndarray

    @classmethod
    def build(cls, m: int, v: int) -> "EditCountTable":
        counts = np.array([edit_ball_count(e, m, v) for e in range(2 * m + 1)])
        counts.setflags(write=False)
        return cls(m, v, counts)
