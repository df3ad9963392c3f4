"""The exponentiated payoff distribution ``q(y | y*; tau) ∝ exp(r(y, y*) / tau)``.

Small output spaces are enumerated exactly. Large ones are sampled by
stratification: draw a distance ``e`` from count-weighted tempered
probabilities, then draw a uniformly random edit script of size ``e``.

Two weightings of the distance marginal are available:

``as_written``
    ``P(e) ∝ c(e, m) * exp(-e / tau)``.
``figure1``
    ``P(e) ∝ c(e, m) * exp(-e * (1 + ln v) / tau)``, the per-edit penalty that
    reproduces the published edit-fraction histogram for ``m=20, v=61``.
"""
from __future__ import annotations

import bisect
import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence as _Seq, Tuple

import numpy as np

from .counting import (
    edit_ball_count,
    hamming_ball_count,
    logsumexp,
    substitution_log_terms,
)
from .rewards import NIL, RewardFn, Sequence, Vocab

ENUMERATION_LIMIT = 10**6
WEIGHT_MODES = ("as_written", "figure1")
_SUM_TOL = 1e-12


def make_rng(master_seed: int, trial_index: int = 0) -> np.random.Generator:
    """Independent, reproducible stream for one ``(master_seed, trial_index)`` cell."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(trial_index)]))


@dataclass(frozen=True)
class Categorical:
    """Finite distribution: ``probs[i]`` is the mass of ``support[i]``."""

    support: Tuple
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or len(probs) != len(self.support):
            raise ValueError("probs must be a vector aligned with support")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(math.fsum(probs) - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities sum to {math.fsum(probs)!r}, not 1")
        if len(set(self.support)) != len(self.support):
            raise ValueError("support entries must be distinct")
        probs.setflags(write=False)
        object.__setattr__(self, "support", tuple(self.support))
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_logits(cls, support, logits) -> "Categorical":
        logits = np.asarray(logits, dtype=float)
        log_z = logsumexp(logits.tolist())
        probs = np.exp(logits - log_z)
        return cls(tuple(support), probs / math.fsum(probs))

    @classmethod
    def one_hot(cls, support, at) -> "Categorical":
        support = tuple(support)
        probs = np.zeros(len(support))
        probs[support.index(at)] = 1.0
        return cls(support, probs)

    def prob(self, outcome) -> float:
        try:
            return float(self.probs[self.support.index(outcome)])
        except ValueError:
            return 0.0

    def mode(self):
        return self.support[int(np.argmax(self.probs))]


@dataclass(frozen=True)
class PayoffSpec:
    target: Sequence
    tau: float
    reward: RewardFn
    vocab: Vocab
    mode: str = "as_written"

    def __post_init__(self):
        object.__setattr__(self, "target", self.vocab.validate(self.target))
        if not self.target:
            raise ValueError("target must be non-empty")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.mode not in WEIGHT_MODES:
            raise ValueError(f"mode must be one of {WEIGHT_MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class SampleBatch:
    """Samples paired with the log proposal mass that generated them."""

    items: List[Tuple[Sequence, float]]
    master_seed: int
    trial_index: int

    @property
    def sequences(self) -> List[Sequence]:
        return [y for y, _ in self.items]

    @property
    def log_proposal(self) -> np.ndarray:
        return np.array([w for _, w in self.items])


def enumerate_sequences(vocab: Vocab, max_len: int, fixed_length: bool = False) -> List[Sequence]:
    """All sequences of length ``0..max_len`` (or exactly ``max_len``), shortest first,
    lexicographic within a length."""
    if max_len < 0:
        raise ValueError("max_len must be non-negative")
    if vocab.size ** (max_len + 1) > ENUMERATION_LIMIT:
        raise ValueError(
            f"space too large to enumerate: v^(len+1) = {vocab.size}^{max_len + 1}"
            f" exceeds {ENUMERATION_LIMIT}"
        )
    lengths = [max_len] if fixed_length else range(max_len + 1)
    out = []
    for n in lengths:
        out.extend(itertools.product(range(vocab.size), repeat=n))
    return out


def _scaled_rewards(spec: PayoffSpec, space: _Seq[Sequence]) -> np.ndarray:
    return np.array([spec.reward(y, spec.target) for y in space]) / spec.tau


def log_partition(spec: PayoffSpec, space: _Seq[Sequence]) -> float:
    """``log Z(y*, tau) = log sum_y exp(r(y, y*) / tau)`` over ``space``."""
    if spec.tau == 0:
        raise ValueError("delta mode has no finite partition log")
    if not space:
        raise ValueError("space must be non-empty")
    return logsumexp(_scaled_rewards(spec, space).tolist())


def enumerate_payoff(spec: PayoffSpec, space: _Seq[Sequence]) -> Categorical:
    """Exact ``q(. | y*; tau)`` on ``space``; one-hot at the target when ``tau == 0``."""
    if len(space) > ENUMERATION_LIMIT:
        raise ValueError("space too large to enumerate")
    if spec.tau == 0:
        return Categorical.one_hot(space, spec.target)
    return Categorical.from_logits(space, _scaled_rewards(spec, space))


def _edit_penalty(v: int, tau: float, mode: str) -> float:
    if mode == "as_written":
        return 1.0 / tau
    if mode == "figure1":
        return (1.0 + math.log(v)) / tau
    raise ValueError(f"mode must be one of {WEIGHT_MODES}, got {mode!r}")


def _distance_weights(log_counts: _Seq[float], v: int, tau: float, mode: str) -> Categorical:
    n = len(log_counts)
    if tau == 0:
        return Categorical.one_hot(range(n), 0)
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    penalty = _edit_penalty(v, tau, mode)
    return Categorical.from_logits(
        range(n), [c - e * penalty for e, c in enumerate(log_counts)]
    )


def edit_distance_weights(m: int, v: int, tau: float, mode: str = "as_written") -> Categorical:
    """Distribution of the number of edits ``e ∈ {0..2m}`` for a length-m target."""
    return _distance_weights([edit_ball_count(e, m, v) for e in range(2 * m + 1)], v, tau, mode)


def hamming_distance_weights(m: int, v: int, tau: float, mode: str = "as_written") -> Categorical:
    """Distribution of the Hamming distance ``e ∈ {0..m}``.

    In ``as_written`` mode this is the exact distance marginal of ``q`` under
    the negative Hamming reward on fixed-length sequences.
    """
    return _distance_weights([hamming_ball_count(e, m, v) for e in range(m + 1)], v, tau, mode)


def _cdf(weights: Categorical) -> List[float]:
    cdf = weights.__dict__.get("_cdf")
    if cdf is None:
        cdf = np.cumsum(weights.probs).tolist()
        cdf[-1] = 1.0
        object.__setattr__(weights, "_cdf", cdf)
    return cdf


def sample_edit_distance(weights: Categorical, rng: np.random.Generator, size: Optional[int] = None):
    """Inverse-CDF draw(s) of a distance; one uniform per draw."""
    cdf = _cdf(weights)
    if size is None:
        return weights.support[bisect.bisect_right(cdf, rng.random())]
    idx = np.searchsorted(np.asarray(cdf), rng.random(size), side="right")
    return np.asarray(weights.support)[idx]


@functools.lru_cache(maxsize=4096)
def _substitution_cdf(e: int, m: int) -> Tuple[float, ...]:
    terms = substitution_log_terms(e, m)
    probs = np.exp(terms - terms.max())
    cdf = np.cumsum(probs / probs.sum())
    cdf[-1] = 1.0
    return tuple(cdf.tolist())


@functools.lru_cache(maxsize=4096)
def _log_edit_count(e: int, m: int, v: int) -> float:
    return edit_ball_count(e, m, v)


def apply_random_edits(ystar: _Seq[int], e: int, vocab: Vocab, rng: np.random.Generator) -> Sequence:
    """Apply a uniformly random edit script with ``e`` edits to ``ystar``.

    Scripts are counted the same way as :func:`~raml_lab.counting.edit_ball_count`:
    ``s`` substitutions, each replacing the token by one of its ``v - 1``
    alternatives or by nil (a deletion), and ``e - s`` insertions of any of
    the ``v`` tokens distributed over the ``m - s + 1`` gaps around the
    surviving reference tokens. Within a gap, inserted tokens precede the
    substituted ones. :func:`edit_script_distribution` enumerates the same law.
    """
    ystar = tuple(ystar)
    m = len(ystar)
    if not 0 <= e <= 2 * m:
        raise ValueError(f"edit count e={e} outside [0, {2 * m}]")
    if e == 0:
        return ystar
    v = vocab.size
    s = bisect.bisect_right(_substitution_cdf(e, m), rng.random())
    n_ins = e - s
    n_slots = m + e - 2 * s
    u = rng.random(m + s + n_slots + n_ins).tolist()
    # s distinct positions: ranks of the s smallest of m uniforms; same for slots
    positions = sorted(range(m), key=u.__getitem__)[:s]
    repl = [int(x * v) for x in u[m:m + s]]
    block = u[m + s:m + s + n_slots]
    slots = sorted(sorted(range(n_slots), key=block.__getitem__)[:n_ins])
    tokens = [int(x * v) for x in u[m + s + n_slots:]]

    subs = {}
    for i, k in zip(positions, repl):
        if k == v - 1:
            subs[i] = NIL
        else:
            subs[i] = k if k < ystar[i] else k + 1
    gaps: List[List[int]] = [[] for _ in range(m - s + 1)]
    for j, (slot, tok) in enumerate(zip(slots, tokens)):
        gaps[slot - j].append(tok)
    return _materialize(ystar, subs, gaps)


def sample_edit(ystar: _Seq[int], tau: float, vocab: Vocab, rng: np.random.Generator,
                mode: str = "as_written", weights: Optional[Categorical] = None) -> Tuple[Sequence, float]:
    """Stratified edit-distance sample and its log proposal mass.

    The mass is that of the sampled edit script, ``log P(e) - log c(e, m)``.
    """
    m = len(ystar)
    if weights is None:
        weights = edit_distance_weights(m, vocab.size, tau, mode)
    e = sample_edit_distance(weights, rng)
    y = apply_random_edits(ystar, e, vocab, rng)
    return y, math.log(weights.probs[e]) - _log_edit_count(e, m, vocab.size)


def sample_hamming(ystar: _Seq[int], tau: float, vocab: Vocab, rng: np.random.Generator,
                   mode: str = "as_written", weights: Optional[Categorical] = None) -> Tuple[Sequence, float]:
    """Stratified Hamming sample: ``e`` distinct positions each get a different token.

    Returns the sample and its exact log proposal mass. With ``tau == 0`` the
    target is returned unchanged.
    """
    ystar = tuple(ystar)
    m, v = len(ystar), vocab.size
    if weights is None:
        weights = hamming_distance_weights(m, v, tau, mode)
    e = sample_edit_distance(weights, rng)
    out = list(ystar)
    if e:
        for i in rng.choice(m, size=e, replace=False).tolist():
            k = int(rng.integers(v - 1))
            out[i] = k if k < ystar[i] else k + 1
    return tuple(out), math.log(weights.probs[e]) - hamming_ball_count(e, m, v)


def draw_batch(sampler: Callable[[np.random.Generator], Tuple[Sequence, float]],
               n: int, master_seed: int, trial_index: int = 0) -> SampleBatch:
    """``n`` draws from ``sampler`` on the stream of ``(master_seed, trial_index)``."""
    rng = make_rng(master_seed, trial_index)
    return SampleBatch([sampler(rng) for _ in range(n)], master_seed, trial_index)


def importance_reweight(batch: SampleBatch,
                        target_log_weight: Callable[[Sequence], float]) -> Categorical:
    """Self-normalized weights ``∝ exp(target(y) - proposal(y))`` over batch indices."""
    if not batch.items:
        raise ValueError("batch must be non-empty")
    log_w = np.array([target_log_weight(y) - lp for y, lp in batch.items], dtype=float)
    if np.all(log_w == -np.inf):
        raise ValueError("degenerate importance weights")
    return Categorical.from_logits(range(len(log_w)), log_w)


def _materialize(ystar: Sequence, subs: dict, gaps: List[List[int]]) -> Sequence:
    out = list(gaps[0])
    gap = 0
    for i, tok in enumerate(ystar):
        if i in subs:
            if subs[i] != NIL:
                out.append(subs[i])
        else:
            out.append(tok)
            gap += 1
            out.extend(gaps[gap])
    return tuple(out)


def edit_script_distribution(ystar: _Seq[int], e: int, vocab: Vocab) -> Categorical:
    """Exact law of :func:`apply_random_edits` by enumerating every edit script.

    Each of the ``exact_count_oracle(e, m, v)`` scripts is equally likely;
    scripts that produce the same sequence are merged. Meant for tiny inputs.
    """
    ystar = tuple(ystar)
    m, v = len(ystar), vocab.size
    if not 0 <= e <= 2 * m:
        raise ValueError(f"edit count e={e} outside [0, {2 * m}]")
    tally: dict = {}
    n_scripts = 0
    for s in range(min(e, m) + 1):
        n_ins = e - s
        n_gaps = m - s + 1
        for positions in itertools.combinations(range(m), s):
            options = [[t for t in range(v) if t != ystar[i]] + [NIL] for i in positions]
            for repl in itertools.product(*options):
                subs = dict(zip(positions, repl))
                for where in itertools.combinations_with_replacement(range(n_gaps), n_ins):
                    for toks in itertools.product(range(v), repeat=n_ins):
                        gaps: List[List[int]] = [[] for _ in range(n_gaps)]
                        for g, t in zip(where, toks):
                            gaps[g].append(t)
                        y = _materialize(ystar, subs, gaps)
                        tally[y] = tally.get(y, 0) + 1
                        n_scripts += 1
    support = sorted(tally, key=lambda y: (len(y), y))
    return Categorical(support, np.array([tally[y] for y in support], dtype=float) / n_scripts)


def stratified_output_distribution(ystar: _Seq[int], tau: float, vocab: Vocab,
                                   mode: str = "as_written") -> Categorical:
    """Output law of :func:`sample_edit`: distance weights composed with script laws."""
    ystar = tuple(ystar)
    weights = edit_distance_weights(len(ystar), vocab.size, tau, mode)
    total: dict = {}
    for e, pe in zip(weights.support, weights.probs):
        if pe == 0:
            continue
        cond = edit_script_distribution(ystar, e, vocab)
        for y, py in zip(cond.support, cond.probs):
            total[y] = total.get(y, 0.0) + pe * py
    support = sorted(total, key=lambda y: (len(y), y))
    probs = np.array([total[y] for y in support])
    return Categorical(support, probs / math.fsum(probs))


def total_variation(p: Categorical, counts: dict, n: int) -> float:
    """TV distance between ``p`` and the empirical law ``counts / n``."""
    keys = set(p.support) | set(counts)
    return 0.5 * sum(abs(p.prob(k) - counts.get(k, 0) / n) for k in keys)
