"""ML, RAML and entropy-regularized RL objectives on toy conditional models.

All expectations over outputs are computed by enumerating a small output
space, which gives exact losses and gradients to test the stochastic
estimators against. Losses are summed over training pairs.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Hashable, List, Optional, Sequence as _Seq, Tuple

import numpy as np
from scipy.special import logsumexp, rel_entr, xlogy

from .payoff import (
    Categorical,
    PayoffSpec,
    enumerate_payoff,
    enumerate_sequences,
    hamming_distance_weights,
    log_partition,
    sample_hamming,
)
from .rewards import RewardFn, Sequence, Vocab

MODEL_KINDS = ("tabular", "position_factorized")
OBJECTIVES = ("ml", "raml", "rl")
TASKS = ("copy", "reverse")


@dataclass(frozen=True)
class TrainingSet:
    pairs: Tuple[Tuple[Hashable, Sequence], ...]
    vocab: Vocab

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("training set must be non-empty")
        pairs = tuple((x, self.vocab.validate(y)) for x, y in self.pairs)
        object.__setattr__(self, "pairs", pairs)

    def __len__(self):
        return len(self.pairs)

    @property
    def contexts(self) -> List[Hashable]:
        return list(dict.fromkeys(x for x, _ in self.pairs))


def make_task(task: str, v: int = 2, length: int = 3) -> Tuple[TrainingSet, List[Sequence]]:
    """Copy or reverse task over every length-``length`` string on ``v`` tokens.

    Returns the training set and the fixed-length output space.
    """
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")
    if not 2 <= v <= 5 or not 1 <= length <= 4:
        raise ValueError("toy tasks need 2 <= v <= 5 and 1 <= length <= 4")
    vocab = Vocab(v)
    space = enumerate_sequences(vocab, length, fixed_length=True)
    if task == "copy":
        pairs = tuple((x, x) for x in space)
    else:
        pairs = tuple((x, x[::-1]) for x in space)
    return TrainingSet(pairs, vocab), space


class Model:
    """Conditional distribution ``p_theta(y | x)`` over an enumerated space.

    ``tabular`` keeps one logit per ``(x, y)``; ``position_factorized`` keeps
    one logit per ``(x, position, token)`` and multiplies per-position
    softmaxes, so it needs a fixed-length space in lexicographic order.
    """

    def __init__(self, kind: str, contexts: _Seq[Hashable], space: _Seq[Sequence],
                 vocab: Vocab, params: Optional[np.ndarray] = None):
        if kind not in MODEL_KINDS:
            raise ValueError(f"kind must be one of {MODEL_KINDS}, got {kind!r}")
        self.kind = kind
        self.vocab = vocab
        self.space = [tuple(y) for y in space]
        self.contexts = list(contexts)
        self._ctx = {x: i for i, x in enumerate(self.contexts)}
        self._idx = {y: i for i, y in enumerate(self.space)}
        if kind == "tabular":
            self.context_shape: Tuple[int, ...] = (len(self.space),)
        else:
            lengths = {len(y) for y in self.space}
            if len(lengths) != 1:
                raise ValueError("position_factorized needs a fixed-length space")
            self.length = lengths.pop()
            expected = enumerate_sequences(vocab, self.length, fixed_length=True)
            if self.space != expected:
                raise ValueError("position_factorized needs the full lexicographic space")
            self.context_shape = (self.length, vocab.size)
            self._onehot = np.zeros((len(self.space), self.length, vocab.size))
            for i, y in enumerate(self.space):
                self._onehot[i, np.arange(self.length), y] = 1.0
        shape = (len(self.contexts),) + self.context_shape
        if params is None:
            params = np.zeros(shape)
        params = np.array(params, dtype=float)
        if params.shape != shape:
            raise ValueError(f"params must have shape {shape}, got {params.shape}")
        self.params = params
        self._memo: Dict[tuple, np.ndarray] = {}

    @classmethod
    def for_data(cls, kind: str, data: TrainingSet, space, init_scale: float = 0.0,
                 rng: Optional[np.random.Generator] = None) -> "Model":
        model = cls(kind, data.contexts, space, data.vocab)
        if init_scale:
            if rng is None:
                raise ValueError("random init needs an rng")
            model.params = init_scale * rng.standard_normal(model.params.shape)
        return model

    def copy(self) -> "Model":
        clone = Model(self.kind, self.contexts, self.space, self.vocab, self.params.copy())
        clone._memo = self._memo
        return clone

    def context_index(self, x) -> int:
        return self._ctx[x]

    def index_of(self, y) -> int:
        try:
            return self._idx[tuple(y)]
        except KeyError:
            raise ValueError(f"sequence {tuple(y)} is outside the model's output space") from None

    def log_probs(self, x) -> np.ndarray:
        theta = self.params[self._ctx[x]]
        if self.kind == "tabular":
            return theta - logsumexp(theta)
        per_pos = theta - logsumexp(theta, axis=1, keepdims=True)
        return np.einsum("ntk,tk->n", self._onehot, per_pos)

    def probs(self, x) -> np.ndarray:
        return np.exp(self.log_probs(x))

    def distribution(self, x) -> Categorical:
        p = self.probs(x)
        return Categorical(tuple(self.space), p / math.fsum(p))

    def score_matrix(self, x) -> np.ndarray:
        """Row ``i`` is ``∇ log p(space[i] | x)`` w.r.t. this context's parameters."""
        theta = self.params[self._ctx[x]]
        if self.kind == "tabular":
            p = np.exp(theta - logsumexp(theta))
            return np.eye(len(self.space)) - p[None, :]
        per_pos = np.exp(theta - logsumexp(theta, axis=1, keepdims=True))
        return self._onehot - per_pos[None]

    def sample_indices(self, x, rng: np.random.Generator, n: int) -> np.ndarray:
        """Exact ancestral samples, as indices into ``space``."""
        theta = self.params[self._ctx[x]]
        if self.kind == "tabular":
            p = np.exp(theta - logsumexp(theta))
            return _inverse_cdf(p, rng.random(n))
        per_pos = np.exp(theta - logsumexp(theta, axis=1, keepdims=True))
        idx = np.zeros(n, dtype=np.int64)
        for t in range(self.length):
            idx = idx * self.vocab.size + _inverse_cdf(per_pos[t], rng.random(n))
        return idx

    def embed(self, x, context_grad: np.ndarray) -> np.ndarray:
        full = np.zeros_like(self.params)
        full[self._ctx[x]] = context_grad
        return full


def _inverse_cdf(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, u, side="right")


# -- payoff targets ----------------------------------------------------------

def _payoff(ystar, model: "Model", reward: RewardFn, tau: float, vocab: Vocab) -> np.ndarray:
    key = ("q", tuple(ystar), reward, tau, vocab)
    if key not in model._memo:
        model._memo[key] = enumerate_payoff(PayoffSpec(ystar, tau, reward, vocab), model.space).probs
    return model._memo[key]


def _rewards(ystar, model: "Model", reward: RewardFn) -> np.ndarray:
    key = ("r", tuple(ystar), reward)
    if key not in model._memo:
        model._memo[key] = np.array([reward(y, ystar) for y in model.space])
    return model._memo[key]


# -- losses ------------------------------------------------------------------

def predict(model: Model, x, space=None) -> Sequence:
    """Most probable output; ties go to the lexicographically smallest sequence."""
    lp = model.log_probs(x)
    best = lp.max()
    return min(y for y, l in zip(model.space, lp) if l == best)


def loss_ml(model: Model, data: TrainingSet, space=None) -> float:
    """Negative log-likelihood of the targets."""
    total = 0.0
    for x, ystar in data.pairs:
        lp = model.log_probs(x)[model.index_of(ystar)]
        if not np.isfinite(lp):
            raise ValueError(f"target {ystar} has zero probability")
        total -= lp
    return float(total)


def loss_rl(model: Model, data: TrainingSet, space, reward: RewardFn, tau: float) -> float:
    """``sum_pairs [-tau H(p) - E_p r]``: negated entropy-regularized expected reward."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    total = 0.0
    for x, ystar in data.pairs:
        p = model.probs(x)
        total += tau * float(np.sum(xlogy(p, p))) - float(p @ _rewards(ystar, model, reward))
    return total


def loss_raml(model: Model, data: TrainingSet, space, reward: RewardFn, tau: float) -> float:
    """Cross-entropy of the model against the payoff distribution, summed over pairs."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if tau == 0:
        return loss_ml(model, data, space)
    total = 0.0
    for x, ystar in data.pairs:
        q = _payoff(ystar, model, reward, tau, data.vocab)
        lp = model.log_probs(x)
        if np.any(~np.isfinite(lp[q > 0])):
            raise ValueError("payoff support point has zero model probability")
        total -= float(q @ lp)
    return total


def expected_reward(model: Model, data: TrainingSet, reward: RewardFn) -> float:
    """Mean over pairs of ``E_p[r(y, y*)]``."""
    vals = [float(model.probs(x) @ _rewards(ystar, model, reward)) for x, ystar in data.pairs]
    return float(np.mean(vals))


# -- exact gradients ---------------------------------------------------------

def exact_gradient(objective: str, model: Model, data: TrainingSet, space=None,
                   reward: Optional[RewardFn] = None, tau: float = 0.0) -> np.ndarray:
    """Gradient of the summed loss w.r.t. ``model.params`` by enumeration."""
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}, got {objective!r}")
    if objective == "raml" and tau == 0:
        objective = "ml"
    grad = np.zeros_like(model.params)
    for x, ystar in data.pairs:
        grad[model.context_index(x)] += _pair_gradient(objective, model, x, ystar, reward, tau, data.vocab)
    return grad


def _pair_gradient(objective, model, x, ystar, reward, tau, vocab) -> np.ndarray:
    J = model.score_matrix(x)
    if objective == "ml":
        return -J[model.index_of(ystar)]
    if objective == "raml":
        q = _payoff(ystar, model, reward, tau, vocab)
        return -np.tensordot(q, J, axes=1)
    lp = model.log_probs(x)
    p = np.exp(lp)
    weight = p * (tau * lp - _rewards(ystar, model, reward))
    return np.tensordot(weight, J, axes=1)


# -- stochastic gradients ----------------------------------------------------

@dataclass
class GradEstimate:
    """Monte Carlo gradient: sample mean, sample count and spread.

    ``coord_variance`` is the per-coordinate sample variance of the
    single-sample gradients; ``empirical_variance`` is its mean over the
    coordinates of the pair's context.
    """

    vector: np.ndarray
    n_samples: int
    empirical_variance: float
    coord_variance: np.ndarray

    @property
    def standard_error(self) -> np.ndarray:
        return np.sqrt(self.coord_variance / self.n_samples)


def _aggregate(model: Model, x, counts: np.ndarray, per_outcome: np.ndarray) -> GradEstimate:
    """Mean and variance of sample gradients that depend only on the outcome."""
    n = int(counts.sum())
    freq = counts / n
    mean = np.tensordot(freq, per_outcome, axes=1)
    second = np.tensordot(freq, per_outcome**2, axes=1)
    var = np.maximum(second - mean**2, 0.0)
    if n > 1:
        var = var * n / (n - 1)
    return GradEstimate(model.embed(x, mean), n, float(var.mean()), model.embed(x, var))


def grad_raml_stochastic(model: Model, pair, sampler: Callable[[np.random.Generator], object],
                         n_samples: int, rng: np.random.Generator) -> GradEstimate:
    """Mean of ``-∇ log p(y | x)`` over ``y`` drawn by ``sampler(rng)``.

    ``sampler`` returns a sequence or a ``(sequence, log_weight)`` pair.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x, _ = pair
    counts = np.zeros(len(model.space))
    for _ in range(n_samples):
        y = sampler(rng)
        if isinstance(y, tuple) and len(y) == 2 and isinstance(y[0], tuple):
            y = y[0]
        counts[model.index_of(y)] += 1
    return _aggregate(model, x, counts, -model.score_matrix(x))


def hamming_payoff_sampler(ystar, tau: float, vocab: Vocab) -> Callable[[np.random.Generator], Sequence]:
    """Exact sampler of ``q`` for the negative Hamming reward on fixed-length outputs."""
    if tau == 0:
        ystar = tuple(ystar)
        return lambda rng: ystar
    weights = hamming_distance_weights(len(ystar), vocab.size, tau)
    return lambda rng: sample_hamming(ystar, tau, vocab, rng, weights=weights)[0]


def grad_rl_stochastic(model: Model, pair, reward: RewardFn, tau: float, n_samples: int,
                       rng: np.random.Generator, baseline: float | str = 0.0,
                       literal: bool = False) -> GradEstimate:
    """Likelihood-ratio estimate of ``∇ L_RL`` from samples of the model itself.

    Each sample contributes ``-∇ log p(y|x) * (r(y, y*) - tau log p(y|x) - b)``.
    ``literal=True`` drops the ``-tau log p`` term, which is unbiased only at
    ``tau == 0``. ``baseline`` is a constant or ``"mean"``, a leave-one-out
    batch mean that keeps the estimate unbiased.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x, ystar = pair
    lp = model.log_probs(x)
    signal = _rewards(ystar, model, reward)
    if not literal:
        signal = signal - tau * lp
    idx = model.sample_indices(x, rng, n_samples)
    counts = np.bincount(idx, minlength=len(model.space)).astype(float)
    if baseline == "mean":
        if n_samples < 2:
            raise ValueError("mean baseline needs at least two samples")
        total = float(counts @ signal)
        weight = (signal * n_samples - total) / (n_samples - 1)
    else:
        weight = signal - float(baseline)
    J = model.score_matrix(x)
    per_outcome = -J * weight.reshape((-1,) + (1,) * (J.ndim - 1))
    return _aggregate(model, x, counts, per_outcome)


# -- training ----------------------------------------------------------------

@dataclass
class RunRecord:
    """Telemetry for one SGD step, evaluated after the update.

    ``kl_p_q`` is ``None`` when ``tau == 0`` (the payoff is a point mass and
    the divergence is infinite unless the model is one too).
    """

    step: int
    loss_ml: float
    loss_raml: float
    loss_rl: float
    expected_reward: float
    kl_q_p: float
    kl_p_q: Optional[float]
    grad_variance: float
    wall_time_ms: float = 0.0

    def to_dict(self, timing: bool = False) -> Dict[str, object]:
        d = asdict(self)
        if not timing:
            d.pop("wall_time_ms")
        return d


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; ``records`` holds the run so far."""

    def __init__(self, message: str, records: List[RunRecord]):
        super().__init__(message)
        self.records = records


def kl_terms(model: Model, data: TrainingSet, reward: RewardFn, tau: float) -> Tuple[float, Optional[float]]:
    """``(sum KL(q||p), sum KL(p||q))``, with zero-mass terms dropped."""
    kqp, kpq = 0.0, 0.0
    for x, ystar in data.pairs:
        p = model.probs(x)
        q = _payoff(ystar, model, reward, tau, data.vocab)
        kqp += float(np.sum(rel_entr(q, p)))
        if tau > 0:
            kpq += float(np.sum(rel_entr(p, q)))
    return kqp, (kpq if tau > 0 else None)


def evaluate(model: Model, data: TrainingSet, reward: RewardFn, tau: float, step: int,
             grad_variance: float = 0.0) -> RunRecord:
    kqp, kpq = kl_terms(model, data, reward, tau)
    return RunRecord(
        step=step,
        loss_ml=loss_ml(model, data),
        loss_raml=loss_raml(model, data, None, reward, tau),
        loss_rl=loss_rl(model, data, None, reward, tau),
        expected_reward=expected_reward(model, data, reward),
        kl_q_p=kqp,
        kl_p_q=kpq,
        grad_variance=grad_variance,
    )


def parse_grad_mode(grad_mode) -> Optional[int]:
    """``"exact"`` -> ``None``; ``"stoch:N"`` or an int -> ``N`` samples per pair."""
    if grad_mode in (None, "exact"):
        return None
    if isinstance(grad_mode, int):
        n = grad_mode
    elif isinstance(grad_mode, str) and grad_mode.startswith("stoch:"):
        try:
            n = int(grad_mode[len("stoch:"):])
        except ValueError:
            raise ValueError(f"bad grad mode {grad_mode!r}") from None
    else:
        raise ValueError(f"grad mode must be 'exact' or 'stoch:N', got {grad_mode!r}")
    if n < 1:
        raise ValueError("stochastic grad mode needs N >= 1")
    return n


def train(model: Model, data: TrainingSet, space, method: str, tau: float, steps: int,
          lr: float, batch: int = 0, grad_mode="exact", rng: Optional[np.random.Generator] = None,
          reward: RewardFn = RewardFn("neg_hamming"), baseline: float | str = 0.0,
          literal_rl: bool = False) -> List[RunRecord]:
    """Plain SGD (no momentum) on the summed loss of each mini-batch, in place.

    ``batch=0`` or ``batch >= len(data)`` uses every pair each step without
    touching ``rng``. Stochastic RAML draws from the exact Hamming payoff
    sampler, so it needs ``reward.kind == "neg_hamming"``.

    Raises:
        DivergenceError: on a non-finite loss; the records so far are attached.
    """
    if method not in OBJECTIVES:
        raise ValueError(f"method must be one of {OBJECTIVES}, got {method!r}")
    if lr <= 0 or steps < 1:
        raise ValueError("need lr > 0 and steps >= 1")
    n_samples = parse_grad_mode(grad_mode)
    if (n_samples is not None or (batch and batch < len(data))) and rng is None:
        raise ValueError("sampling needs an rng")
    if method == "raml" and tau == 0:
        method = "ml"
    if method == "raml" and n_samples is not None and reward.kind != "neg_hamming":
        raise ValueError("stochastic RAML training samples with the Hamming sampler")
    samplers = {}
    records: List[RunRecord] = []
    pairs = data.pairs
    for step in range(1, steps + 1):
        t0 = time.perf_counter()
        if batch and batch < len(pairs):
            chosen = [pairs[i] for i in sorted(rng.choice(len(pairs), size=batch, replace=False))]
        else:
            chosen = pairs
        grad = np.zeros_like(model.params)
        variances = []
        for x, ystar in chosen:
            if n_samples is None or method == "ml":
                grad[model.context_index(x)] += _pair_gradient(method, model, x, ystar, reward, tau, data.vocab)
                variances.append(0.0)
                continue
            if method == "raml":
                if ystar not in samplers:
                    samplers[ystar] = hamming_payoff_sampler(ystar, tau, data.vocab)
                est = grad_raml_stochastic(model, (x, ystar), samplers[ystar], n_samples, rng)
            else:
                est = grad_rl_stochastic(model, (x, ystar), reward, tau, n_samples, rng,
                                         baseline=baseline, literal=literal_rl)
            grad += est.vector
            variances.append(est.empirical_variance)
        model.params -= lr * grad
        if not np.all(np.isfinite(model.params)):
            raise DivergenceError(f"non-finite parameters at step {step}", records)
        try:
            rec = evaluate(model, data, reward, tau, step, float(np.mean(variances)))
        except ValueError as exc:
            raise DivergenceError(f"step {step}: {exc}", records) from exc
        rec.wall_time_ms = 1000.0 * (time.perf_counter() - t0)
        values = [rec.loss_ml, rec.loss_raml, rec.loss_rl, rec.kl_q_p]
        if not all(np.isfinite(values)):
            raise DivergenceError(f"non-finite loss at step {step}", records)
        records.append(rec)
    return records
