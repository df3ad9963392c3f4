"""Seeded verification suites over random instances.

Each check reports the worst error over its instances against a fixed
tolerance. Instance ``i`` of suite ``k`` draws from the stream
``(seed, k * 10**7 + i)``, so suites are reproducible independently.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np
from scipy.special import rel_entr

from .. import divergence as dv
from ..objectives import (
    Model,
    TrainingSet,
    exact_gradient,
    grad_raml_stochastic,
    grad_rl_stochastic,
    hamming_payoff_sampler,
    loss_ml,
    loss_raml,
    loss_rl,
    make_task,
)
from ..payoff import (
    PayoffSpec,
    apply_random_edits,
    draw_batch,
    edit_distance_weights,
    enumerate_payoff,
    enumerate_sequences,
    hamming_distance_weights,
    importance_reweight,
    log_partition,
    make_rng,
    sample_edit_distance,
    sample_hamming,
    stratified_output_distribution,
    total_variation,
)
from ..rewards import RewardFn, Vocab, edit_distance

SUITE_OFFSET = {"identities": 0, "props": 1, "sampler": 2, "gradients": 3}


@dataclass
class CheckResult:
    name: str
    instances: int
    max_error: float
    tol: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.name:<28} instances={self.instances:<7d} "
                f"max_error={self.max_error:.3e} tol={self.tol:.1e} {status}")


class _Tracker:
    """Running maximum error of one named check."""

    def __init__(self, name: str, tol: float):
        self.name, self.tol = name, tol
        self.n, self.worst, self.failed = 0, 0.0, False

    def add(self, err: float, ok: bool | None = None):
        self.n += 1
        if not np.isfinite(err):
            self.failed = True
            self.worst = math.inf
            return
        self.worst = max(self.worst, err)
        if ok is False or (ok is None and not err < self.tol):
            self.failed = True

    def result(self) -> CheckResult:
        return CheckResult(self.name, self.n, self.worst, self.tol, not self.failed and self.n > 0)


def _stream(seed: int, suite: str, i: int) -> np.random.Generator:
    return make_rng(seed, SUITE_OFFSET[suite] * 10**7 + i)


def _log_uniform(rng, lo: float, hi: float) -> float:
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


# -- identities ---------------------------------------------------------------

def random_objective_instance(rng: np.random.Generator, max_space: int = 625):
    """Random ``(model, data, reward, tau)`` on a fixed-length space of size <= ``max_space``."""
    reward = RewardFn(str(rng.choice(["neg_hamming", "neg_edit"])))
    shapes = [(v, n) for v in range(2, 6) for n in range(1, 5) if v**n <= max_space]
    v, n = shapes[int(rng.integers(len(shapes)))]
    vocab = Vocab(v)
    space = enumerate_sequences(vocab, n, fixed_length=True)
    n_pairs = int(rng.integers(1, 4))
    pairs = tuple((i, space[int(rng.integers(len(space)))]) for i in range(n_pairs))
    data = TrainingSet(pairs, vocab)
    kind = str(rng.choice(["tabular", "position_factorized"]))
    model = Model(kind, data.contexts, space, vocab)
    model.params = rng.uniform(0.1, 3.0) * rng.standard_normal(model.params.shape)
    tau = _log_uniform(rng, 0.1, 10.0)
    return model, data, reward, tau


def _entropy(q: np.ndarray) -> float:
    return float(-np.sum(q[q > 0] * np.log(q[q > 0])))


def objective_identity_errors(model: Model, data: TrainingSet, reward: RewardFn, tau: float) -> Dict[str, float]:
    """Absolute gaps of the four KL reformulations, every term enumerated."""
    space = model.space
    kl_pq = kl_qp = kl_dp = ent_q = log_z = 0.0
    for x, ystar in data.pairs:
        p = model.probs(x)
        spec = PayoffSpec(ystar, tau, reward, data.vocab)
        q = enumerate_payoff(spec, space).probs
        delta = np.zeros(len(space))
        delta[space.index(ystar)] = 1.0
        kl_pq += float(np.sum(rel_entr(p, q)))
        kl_qp += float(np.sum(rel_entr(q, p)))
        kl_dp += float(np.sum(rel_entr(delta, p)))
        ent_q += _entropy(q)
        log_z += log_partition(spec, space)
    l_ml = loss_ml(model, data, space)
    l_rl = loss_rl(model, data, space, reward, tau)
    l_raml = loss_raml(model, data, space, reward, tau)
    return {
        "rl_as_kl": abs(kl_pq - (l_rl / tau + log_z)),
        "ml_as_kl": abs(kl_dp - l_ml),
        "raml_as_kl": abs(kl_qp - (l_raml - ent_q)),
        "rl_raml_composed": abs(l_rl - (tau * l_raml + tau * (kl_pq - kl_qp) - tau * ent_q - tau * log_z)),
    }


def _random_simplex(rng, n: int) -> np.ndarray:
    return dv.lse_transfer(1.5 * rng.standard_normal(n), 1.0)


def suite_identities(trials: int, seed: int) -> List[CheckResult]:
    tol = {"rl_as_kl": 1e-10, "ml_as_kl": 1e-12, "raml_as_kl": 1e-10, "rl_raml_composed": 1e-10}
    track = {k: _Tracker(k, t) for k, t in tol.items()}
    extra = [
        _Tracker("dual_forward", 1e-10),
        _Tracker("dual_reverse", 1e-10),
        _Tracker("transfer_inverse", 1e-12),
        _Tracker("tempered_kl", 1e-10),
        _Tracker("hessian_variance_form", 1e-12),
        _Tracker("entropy_bregman_is_kl", 1e-12),
    ]
    fwd, rev, inv, temp, hess, ent = extra
    for i in range(trials):
        rng = _stream(seed, "identities", i)
        for name, err in objective_identity_errors(*random_objective_instance(rng)).items():
            track[name].add(err)
        n = int(rng.integers(2, 11))
        tau = _log_uniform(rng, 0.1, 10.0)
        p, q = _random_simplex(rng, n), _random_simplex(rng, n)
        rep = dv.dual_divergence_check(p, q, tau)
        fwd.add(rep.error)
        rev.add(rep.details["reverse_error"])
        inv.add(rep.details["transfer_inverse_error"])
        s, r = tau * 2.0 * rng.standard_normal(n), tau * 2.0 * rng.standard_normal(n)
        temp.add(dv.tempered_kl_check(s, r, tau).error)
        quad, var = dv.quad_form_as_variance(rng.standard_normal(n) * 3.0, r, tau)
        hess.add(abs(quad - var))
        ent.add(abs(dv.bregman(dv.NegEntropy(tau), p, q) - tau * dv.kl(p, q)))
    return [t.result() for t in list(track.values()) + extra]


# -- propositions -------------------------------------------------------------

WORKED_P, WORKED_Q = (0.8, 0.2), (0.2, 0.8)


def worked_beta() -> Tuple[float, float]:
    """Certified and closed-form ``beta`` for the two-outcome entropy example."""
    p, q = np.array(WORKED_P), np.array(WORKED_Q)
    cert = dv.prop1_certificate(dv.NegEntropy(1.0), p, q)
    # ¼·0.36·(1/z + 1/(1-z)) = target  with  z = 0.2 + 0.6·beta
    c = 0.09 / cert.target_b
    z = (1.0 - math.sqrt(1.0 - 4.0 * c)) / 2.0
    return cert.beta, (z - 0.2) / 0.6


def suite_props(trials: int, seed: int) -> List[CheckResult]:
    ent = _Tracker("prop1_entropy_certificate", dv.CERT_TOL)
    lse = _Tracker("prop1_lse_certificate", dv.CERT_TOL)
    worked = _Tracker("prop1_worked_beta", 1e-9)
    p2 = _Tracker("prop2_inequality", 0.0)
    gap = _Tracker("prop2_variance_gap", 1e-9)
    beta, closed = worked_beta()
    worked.add(abs(beta - closed))
    for i in range(trials):
        rng = _stream(seed, "props", i)
        n = int(rng.integers(2, 7))
        tau = _log_uniform(rng, 0.1, 10.0)
        for tracker, F, a, b in (
            (ent, dv.NegEntropy(tau), _random_simplex(rng, n), _random_simplex(rng, n)),
            (lse, dv.LogSumExp(tau), tau * rng.standard_normal(n), tau * rng.standard_normal(n)),
        ):
            try:
                cert = dv.prop1_certificate(F, a, b)
            except dv.CertificateError:
                tracker.add(math.inf)
                continue
            tracker.add(max(cert.residual_a, cert.residual_b, cert.identity_error), cert.ok)
    for i in range(10 * trials):
        rng = _stream(seed, "props", 10**6 + i)
        n = int(rng.integers(2, 11))
        tau = _log_uniform(rng, 0.1, 10.0)
        s = tau * rng.standard_normal(n)
        r = tau * rng.standard_normal(n)
        try:
            rep = dv.prop2_inequality_check(s, r, tau)
        except dv.CertificateError:
            p2.add(math.inf)
            continue
        # error: how far the inequality is from failing (0 when it holds)
        p2.add(max(0.0, rep.kl_pq - rep.kl_qp - rep.bound), rep.holds)
        gap.add(abs(rep.variance_gap - (rep.kl_pq - rep.kl_qp)))
    return [t.result() for t in (ent, lse, worked, p2, gap)]


# -- sampler ------------------------------------------------------------------

def suite_sampler(draws: int, seed: int) -> List[CheckResult]:
    out = []
    # distance marginal at the published scale
    rng = _stream(seed, "sampler", 0)
    weights = edit_distance_weights(20, 61, 0.9, "figure1")
    es = sample_edit_distance(weights, rng, size=draws)
    counts = Counter(es.tolist())
    t = _Tracker("edit_distance_marginal_tv", 0.01)
    t.add(total_variation(weights, counts, draws))
    out.append(t.result())

    # full stratified sampler on an enumerable case
    ystar, vocab, tau = (0, 1), Vocab(2), 1.0
    rng = _stream(seed, "sampler", 1)
    w = edit_distance_weights(len(ystar), vocab.size, tau)
    outputs: Counter = Counter()
    bound = _Tracker("edit_bound_per_sample", 0.5)
    checked: Dict[Tuple, int] = {}
    worst_excess = 0
    for _ in range(draws):
        e = sample_edit_distance(w, rng)
        y = apply_random_edits(ystar, e, vocab, rng)
        outputs[y] += 1
        d = checked.get(y)
        if d is None:
            d = checked[y] = edit_distance(y, ystar)
        worst_excess = max(worst_excess, d - e)
    bound.n = draws
    bound.worst = float(max(worst_excess, 0))
    bound.failed = worst_excess > 0
    t = _Tracker("edit_end_to_end_tv", 0.02)
    t.add(total_variation(stratified_output_distribution(ystar, tau, vocab), outputs, draws))
    out += [t.result(), bound.result()]

    # Hamming sampler is exact for the negative Hamming payoff
    ystar, tau = (0, 1, 0), 1.0
    rng = _stream(seed, "sampler", 2)
    hw = hamming_distance_weights(3, 2, tau)
    n_h = max(draws // 10, 1)
    h_counts = Counter(sample_hamming(ystar, tau, vocab, rng, weights=hw)[0] for _ in range(n_h))
    q = enumerate_payoff(PayoffSpec(ystar, tau, RewardFn("neg_hamming"), vocab),
                         enumerate_sequences(vocab, 3, fixed_length=True))
    t = _Tracker("hamming_end_to_end_tv", 0.02)
    t.add(total_variation(q, h_counts, n_h))
    out.append(t.result())

    out.append(_importance_check(seed, max(draws // 10, 1)))
    return out


def _importance_check(seed: int, n: int) -> CheckResult:
    """Self-normalized E_q[r] from a hotter Hamming proposal, in standard errors."""
    vocab, ystar = Vocab(3), (0, 1, 2)
    reward = RewardFn("neg_hamming")
    tau_target, tau_prop = 0.7, 1.5
    space = enumerate_sequences(vocab, 3, fixed_length=True)
    q = enumerate_payoff(PayoffSpec(ystar, tau_target, reward, vocab), space)
    exact = float(sum(pq * reward(y, ystar) for y, pq in zip(q.support, q.probs)))
    hw = hamming_distance_weights(3, 3, tau_prop)
    batch = draw_batch(lambda g: sample_hamming(ystar, tau_prop, vocab, g, weights=hw), n, seed, 3 * 10**7)
    w = importance_reweight(batch, lambda y: reward(y, ystar) / tau_target).probs
    f = np.array([reward(y, ystar) for y in batch.sequences])
    est = float(w @ f)
    se = math.sqrt(float(np.sum(w**2 * (f - est) ** 2)))
    t = _Tracker("importance_reweight_se", 3.0)
    t.add(abs(est - exact) / se)
    return t.result()


# -- gradients ----------------------------------------------------------------

def finite_difference(f: Callable[[], float], params: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``f`` w.r.t. every entry of ``params`` (mutated and restored)."""
    grad = np.zeros_like(params)
    flat, gflat = params.reshape(-1), grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = f()
        flat[k] = orig - h
        down = f()
        flat[k] = orig
        gflat[k] = (up - down) / (2 * h)
    return grad


def _small_instance(rng):
    model, data, reward, tau = random_objective_instance(rng, max_space=27)
    return model, data, reward, tau


def gradient_fd_errors(model, data, reward, tau) -> Dict[str, float]:
    losses = {
        "ml": lambda: loss_ml(model, data),
        "raml": lambda: loss_raml(model, data, None, reward, tau),
        "rl": lambda: loss_rl(model, data, None, reward, tau),
    }
    errs = {}
    for name, f in losses.items():
        g = exact_gradient(name, model, data, None, reward, tau)
        fd = finite_difference(f, model.params)
        errs[name] = float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-300))
    return errs


def _z_score(est, exact) -> float:
    se = est.standard_error
    diff = np.abs(est.vector - exact)
    flat = se > 0
    if np.any(diff[~flat] > 1e-12):
        return math.inf
    return float(np.max(diff[flat] / se[flat])) if np.any(flat) else 0.0


DEFAULT_VARIANCE_CONFIG = {"task": "copy", "v": 2, "length": 3, "tau": 0.5, "n_samples": 10**5}


def variance_comparison(seed: int, config: Dict = DEFAULT_VARIANCE_CONFIG) -> Tuple[float, float]:
    """Mean per-coordinate gradient variance (RL, RAML) at a uniform tabular model."""
    data, space = make_task(config["task"], config["v"], config["length"])
    model = Model.for_data("tabular", data, space)
    reward, tau, n = RewardFn("neg_hamming"), config["tau"], config["n_samples"]
    rng = make_rng(seed, 4 * 10**7)
    rl, raml = [], []
    for x, ystar in data.pairs:
        rl.append(grad_rl_stochastic(model, (x, ystar), reward, tau, n, rng).empirical_variance)
        sampler = hamming_payoff_sampler(ystar, tau, data.vocab)
        raml.append(grad_raml_stochastic(model, (x, ystar), sampler, n, rng).empirical_variance)
    return float(np.mean(rl)), float(np.mean(raml))


def suite_gradients(trials: int, seed: int, n_samples: int = 10**5) -> List[CheckResult]:
    fd = {k: _Tracker(f"fd_{k}", 1e-6) for k in ("ml", "raml", "rl")}
    for i in range(max(trials // 10, 1)):
        rng = _stream(seed, "gradients", i)
        for name, err in gradient_fd_errors(*_small_instance(rng)).items():
            fd[name].add(err)

    raml_t = _Tracker("stochastic_raml_4se", 4.0)
    rl_t = _Tracker("stochastic_rl_4se", 4.0)
    lit_t = _Tracker("stochastic_rl_literal_tau0_4se", 4.0)
    reward = RewardFn("neg_hamming")
    for j, kind in enumerate(("tabular", "position_factorized")):
        rng = _stream(seed, "gradients", 10**6 + j)
        data, space = make_task("copy", 2, 3)
        model = Model.for_data(kind, data, space, init_scale=0.7, rng=rng)
        pair = data.pairs[int(rng.integers(len(data.pairs)))]
        single = TrainingSet((pair,), data.vocab)
        for tau in (0.5, 1.0):
            exact = exact_gradient("raml", model, single, None, reward, tau)
            est = grad_raml_stochastic(model, pair, hamming_payoff_sampler(pair[1], tau, data.vocab), n_samples, rng)
            raml_t.add(_z_score(est, exact))
        for tau in (0.0, 0.5, 1.0):
            exact = exact_gradient("rl", model, single, None, reward, tau)
            rl_t.add(_z_score(grad_rl_stochastic(model, pair, reward, tau, n_samples, rng), exact))
        exact = exact_gradient("rl", model, single, None, reward, 0.0)
        lit_t.add(_z_score(grad_rl_stochastic(model, pair, reward, 0.0, n_samples, rng, literal=True), exact))

    var_rl, var_raml = variance_comparison(seed)
    var_t = _Tracker("rl_variance_exceeds_raml", 0.0)
    var_t.add(var_raml / var_rl, var_rl > var_raml)
    return [t.result() for t in (*fd.values(), raml_t, rl_t, lit_t, var_t)]


def run_suites(suites, trials: int, seed: int, draws: int) -> List[CheckResult]:
    results: List[CheckResult] = []
    for suite in suites:
        if suite == "identities":
            results += suite_identities(trials, seed)
        elif suite == "props":
            results += suite_props(trials, seed)
        elif suite == "sampler":
            results += suite_sampler(draws, seed)
        elif suite == "gradients":
            results += suite_gradients(trials, seed)
        else:
            raise ValueError(f"unknown suite {suite!r}")
    return results
