"""Table builders behind the CLI commands: edit histograms, payoff tables, training sweeps."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Tuple

import numpy as np

from ..objectives import DivergenceError, Model, make_task, train
from ..payoff import PayoffSpec, edit_distance_weights, enumerate_payoff, enumerate_sequences, log_partition, make_rng
from ..rewards import RewardFn, Vocab
from .config import EditHistConfig, PayoffConfig, TrainConfig

SCHEMA_VERSION = 1


def edit_hist_rows(cfg: EditHistConfig) -> List[Tuple[float, int, float]]:
    """``(tau, e, probability)`` for ``e = 0..e_max`` at every temperature."""
    rows = []
    for tau in cfg.tau:
        weights = edit_distance_weights(cfg.m, cfg.v, tau, cfg.mode)
        rows.extend((tau, e, float(weights.probs[e])) for e in range(cfg.e_max + 1))
    return rows


def payoff_table(cfg: PayoffConfig):
    """Exact payoff distribution sorted by descending probability.

    Returns ``(rows, log_z, vocab)`` where rows are ``(text, probability)``;
    ``log_z`` is ``None`` in the ``tau == 0`` delta mode.
    """
    vocab = Vocab.from_symbols(cfg.vocab)
    space = enumerate_sequences(vocab, cfg.len, fixed_length=not cfg.up_to)
    spec = PayoffSpec(vocab.encode(cfg.target), cfg.tau, RewardFn(cfg.reward), vocab)
    q = enumerate_payoff(spec, space)
    log_z = log_partition(spec, space) if cfg.tau > 0 else None
    order = sorted(range(len(space)), key=lambda i: (-q.probs[i], len(space[i]), space[i]))
    rows = [(vocab.decode(space[i]), float(q.probs[i])) for i in order]
    return rows, log_z, vocab


def _cell_seed_rng(seed: int):
    # one stream per seed, shared across methods and temperatures so that
    # RAML at tau=0 and ML consume identical randomness
    return make_rng(seed, 0)


def run_cell(cfg: TrainConfig, method: str, tau: float, seed: int) -> Dict:
    """Train one ``(method, tau, seed)`` cell; returns its records and status."""
    data, space = make_task(cfg.task, cfg.v, cfg.length)
    rng = _cell_seed_rng(seed)
    model = Model.for_data(cfg.model, data, space, init_scale=cfg.init_scale, rng=rng)
    reward = RewardFn(cfg.reward)
    cell = {"method": method, "tau": tau, "seed": seed}
    try:
        records = train(model, data, space, method, tau, cfg.steps, cfg.lr, batch=cfg.batch,
                        grad_mode=cfg.grad, rng=rng, reward=reward,
                        baseline=cfg.baseline_value, literal_rl=cfg.literal_rl)
        status = "ok"
        message = ""
    except DivergenceError as exc:
        records = exc.records
        status = "diverged"
        message = str(exc)
    lines = [
        {"schema": SCHEMA_VERSION, "type": "step", **cell, **r.to_dict(timing=cfg.timing)}
        for r in records
    ]
    if status != "ok":
        lines.append({"schema": SCHEMA_VERSION, "type": "diagnostic", **cell,
                      "status": status, "message": message})
    final = records[-1] if records else None
    return {"key": (method, tau, seed), "lines": lines, "status": status, "final": final}


def run_sweep(cfg: TrainConfig) -> Tuple[List[Dict], List[Dict]]:
    """Every ``(method, tau, seed)`` cell, merged in sorted cell-key order.

    Returns ``(jsonl_records, summary_rows)``.
    """
    cells = sorted((m, t, s) for m in cfg.method for t in cfg.tau for s in cfg.seeds)
    if cfg.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(run_cell, [cfg] * len(cells), *zip(*cells)))
    else:
        results = [run_cell(cfg, *c) for c in cells]
    results.sort(key=lambda r: r["key"])

    header = {
        "schema": SCHEMA_VERSION,
        "type": "header",
        "task": cfg.task,
        "model": cfg.model,
        "v": cfg.v,
        "length": cfg.length,
        "reward": cfg.reward,
        "methods": list(cfg.method),
        "taus": list(cfg.tau),
        "master_seeds": list(cfg.seeds),
        "steps": cfg.steps,
        "lr": cfg.lr,
        "batch": cfg.batch,
        "grad": cfg.grad,
        "init_scale": cfg.init_scale,
        "baseline": cfg.baseline,
        "literal_rl": cfg.literal_rl,
    }
    lines = [header]
    for r in results:
        lines.extend(r["lines"])
    summary = summarize(results)
    lines.extend({"schema": SCHEMA_VERSION, "type": "summary", **row} for row in summary)
    return lines, summary


def summarize(results: List[Dict]) -> List[Dict]:
    """Mean final expected reward per ``(method, tau)`` with the spread across seeds."""
    groups: Dict[Tuple[str, float], List[Dict]] = {}
    for r in results:
        groups.setdefault(r["key"][:2], []).append(r)
    rows = []
    for (method, tau), rs in sorted(groups.items()):
        finals = [r["final"] for r in rs if r["status"] == "ok"]
        row = {"method": method, "tau": tau, "n_seeds": len(rs), "n_diverged": len(rs) - len(finals)}
        if finals:
            rewards = np.array([f.expected_reward for f in finals])
            kls = np.array([f.kl_q_p for f in finals])
            mean = float(rewards.mean())
            row.update(
                mean_final_expected_reward=mean,
                minus=float(rewards.min() - mean),
                plus=float(rewards.max() - mean),
                mean_final_kl_q_p=float(kls.mean()),
            )
        rows.append(row)
    return rows
