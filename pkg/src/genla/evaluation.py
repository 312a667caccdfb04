"""Benchmark evaluation of a trained agent against the OLLA baseline, and
preference (intent) sweeps.

Both policies of a pair run on the same scenario seed and simulator seed,
so geometry, shadowing, fading and traffic coincide (common random numbers).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import linkadapt as la
from .morl.envelope import is_preference, scalar_preference
from .scenario import benchmark_scenario
from .simcore import Action, Simulator

UE_COLUMNS = ("throughput_bps", "spectral_efficiency_bps_hz", "bler_first_tx",
              "mean_latency_ttis")


class EvaluationError(ValueError):
    pass


def run_policy(config, policy="olla", net=None, omega=None, rank_control=True, seed=None,
               trace=None):
    """Run one scenario to completion; returns ``(KpiReport, Simulator)``.

    ``policy`` is ``"olla"`` or ``"rl"`` (greedy ``net`` at preference ``omega``).
    """
    if policy not in ("olla", "rl"):
        raise EvaluationError(f"unknown policy '{policy}'")
    if policy == "rl":
        if net is None:
            raise EvaluationError("rl policy needs a network")
        omega = np.asarray(omega, dtype=float)
        if not is_preference(omega):
            raise EvaluationError(f"omega {omega} is not on the simplex")
    sim = Simulator(config, seed=seed, trace=trace)
    states = la.StateBuilder(sim) if policy == "rl" else None
    while not sim.done:
        need = np.array([g.ue_id for g in sim.grants() if g.needs_action], dtype=int)
        actions = {}
        if need.size:
            if policy == "olla":
                acts = la.olla_actions(sim, need)
            else:
                masks = la.mask_matrix(sim.max_rank[need], rank_control, sim.reported_rank[need])
                q = net(states(need), np.broadcast_to(omega, (need.size, omega.size)))
                acts = [Action.from_index(i) for i in la.greedy_index(q, omega, masks)]
            actions = dict(zip(need.tolist(), acts))
        for f in sim.step(actions):
            if f.resolved:
                r = la.compute_reward(f, int(sim.cell_nprb[sim.serving[f.ue_id]]))
                sim.note_reward(f.ue_id, (r.bits, r.resource))
    return sim.kpis(), sim


def _ue_rows(report, prefix):
    return {u.ue_id: {f"{prefix}{c}": getattr(u, c) for c in UE_COLUMNS} for u in report.ues}


def mean_ci(x, level=0.95):
    """Mean and half-width of a t confidence interval."""
    x = np.asarray(x, dtype=float)
    m = float(np.mean(x)) if x.size else float("nan")
    if x.size < 2:
        return m, float("nan")
    half = stats.t.ppf(0.5 + level / 2, x.size - 1) * np.std(x, ddof=1) / np.sqrt(x.size)
    return m, float(half)


def paired_test(a, b):
    """Paired comparison of per-seed values ``a`` (agent) against ``b`` (baseline).

    Returns mean delta, its 95% CI half-width, the relative delta, and the
    one-sided p-values of the paired t-test for ``a < b`` and ``a > b``.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    d = a - b
    mean, half = mean_ci(d)
    if d.size < 2 or np.all(d == d[0]):
        # no spread: the sign of the (constant) delta decides
        p_less = 0.0 if mean < 0 else 1.0
        p_greater = 0.0 if mean > 0 else 1.0
    else:
        p_less = float(stats.ttest_rel(a, b, alternative="less").pvalue)
        p_greater = float(stats.ttest_rel(a, b, alternative="greater").pvalue)
    base = float(np.mean(b))
    return {"delta_mean": mean, "delta_ci95": half,
            "delta_rel": mean / base if base else float("nan"),
            "p_less": p_less, "p_greater": p_greater}


@dataclass
class EvalResult:
    benchmark: str
    omega: tuple
    seeds: list
    rows: list = field(default_factory=list)        # per seed per UE
    per_seed: list = field(default_factory=list)    # per seed aggregate
    summary: dict = field(default_factory=dict)


def _seed_aggregate(report):
    ues = report.ues
    cells = report.cells
    n_first = sum(c.first_tx_count for c in cells)
    bler = (sum(c.bler_first_tx * c.first_tx_count for c in cells) / n_first
            if n_first else float("nan"))
    lat = [u.mean_latency_ttis for u in ues if np.isfinite(u.mean_latency_ttis)]
    se = [u.spectral_efficiency_bps_hz for u in ues if u.first_tx_count > 0]
    return {
        "throughput_bps": report.mean_ue_throughput(),
        "spectral_efficiency_bps_hz": float(np.mean(se)) if se else float("nan"),
        "bler_first_tx": bler,
        "mean_latency_ttis": float(np.mean(lat)) if lat else float("nan"),
    }


def _label(trace, **run):
    if trace is not None:
        trace.write(json.dumps({"run": run}) + "\n")
    return trace


def evaluate(net, benchmark, seeds, omega, rank_control=True, duration_ttis=None,
             baseline=True, agent="rl", trace=None):
    """Run ``benchmark`` for every seed with the agent and (optionally) OLLA.

    ``agent="olla"`` evaluates the baseline against itself. With ``trace``
    every run is announced by a ``{"run": ...}`` line followed by its
    per-transmission records.
    """
    seeds = list(seeds)
    if not seeds:
        raise EvaluationError("need at least one seed")
    omega = tuple(float(w) for w in omega)
    res = EvalResult(benchmark, omega, seeds)
    for seed in seeds:
        cfg = benchmark_scenario(benchmark, seed) if duration_ttis is None \
            else benchmark_scenario(benchmark, seed, duration_ttis)
        rep, _ = run_policy(cfg, agent, net, omega, rank_control, trace=_label(
            trace, benchmark=benchmark, seed=seed, policy=agent,
            omega=list(omega) if agent == "rl" else None))
        agg = {"seed": seed, **{f"agent_{k}": v for k, v in _seed_aggregate(rep).items()}}
        ue = _ue_rows(rep, "agent_")
        if baseline:
            base, _ = run_policy(cfg, "olla", trace=_label(
                trace, benchmark=benchmark, seed=seed, policy="olla"))
            agg.update({f"olla_{k}": v for k, v in _seed_aggregate(base).items()})
            for k, v in _ue_rows(base, "olla_").items():
                ue[k].update(v)
        for u in rep.ues:
            res.rows.append({"seed": seed, "ue_id": u.ue_id, "cell_id": u.cell_id,
                             "traffic": u.traffic, **ue[u.ue_id]})
        res.per_seed.append(agg)
    res.summary = summarize(res.per_seed, baseline)
    return res


def summarize(per_seed, baseline=True):
    out = {"n_seeds": len(per_seed)}
    for k in UE_COLUMNS:
        a = [r[f"agent_{k}"] for r in per_seed]
        m, h = mean_ci(a)
        out[f"agent_{k}_mean"], out[f"agent_{k}_ci95"] = m, h
        if baseline:
            b = [r[f"olla_{k}"] for r in per_seed]
            m, h = mean_ci(b)
            out[f"olla_{k}_mean"], out[f"olla_{k}_ci95"] = m, h
            ok = [i for i in range(len(a)) if np.isfinite(a[i]) and np.isfinite(b[i])]
            if ok:
                for name, v in paired_test([a[i] for i in ok], [b[i] for i in ok]).items():
                    out[f"{k}_{name}"] = v
    return out


def pareto_grid(values):
    """Sorted, de-duplicated scalar preference grid within [0, 1]."""
    grid = sorted({round(float(v), 12) for v in values})
    if not grid:
        raise EvaluationError("empty preference grid")
    bad = [v for v in grid if not 0.0 <= v <= 1.0]
    if bad:
        raise EvaluationError(f"preference values outside [0, 1]: {bad}")
    return grid


def pareto(net, benchmark, grid, seeds, rank_control=True, duration_ttis=None, trace=None):
    """One evaluation per scalar preference ``w`` mapped to ``(w, 1 - w)``."""
    rows = []
    for w in pareto_grid(grid):
        res = evaluate(net, benchmark, seeds, scalar_preference(w), rank_control,
                       duration_ttis, baseline=False, trace=trace)
        s = res.summary
        rows.append({"omega": w, **{k: s[f"agent_{k}_mean"] for k in UE_COLUMNS}})
    return rows


def spearman(x, y):
    """Spearman rank correlation; NaN when either input is constant."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    return float(stats.spearmanr(x, y).statistic)
