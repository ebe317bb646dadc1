"""Architecture-recovery benchmark on synthetic spin data.

The experiment: draw couplings for a ground-truth interaction model,
sample counts from its Gibbs distribution at several sample sizes, fit
every downward-closed candidate model to each sample, and let each
selection method pick one.  Recovery quality is scored against the
truth's closure, and held-out samples give a test divergence for the
picked model.

The candidate sweep dominates the cost, so fits run through a batched
Newton iteration grouped by rank.  Samples with boundary moments (a
product count of exactly zero or exactly the sample size) are first
split by their boundary pattern; within a pattern every affected model
shares the same excluded states, so the reduced systems batch just as
well.  Models the batch flags (singular, runaway, or unconverged) are
refitted one at a time through the damped solver and proportional
fitting; a model that still fails is dropped from that sample's
candidate set with a warning.

Every task (realization, sample size, sample index) reseeds its own
generator from the configured seed, so reports are reproducible
bit-for-bit regardless of worker count or resumption.
"""

from __future__ import annotations

import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import gammaincc, xlogy

from .constraints import CoefficientMatrix
from .errors import InputError, SolverError
from .ising import (
    SpinModel,
    boltzmann,
    enumerate_models,
    product_rows,
    random_params,
)
from .selection import METHODS, SelectionConfig, select_arrays
from .simplex import entropy
from .solver import _newton_batch, fit_linear_system

__all__ = [
    "BenchmarkConfig",
    "BenchmarkRow",
    "TruthRow",
    "SummaryRow",
    "BenchmarkReport",
    "run_benchmark",
    "report_csv",
    "truth_csv",
    "summary_csv",
]

log = logging.getLogger(__name__)

_G_ISING = ((1, 2, 3), (1, 2, 4), (3, 5), (4, 5))


@dataclass(frozen=True)
class BenchmarkConfig:
    """Shape of one benchmark sweep.

    Defaults reproduce the desk-scale experiment: fifty coupling
    realizations of the two-triangle five-spin truth, ten datasets per
    realization at each decade from a hundred to ten million samples.
    """

    n_spins: int = 5
    truth: tuple[tuple[int, ...], ...] = _G_ISING
    sample_sizes: tuple[int, ...] = (
        100, 1_000, 10_000, 100_000, 1_000_000, 10_000_000,
    )
    n_realizations: int = 50
    n_samples: int = 10
    test_samples: int = 100
    methods: tuple[str, ...] = METHODS
    seed: int = 0
    alpha_prefactor: float = 1.0
    threads: int = 1

    def __post_init__(self) -> None:
        if self.n_realizations < 1 or self.n_samples < 1:
            raise InputError("need at least one realization and one sample")
        if self.test_samples < 1:
            raise InputError("need at least one test sample")
        if not self.sample_sizes or any(n < 10 for n in self.sample_sizes):
            raise InputError("sample sizes must be at least 10")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise InputError(f"methods must be a subset of {METHODS}")
        if self.alpha_prefactor <= 0.0:
            raise InputError("alpha_prefactor must be positive")
        if self.threads < 1:
            raise InputError("threads must be at least 1")
        object.__setattr__(self, "truth", tuple(tuple(s) for s in self.truth))
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "methods", tuple(self.methods))

    @property
    def n_tasks(self) -> int:
        return len(self.sample_sizes) * self.n_realizations * self.n_samples


@dataclass(frozen=True)
class BenchmarkRow:
    """One method's verdict on one dataset."""

    method: str
    n: int
    realization: int
    sample: int
    selected: str
    selected_rank: int
    exact: bool
    fallback: bool
    tp_rate: float
    fp_rate: float
    train_kl: float
    test_kl: float


@dataclass(frozen=True)
class TruthRow:
    """How the generating model itself fared on one dataset."""

    n: int
    realization: int
    sample: int
    rank: int
    p_value: float
    alpha: float
    passed: bool
    valid: bool


@dataclass(frozen=True)
class SummaryRow:
    """Aggregate over all datasets of one (method, sample size) cell."""

    method: str
    n: int
    tasks: int
    accuracy: float
    fallback_rate: float
    mean_tp: float
    mean_fp: float
    frac_fp_positive: float
    mean_train_kl: float
    mean_test_kl: float


@dataclass(frozen=True)
class BenchmarkReport:
    config: BenchmarkConfig
    rows: tuple[BenchmarkRow, ...]
    truth_rows: tuple[TruthRow, ...]

    def summary(self) -> tuple[SummaryRow, ...]:
        cells: dict[tuple[str, int], list[BenchmarkRow]] = defaultdict(list)
        for row in self.rows:
            cells[(row.method, row.n)].append(row)
        out = []
        for method in self.config.methods:
            for n in self.config.sample_sizes:
                rows = cells.get((method, n), [])
                if not rows:
                    continue
                k = len(rows)
                out.append(
                    SummaryRow(
                        method=method,
                        n=n,
                        tasks=k,
                        accuracy=sum(r.exact for r in rows) / k,
                        fallback_rate=sum(r.fallback for r in rows) / k,
                        mean_tp=sum(r.tp_rate for r in rows) / k,
                        mean_fp=sum(r.fp_rate for r in rows) / k,
                        frac_fp_positive=sum(r.fp_rate > 0 for r in rows) / k,
                        mean_train_kl=sum(r.train_kl for r in rows) / k,
                        mean_test_kl=sum(r.test_kl for r in rows) / k,
                    )
                )
        return tuple(out)

    def truth_pass_rates(self) -> dict[int, float]:
        """Fraction of datasets per sample size where the generating
        model cleared its own acceptance threshold."""
        by_n: dict[int, list[bool]] = defaultdict(list)
        for row in self.truth_rows:
            by_n[row.n].append(row.passed)
        return {n: sum(v) / len(v) for n, v in sorted(by_n.items())}


class _Context:
    """Per-process candidate tables shared by every task."""

    def __init__(self, config: BenchmarkConfig):
        self.config = config
        length = config.n_spins
        self.n_states = 2 ** length
        self.models = enumerate_models(length)
        self.truth_model = SpinModel.from_interactions(config.truth, length)
        self.truth_index = next(
            i for i, m in enumerate(self.models)
            if m.interactions == self.truth_model.interactions
        )

        spin_masks = sorted(range(1, self.n_states), key=lambda m: (m.bit_count(), m))
        self.n_subsets = len(spin_masks)
        subsets = [_mask_to_subset(m) for m in spin_masks]
        self.subset_pos = {s: j for j, s in enumerate(subsets)}
        self.subset_spin_mask = [_subset_spin_mask(s) for s in subsets]
        # Row 0 is normalization; row 1 + j the product row of subset j.
        self.zeta = np.vstack(
            [np.ones((1, self.n_states)), product_rows(subsets, length)]
        )
        self.zeta_int = self.zeta.astype(np.int64)
        self.zeta_bool = self.zeta.astype(bool)

        self.closure_bits = []
        for model in self.models:
            bits = 0
            for s in model.interactions:
                bits |= 1 << self.subset_pos[s]
            self.closure_bits.append(bits)
        self.rank_full = np.array([m.rank for m in self.models])
        self.truth_bits = self.closure_bits[self.truth_index]
        self.truth_size = self.truth_bits.bit_count()

        groups: dict[int, list[int]] = defaultdict(list)
        for i, model in enumerate(self.models):
            groups[model.rank].append(i)
        self.rank_groups = {
            d: (np.array(idx), self._row_matrix(idx))
            for d, idx in groups.items()
        }
        self._implying_cache: dict[int, np.ndarray] = {}

    def _row_matrix(self, model_indices: Sequence[int]) -> np.ndarray:
        out = np.empty((len(model_indices), 0), dtype=int)
        rows = [
            [0] + [1 + j for j in _bit_positions(self.closure_bits[i])]
            for i in model_indices
        ]
        if rows:
            out = np.array(rows, dtype=int)
        return out

    def implying(self, i: int) -> np.ndarray:
        """Indices of models whose closure contains model ``i``'s."""
        cached = self._implying_cache.get(i)
        if cached is None:
            ci = self.closure_bits[i]
            cached = np.array(
                [j for j, cj in enumerate(self.closure_bits) if cj & ci == ci],
                dtype=int,
            )
            if len(self._implying_cache) > 4096:
                self._implying_cache.clear()
            self._implying_cache[i] = cached
        return cached


def _mask_to_subset(mask: int) -> tuple[int, ...]:
    out = []
    i = 1
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def _subset_spin_mask(subset: tuple[int, ...]) -> int:
    m = 0
    for i in subset:
        m |= 1 << (i - 1)
    return m


def _bit_positions(bits: int) -> list[int]:
    out = []
    j = 0
    while bits:
        if bits & 1:
            out.append(j)
        bits >>= 1
        j += 1
    return out


@dataclass
class _FitTable:
    probabilities: np.ndarray
    rank_eff: np.ndarray
    valid: np.ndarray
    n_failed: int


def _fit_all_models(ctx: _Context, counts: np.ndarray, n: int) -> _FitTable:
    """Maximum-entropy fit of every candidate against one count vector."""
    a = ctx.n_states
    n_models = len(ctx.models)
    m_counts = ctx.zeta_int @ counts
    m_frac = m_counts / n
    f = counts / n

    probs = np.full((n_models, a), np.nan)
    rank_eff = ctx.rank_full.copy()
    valid = np.zeros(n_models, dtype=bool)
    robust: list[int] = []

    zero_bits = 0
    sat_bits = 0
    for j in range(ctx.n_subsets):
        c = m_counts[1 + j]
        if c == 0:
            zero_bits |= 1 << j
        elif c == n:
            sat_bits |= 1 << j

    if zero_bits == 0 and sat_bits == 0:
        for d, (midx, rmat) in ctx.rank_groups.items():
            if d == a:
                probs[midx] = f
                valid[midx] = True
                continue
            batch_p, _, done = _newton_batch(ctx.zeta[rmat], m_frac[rmat])
            probs[midx[done]] = batch_p[done]
            valid[midx[done]] = True
            robust.extend(int(i) for i in midx[~done])
    else:
        patterns: dict[tuple[int, int], list[int]] = defaultdict(list)
        for i, bits in enumerate(ctx.closure_bits):
            patterns[(bits & zero_bits, bits & sat_bits)].append(i)
        for (z, t), members in patterns.items():
            _fit_pattern(
                ctx, z, t, members, m_frac, f, probs, rank_eff, valid, robust
            )

    n_failed = 0
    for i in robust:
        rmat = [0] + [1 + j for j in _bit_positions(ctx.closure_bits[i])]
        system = CoefficientMatrix(ctx.zeta[rmat], m_frac[rmat])
        try:
            try:
                fit = fit_linear_system(system)
            except SolverError:
                fit = fit_linear_system(system, method="ipf")
        except SolverError as exc:
            log.warning(
                "candidate %s dropped for this sample: %s",
                ctx.models[i].label, exc,
            )
            n_failed += 1
            continue
        probs[i] = fit.probabilities
        rank_eff[i] = fit.rank_effective
        valid[i] = True
    return _FitTable(probabilities=probs, rank_eff=rank_eff, valid=valid, n_failed=n_failed)


def _fit_pattern(
    ctx: _Context,
    zero_hit: int,
    sat_hit: int,
    members: list[int],
    m_frac: np.ndarray,
    f: np.ndarray,
    probs: np.ndarray,
    rank_eff: np.ndarray,
    valid: np.ndarray,
    robust: list[int],
) -> None:
    """Batch-fit the models sharing one boundary-moment pattern.

    A zero product count excludes every state with that subset fully on;
    a saturated one excludes every state without it.  On the surviving
    states the saturated spins are constant, so each kept interaction
    collapses to its non-saturated part and duplicates merge.  The
    reduced rows stay independent, which keeps the batch solver
    applicable; only a fully pinned working space needs the scalar path.
    """
    a = ctx.n_states
    if zero_hit == 0 and sat_hit == 0:
        by_rank: dict[int, list[int]] = defaultdict(list)
        for i in members:
            by_rank[int(ctx.rank_full[i])].append(i)
        for d, idx in by_rank.items():
            midx = np.array(idx)
            if d == a:
                probs[midx] = f
                valid[midx] = True
                continue
            rmat = ctx._row_matrix(idx)
            batch_p, _, done = _newton_batch(ctx.zeta[rmat], m_frac[rmat])
            probs[midx[done]] = batch_p[done]
            valid[midx[done]] = True
            robust.extend(int(i) for i in midx[~done])
        return

    excluded = np.zeros(a, dtype=bool)
    sat_spins = 0
    for j in _bit_positions(zero_hit):
        excluded |= ctx.zeta_bool[1 + j]
    for j in _bit_positions(sat_hit):
        excluded |= ~ctx.zeta_bool[1 + j]
        sat_spins |= ctx.subset_spin_mask[j]
    working = ~excluded
    n_working = int(working.sum())
    n_excluded = a - n_working

    reduced_rows: dict[int, list[int]] = {}
    by_shape: dict[int, list[int]] = defaultdict(list)
    for i in members:
        kept = ctx.closure_bits[i] & ~zero_hit & ~sat_hit
        eff: set[int] = set()
        for j in _bit_positions(kept):
            e_mask = ctx.subset_spin_mask[j] & ~sat_spins
            if e_mask:
                eff.add(ctx.subset_pos[_mask_to_subset(e_mask)])
        row_idx = [0] + sorted(1 + j for j in eff)
        rank_eff[i] = len(row_idx) + n_excluded
        if len(row_idx) >= n_working:
            robust.append(i)
        else:
            reduced_rows[i] = row_idx
            by_shape[len(row_idx)].append(i)

    for d, idx in by_shape.items():
        midx = np.array(idx)
        rmat = np.array([reduced_rows[i] for i in idx], dtype=int)
        rows = ctx.zeta[rmat][:, :, working]
        batch_p, _, done = _newton_batch(rows, m_frac[rmat])
        done_idx = midx[done]
        if done_idx.size:
            block = np.zeros((done_idx.size, a))
            block[:, working] = batch_p[done]
            probs[done_idx] = block
            valid[done_idx] = True
        robust.extend(int(i) for i in midx[~done])


def _log_probs(p: np.ndarray) -> np.ndarray:
    out = np.full(p.shape, -np.inf)
    np.log(p, out=out, where=p > 0)
    return out


def _scaled_kl(weights: np.ndarray, log_p: np.ndarray, n: int) -> float:
    """``n * KL(weights || p)`` with an honest infinity when ``p``
    excludes observed states."""
    # Masking log_p (not the product) keeps 0 * -inf out of the
    # arithmetic while letting weight > 0 against an excluded state
    # still produce the infinite divergence it deserves.
    cross = (weights * np.where(weights > 0, log_p, 0.0)).sum()
    return float(n * (xlogy(weights, weights).sum() - cross))


def _run_task(ctx: _Context, realization: int, n: int, sample: int) -> dict:
    config = ctx.config
    params_rng = np.random.default_rng(
        np.random.SeedSequence((config.seed, realization))
    )
    params = random_params(ctx.truth_model, params_rng)
    q = boltzmann(params).probs

    rng = np.random.default_rng(
        np.random.SeedSequence((config.seed, realization, n, sample))
    )
    counts = rng.multinomial(n, q)
    test_counts = rng.multinomial(n, q, size=config.test_samples)

    table = _fit_all_models(ctx, counts, n)
    f = counts / n
    h_f = entropy(f)

    with np.errstate(invalid="ignore"):
        h_hat = -xlogy(table.probabilities, table.probabilities).sum(axis=1)
    delta = h_hat - h_f
    bad = table.valid & (delta < -1e-8)
    if bad.any():
        for i in np.flatnonzero(bad):
            log.warning(
                "candidate %s dropped: entropy deficit %.3e",
                ctx.models[i].label, delta[i],
            )
        table.valid[bad] = False
        table.n_failed += int(bad.sum())
    delta = np.maximum(delta, 0.0)

    a = ctx.n_states
    dof = a - table.rank_eff
    p_value = np.ones(len(ctx.models))
    free = dof > 0
    p_value[free] = gammaincc(dof[free] / 2.0, n * delta[free])
    log_n = math.log(n)
    bic_score = 2.0 * n * h_hat + table.rank_eff * log_n
    aic_score = 2.0 * n * h_hat + 2.0 * table.rank_eff

    t_idx = ctx.truth_index
    t_alpha = config.alpha_prefactor * (a - int(table.rank_eff[t_idx])) / n
    truth = {
        "rank": int(table.rank_eff[t_idx]),
        "p_value": float(p_value[t_idx]) if table.valid[t_idx] else 0.0,
        "alpha": t_alpha,
        "passed": bool(table.valid[t_idx] and p_value[t_idx] >= t_alpha),
        "valid": bool(table.valid[t_idx]),
    }

    g_weights = test_counts / n
    per_method = {}
    for method in config.methods:
        sel_cfg = SelectionConfig(method=method, alpha_prefactor=config.alpha_prefactor)
        sel, fallback = select_arrays(
            table.rank_eff, h_hat, p_value, bic_score, aic_score,
            table.valid, a, n, sel_cfg, ctx.implying,
        )
        sel_bits = ctx.closure_bits[sel]
        tp = (sel_bits & ctx.truth_bits).bit_count() / ctx.truth_size
        fp_universe = ctx.n_subsets - ctx.truth_size
        fp = (
            (sel_bits & ~ctx.truth_bits).bit_count() / fp_universe
            if fp_universe else 0.0
        )
        log_p = _log_probs(table.probabilities[sel])
        test_kls = np.array(
            [_scaled_kl(g, log_p, n) for g in g_weights]
        )
        per_method[method] = {
            "selected": ctx.models[sel].label,
            "selected_rank": int(table.rank_eff[sel]),
            "exact": bool(sel == t_idx),
            "fallback": bool(fallback),
            "tp_rate": tp,
            "fp_rate": fp,
            "train_kl": _scaled_kl(q, log_p, n),
            "test_kl": float(test_kls.mean()),
        }

    return {
        "realization": realization,
        "n": n,
        "sample": sample,
        "truth": truth,
        "methods": per_method,
        "failed_models": table.n_failed,
    }


_WORKER_CTX: Optional[_Context] = None


def _init_worker(config: BenchmarkConfig) -> None:
    global _WORKER_CTX
    _WORKER_CTX = _Context(config)


def _worker_entry(task: tuple[int, int, int]) -> tuple[tuple[int, int, int], dict]:
    realization, n, sample = task
    return task, _run_task(_WORKER_CTX, realization, n, sample)


def _assemble(
    config: BenchmarkConfig, results: dict[tuple[int, int, int], dict]
) -> BenchmarkReport:
    rows = []
    truth_rows = []
    for n in config.sample_sizes:
        for realization in range(config.n_realizations):
            for sample in range(config.n_samples):
                res = results[(realization, n, sample)]
                truth = res["truth"]
                truth_rows.append(
                    TruthRow(
                        n=n, realization=realization, sample=sample,
                        rank=truth["rank"], p_value=truth["p_value"],
                        alpha=truth["alpha"], passed=truth["passed"],
                        valid=truth["valid"],
                    )
                )
                for method in config.methods:
                    m = res["methods"][method]
                    rows.append(
                        BenchmarkRow(
                            method=method, n=n, realization=realization,
                            sample=sample, selected=m["selected"],
                            selected_rank=m["selected_rank"],
                            exact=m["exact"], fallback=m["fallback"],
                            tp_rate=m["tp_rate"], fp_rate=m["fp_rate"],
                            train_kl=m["train_kl"], test_kl=m["test_kl"],
                        )
                    )
    return BenchmarkReport(config=config, rows=tuple(rows), truth_rows=tuple(truth_rows))


def _shard_path(resume_dir: str) -> str:
    return os.path.join(resume_dir, "tasks.jsonl")


def _load_shards(resume_dir: str) -> dict[tuple[int, int, int], dict]:
    done: dict[tuple[int, int, int], dict] = {}
    path = _shard_path(resume_dir)
    if not os.path.exists(path):
        return done
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            done[(rec["realization"], rec["n"], rec["sample"])] = rec
    return done


def run_benchmark(
    config: BenchmarkConfig,
    *,
    resume_dir: Optional[str] = None,
    progress: Optional[Callable[[int, int], None]] = None,
) -> BenchmarkReport:
    """Run (or resume) the full sweep and assemble the report.

    With ``resume_dir`` set, every finished task is appended to
    ``tasks.jsonl`` there and already-recorded tasks are skipped on the
    next call.  Task results depend only on the configured seed, so the
    assembled report is identical however the work was split or
    interrupted.
    """
    tasks = [
        (realization, n, sample)
        for n in config.sample_sizes
        for realization in range(config.n_realizations)
        for sample in range(config.n_samples)
    ]
    results: dict[tuple[int, int, int], dict] = {}
    if resume_dir:
        os.makedirs(resume_dir, exist_ok=True)
        results.update(_load_shards(resume_dir))
    pending = [t for t in tasks if t not in results]
    total = len(tasks)
    completed = total - len(pending)
    if progress:
        progress(completed, total)

    shard_fh = open(_shard_path(resume_dir), "a") if resume_dir else None
    try:
        if config.threads > 1 and pending:
            from multiprocessing import Pool

            with Pool(
                processes=config.threads,
                initializer=_init_worker,
                initargs=(config,),
            ) as pool:
                for task, res in pool.imap_unordered(_worker_entry, pending):
                    results[task] = res
                    completed += 1
                    _record(shard_fh, res, progress, completed, total)
        elif pending:
            ctx = _Context(config)
            for task in pending:
                res = _run_task(ctx, *task)
                results[task] = res
                completed += 1
                _record(shard_fh, res, progress, completed, total)
    finally:
        if shard_fh:
            shard_fh.close()
    return _assemble(config, results)


def _record(shard_fh, res: dict, progress, completed: int, total: int) -> None:
    if shard_fh:
        shard_fh.write(json.dumps(res, sort_keys=True) + "\n")
        shard_fh.flush()
    if progress:
        progress(completed, total)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def report_csv(report: BenchmarkReport) -> str:
    return _csv(
        (
            "method", "n", "realization", "sample", "selected",
            "selected_rank", "exact", "fallback", "tp_rate", "fp_rate",
            "train_kl", "test_kl",
        ),
        [
            (
                r.method, r.n, r.realization, r.sample, r.selected,
                r.selected_rank, r.exact, r.fallback, r.tp_rate, r.fp_rate,
                r.train_kl, r.test_kl,
            )
            for r in report.rows
        ],
    )


def truth_csv(report: BenchmarkReport) -> str:
    return _csv(
        ("n", "realization", "sample", "rank", "p_value", "alpha", "passed", "valid"),
        [
            (r.n, r.realization, r.sample, r.rank, r.p_value, r.alpha, r.passed, r.valid)
            for r in report.truth_rows
        ],
    )


def summary_csv(report: BenchmarkReport) -> str:
    return _csv(
        (
            "method", "n", "tasks", "accuracy", "fallback_rate", "mean_tp",
            "mean_fp", "frac_fp_positive", "mean_train_kl", "mean_test_kl",
        ),
        [
            (
                s.method, s.n, s.tasks, s.accuracy, s.fallback_rate,
                s.mean_tp, s.mean_fp, s.frac_fp_positive,
                s.mean_train_kl, s.mean_test_kl,
            )
            for s in report.summary()
        ],
    )
