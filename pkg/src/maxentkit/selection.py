"""Entropy-based hypothesis testing and model selection.

For an empirical distribution ``f`` of ``n`` samples and a candidate
architecture of rank ``d`` on ``a`` states, the entropy gap
``delta = H[maxent] - H[f]`` concentrates so that ``2 n delta`` follows
a chi-squared law with ``a - d`` degrees of freedom when the candidate
holds.  Everything here is built on that statistic:

* :func:`empirical_p_value` tests one candidate against its class;
* :func:`lrt_p_value` compares two nested candidates with
  ``d_complex - d_simple`` degrees of freedom;
* :func:`bic` and :func:`aic` score candidates as
  ``2 n H[maxent] + penalty``.  Both scores drop additive terms that are
  identical for every candidate at fixed data (a multiple of ``log n``
  and of ``H[f]``), so only score differences are meaningful, and those
  differences are exact;
* :func:`select` applies one of four procedures: ``bic`` and ``aic``
  minimize their scores, ``hyper_maxent`` returns the lowest-rank
  candidate whose p-value clears the sample-size-dependent threshold
  ``(a - d) / n``, and ``hyper_maxent_lrt`` additionally requires the
  candidate to survive a likelihood-ratio test against every candidate
  that implies it at threshold ``(2 a - d - d') / n``.

Degrees of freedom use the effective rank: states excluded from the
working space count as one pinning constraint each, so ``a - d`` is
always the number of free fluctuation directions on the full space.
Zero degrees of freedom (a saturated candidate) is treated as a point
mass at zero, hence p-value one.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import gammainc, gammaincc

from .constraints import ArchitectureMatrix, CoefficientMatrix, nesting_map, to_architecture
from .errors import (
    ConvergenceError,
    InputError,
    NoSolvableCandidateError,
    NotNestedError,
    SolverError,
    SupportViolationError,
)
from .simplex import Distribution, entropy, kl_divergence, multinomial_sample, prob_array
from .solver import FitResult, SolveOptions, fit_linear_system, solve_newton

__all__ = [
    "ModelScore",
    "SelectionConfig",
    "SelectionResult",
    "ErrorEstimate",
    "chi2_cdf",
    "empirical_p_value",
    "lrt_p_value",
    "bic",
    "aic",
    "expected_entropy",
    "alpha_empirical",
    "alpha_lrt",
    "score_candidates",
    "select",
    "select_scored",
    "select_arrays",
    "mc_training_error",
    "mc_test_error",
    "asymptotic_training_error",
    "asymptotic_test_error",
]

log = logging.getLogger(__name__)

METHODS = ("bic", "aic", "hyper_maxent", "hyper_maxent_lrt")

#: Entropy deficits larger than this are treated as solver failures
#: rather than rounding noise.
_DELTA_NEGATIVE_LIMIT = 1e-8


def chi2_cdf(k: int, x: float) -> float:
    """Chi-squared cumulative distribution with ``k >= 1`` degrees of freedom.

    Evaluates the regularized lower incomplete gamma ``P(k/2, x/2)``.
    """
    if k < 1:
        raise InputError("degrees of freedom must be at least 1")
    if x < 0.0:
        raise InputError("chi-squared statistic must be nonnegative")
    return float(gammainc(k / 2.0, x / 2.0))


def _chi2_tail(k: int, x: float) -> float:
    """Upper tail ``1 - F_k(x)``, computed directly for small-p precision.

    The zero-dof convention (point mass at zero) returns one.
    """
    if k == 0:
        return 1.0
    return float(gammaincc(k / 2.0, max(x, 0.0) / 2.0))


def _clip_delta(delta: float) -> float:
    if delta < -_DELTA_NEGATIVE_LIMIT:
        raise ConvergenceError(
            f"entropy deficit {delta:.3e}: fitted distribution is not the "
            "class maximizer"
        )
    return max(delta, 0.0)


def _fit_for_f(
    candidate: Union[ArchitectureMatrix, CoefficientMatrix],
    f: Union[Distribution, np.ndarray],
    options: Optional[SolveOptions],
) -> tuple[np.ndarray, float, int, int]:
    """Fit a candidate on the moments induced by ``f``.

    Returns the full-space probabilities, their entropy, the effective
    rank, and the full state count.  Coefficient systems go through
    support reduction; canonical architectures are solved directly.
    """
    probs = prob_array(f)
    if isinstance(candidate, CoefficientMatrix):
        induced = CoefficientMatrix(candidate.rows, candidate.rows @ probs)
        fit = fit_linear_system(induced, options)
        return fit.probabilities, entropy(fit.probabilities), fit.rank_effective, fit.n_states
    induced_arch = ArchitectureMatrix(candidate.rows, candidate.rows @ probs)
    if induced_arch.rank == induced_arch.n_states:
        # Saturated: the class is the single point f.
        return np.array(probs), entropy(probs), induced_arch.rank, induced_arch.n_states
    solution = solve_newton(induced_arch, options)
    p = solution.distribution.probs
    return p, entropy(p), induced_arch.rank, induced_arch.n_states


def empirical_p_value(
    architecture: Union[ArchitectureMatrix, CoefficientMatrix],
    f: Union[Distribution, np.ndarray],
    n: int,
    options: Optional[SolveOptions] = None,
) -> float:
    """Tail probability of the entropy gap of ``f`` inside its class.

    Fits the candidate on the moments induced by ``f`` and returns
    ``1 - F_{a-d}(2 n (H[maxent] - H[f]))``.  A saturated candidate has
    zero degrees of freedom and p-value one.
    """
    probs = prob_array(f)
    _, h_hat, rank_eff, n_states = _fit_for_f(architecture, probs, options)
    delta = _clip_delta(h_hat - entropy(probs))
    return _chi2_tail(n_states - rank_eff, 2.0 * n * delta)


def lrt_p_value(
    simple: ArchitectureMatrix,
    complex_: ArchitectureMatrix,
    f: Union[Distribution, np.ndarray],
    n: int,
    options: Optional[SolveOptions] = None,
) -> float:
    """Likelihood-ratio tail probability of a nested pair.

    Requires ``simple`` to be implied by ``complex_``; the statistic
    ``2 n (H[maxent_simple] - H[maxent_complex])`` is referred to a
    chi-squared with ``rank(complex_) - rank(simple)`` degrees of
    freedom.  Equal ranks give dof zero, hence p-value one, and a
    saturated ``complex_`` reduces to :func:`empirical_p_value`.
    """
    if nesting_map(simple, complex_) is None:
        raise NotNestedError("simple architecture is not implied by the complex one")
    probs = prob_array(f)
    _, h_simple, rank_simple, _ = _fit_for_f(simple, probs, options)
    _, h_complex, rank_complex, _ = _fit_for_f(complex_, probs, options)
    stat = 2.0 * n * _clip_delta(h_simple - h_complex)
    return _chi2_tail(rank_complex - rank_simple, stat)


def bic(
    architecture: Union[ArchitectureMatrix, CoefficientMatrix],
    f: Union[Distribution, np.ndarray],
    n: int,
    options: Optional[SolveOptions] = None,
) -> float:
    """Bayesian information criterion ``2 n H[maxent] + d log n``.

    Standardized up to candidate-independent additive constants; see the
    module docstring.
    """
    _, h_hat, rank_eff, _ = _fit_for_f(architecture, f, options)
    return 2.0 * n * h_hat + rank_eff * math.log(n)


def aic(
    architecture: Union[ArchitectureMatrix, CoefficientMatrix],
    f: Union[Distribution, np.ndarray],
    n: int,
    options: Optional[SolveOptions] = None,
) -> float:
    """Akaike information criterion ``2 n H[maxent] + 2 d``, standardized
    like :func:`bic`."""
    _, h_hat, rank_eff, _ = _fit_for_f(architecture, f, options)
    return 2.0 * n * h_hat + 2.0 * rank_eff


def expected_entropy(
    architecture: Union[ArchitectureMatrix, CoefficientMatrix],
    f: Union[Distribution, np.ndarray],
    n: int,
    options: Optional[SolveOptions] = None,
) -> float:
    """Mean entropy of an ``n``-sample class member,
    ``H[maxent] - (a - d) / (2 n)``."""
    _, h_hat, rank_eff, n_states = _fit_for_f(architecture, f, options)
    return h_hat - (n_states - rank_eff) / (2.0 * n)


def alpha_empirical(
    n_states: int, rank: int, n: int, prefactor: float = 1.0
) -> float:
    """Sample-size-dependent acceptance threshold ``(a - d) / n``."""
    return prefactor * (n_states - rank) / n


def alpha_lrt(
    n_states: int, rank_simple: int, rank_complex: int, n: int, prefactor: float = 1.0
) -> float:
    """Pairwise-test threshold ``(2 a - d - d') / n``."""
    return prefactor * (2 * n_states - rank_simple - rank_complex) / n


@dataclass(frozen=True)
class ModelScore:
    """Scores of one solvable candidate on one dataset."""

    architecture_id: Union[int, str]
    rank: int
    n_states: int
    maxent_entropy: float
    empirical_delta: float
    p_value: float
    bic: float
    aic: float
    expected_entropy: float

    def __post_init__(self) -> None:
        if self.empirical_delta < -1e-10:
            raise InputError("empirical delta must be nonnegative")
        if not 0.0 <= self.p_value <= 1.0:
            raise InputError("p-value must lie in [0, 1]")


@dataclass(frozen=True)
class SelectionConfig:
    """Method choice plus the optional threshold prefactor.

    The thresholds ``(a - d) / n`` and ``(2 a - d - d') / n`` are scaling
    proposals; ``alpha_prefactor`` rescales both and defaults to one.
    """

    method: str = "bic"
    alpha_prefactor: float = 1.0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise InputError(
                f"unknown method {self.method!r}; expected one of {METHODS}"
            )
        if self.alpha_prefactor <= 0.0:
            raise InputError("alpha_prefactor must be positive")


@dataclass(frozen=True)
class SelectionResult:
    """Chosen candidate plus the full score table.

    ``fallback`` marks the documented escape hatch of the threshold
    methods: no candidate passed, so the highest-rank (saturated)
    candidate was reported instead.
    """

    chosen_id: Union[int, str]
    chosen_index: int
    method: str
    fallback: bool
    scores: tuple[ModelScore, ...]
    failed_ids: tuple[Union[int, str], ...] = ()


def score_candidates(
    candidates: Sequence[Union[ArchitectureMatrix, CoefficientMatrix]],
    f: Union[Distribution, np.ndarray],
    n: int,
    *,
    ids: Optional[Sequence[Union[int, str]]] = None,
    options: Optional[SolveOptions] = None,
) -> tuple[list[Optional[ModelScore]], float]:
    """Score every candidate on one dataset.

    Returns a list aligned with ``candidates`` (``None`` where the solve
    failed; failures are logged, not raised) and the empirical entropy
    of ``f``.
    """
    if not candidates:
        raise InputError("need at least one candidate")
    probs = prob_array(f)
    h_f = entropy(probs)
    if ids is None:
        ids = list(range(len(candidates)))
    logn = math.log(n)
    scores: list[Optional[ModelScore]] = []
    for cid, cand in zip(ids, candidates):
        try:
            _, h_hat, rank_eff, n_states = _fit_for_f(cand, probs, options)
            delta = _clip_delta(h_hat - h_f)
        except SolverError as exc:
            log.warning("candidate %s failed to solve: %s", cid, exc)
            scores.append(None)
            continue
        dof = n_states - rank_eff
        scores.append(
            ModelScore(
                architecture_id=cid,
                rank=rank_eff,
                n_states=n_states,
                maxent_entropy=h_hat,
                empirical_delta=delta,
                p_value=_chi2_tail(dof, 2.0 * n * delta),
                bic=2.0 * n * h_hat + rank_eff * logn,
                aic=2.0 * n * h_hat + 2.0 * rank_eff,
                expected_entropy=h_hat - dof / (2.0 * n),
            )
        )
    return scores, h_f


def select_arrays(
    rank: np.ndarray,
    entropy_hat: np.ndarray,
    p_value: np.ndarray,
    bic_score: np.ndarray,
    aic_score: np.ndarray,
    valid: np.ndarray,
    n_states: int,
    n: int,
    config: SelectionConfig,
    implying: Optional[Callable[[int], Sequence[int]]] = None,
) -> tuple[int, bool]:
    """Selection core over parallel per-candidate arrays.

    ``implying(i)`` must yield the indices of every candidate whose
    constraint set contains candidate ``i``'s; it is only consulted by
    ``hyper_maxent_lrt`` and may include ``i`` itself or invalid entries,
    which are ignored.  Ties break toward the smallest index, so callers
    should order candidates canonically.  Returns ``(index, fallback)``.
    """
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise NoSolvableCandidateError("every candidate failed to solve")
    rank = np.asarray(rank)
    p_value = np.asarray(p_value, dtype=float)

    method = config.method
    if method in ("bic", "aic"):
        score = np.where(valid, bic_score if method == "bic" else aic_score, np.inf)
        return int(np.argmin(score)), False

    pref = config.alpha_prefactor
    passing = valid & (p_value >= pref * (n_states - rank) / n)
    idx = np.flatnonzero(passing)
    order = idx[np.lexsort((idx, -p_value[idx], rank[idx]))]

    if method == "hyper_maxent":
        if order.size:
            return int(order[0]), False
        return _highest_rank(rank, valid), True

    if implying is None:
        raise InputError("hyper_maxent_lrt requires an implication oracle")
    entropy_hat = np.asarray(entropy_hat, dtype=float)
    for i in order:
        js = np.asarray(implying(int(i)), dtype=int)
        js = js[valid[js] & (rank[js] > rank[i])]
        if js.size:
            stats = 2.0 * n * np.maximum(entropy_hat[i] - entropy_hat[js], 0.0)
            tails = gammaincc((rank[js] - rank[i]) / 2.0, stats / 2.0)
            alphas = pref * (2 * n_states - rank[i] - rank[js]) / n
            if np.any(tails < alphas):
                continue
        return int(i), False
    return _highest_rank(rank, valid), True


def _highest_rank(rank: np.ndarray, valid: np.ndarray) -> int:
    idx = np.flatnonzero(valid)
    return int(idx[np.lexsort((idx, -rank[idx]))[0]])


def select_scored(
    scores: Sequence[Optional[ModelScore]],
    n: int,
    config: SelectionConfig,
    implies: Optional[Callable[[int, int], bool]] = None,
) -> tuple[int, bool]:
    """Apply a selection procedure to an existing score table.

    ``implies(i, j)`` must report whether candidate ``j`` implies
    candidate ``i`` (is at least as constrained); it is only consulted by
    ``hyper_maxent_lrt``.  Returns ``(index, fallback)`` into ``scores``.
    """
    m = len(scores)
    valid = np.array([s is not None for s in scores], dtype=bool)
    if not valid.any():
        raise NoSolvableCandidateError("every candidate failed to solve")
    n_states = next(s.n_states for s in scores if s is not None)

    def pull(field: str, fill: float) -> np.ndarray:
        return np.array(
            [getattr(s, field) if s is not None else fill for s in scores]
        )

    implying = None
    if implies is not None:
        def implying(i: int) -> list[int]:
            return [j for j in range(m) if j != i and implies(i, j)]

    return select_arrays(
        rank=pull("rank", 0).astype(int),
        entropy_hat=pull("maxent_entropy", np.nan),
        p_value=pull("p_value", np.nan),
        bic_score=pull("bic", np.inf),
        aic_score=pull("aic", np.inf),
        valid=valid,
        n_states=n_states,
        n=n,
        config=config,
        implying=implying,
    )


def _nesting_implies(
    architectures: Sequence[Optional[ArchitectureMatrix]],
) -> Callable[[int, int], bool]:
    cache: dict[tuple[int, int], bool] = {}

    def implies(i: int, j: int) -> bool:
        key = (i, j)
        if key not in cache:
            a, b = architectures[i], architectures[j]
            cache[key] = (
                a is not None
                and b is not None
                and nesting_map(a, b) is not None
            )
        return cache[key]

    return implies


def select(
    candidates: Sequence[Union[ArchitectureMatrix, CoefficientMatrix]],
    f: Union[Distribution, np.ndarray],
    n: int,
    config: SelectionConfig,
    *,
    ids: Optional[Sequence[Union[int, str]]] = None,
    implies: Optional[Callable[[int, int], bool]] = None,
    options: Optional[SolveOptions] = None,
) -> SelectionResult:
    """Score all candidates and apply the configured procedure.

    Unsolvable candidates are dropped with a warning; if none survive,
    :class:`NoSolvableCandidateError` is raised.  When no implication
    oracle is supplied, nesting is decided from the candidates'
    full-space canonical forms.
    """
    if ids is None:
        ids = list(range(len(candidates)))
    scores, _ = score_candidates(candidates, f, n, ids=ids, options=options)

    if implies is None and config.method == "hyper_maxent_lrt":
        probs = prob_array(f)
        architectures: list[Optional[ArchitectureMatrix]] = []
        for cand, score in zip(candidates, scores):
            if score is None:
                architectures.append(None)
            elif isinstance(cand, CoefficientMatrix):
                architectures.append(
                    to_architecture(CoefficientMatrix(cand.rows, cand.rows @ probs))
                )
            else:
                architectures.append(cand)
        implies = _nesting_implies(architectures)

    index, fallback = select_scored(scores, n, config, implies)
    return SelectionResult(
        chosen_id=ids[index],
        chosen_index=index,
        method=config.method,
        fallback=fallback,
        scores=tuple(s for s in scores if s is not None),
        failed_ids=tuple(
            cid for cid, s in zip(ids, scores) if s is None
        ),
    )


@dataclass(frozen=True)
class ErrorEstimate:
    """Monte-Carlo mean with its standard error."""

    mean: float
    std_error: float
    trials: int

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise InputError("trials must be at least 1")
        if not math.isnan(self.std_error) and self.std_error < 0.0:
            raise InputError("std_error must be nonnegative")


def _kl_or_inf(
    f: Union[Distribution, np.ndarray], q: Union[Distribution, np.ndarray]
) -> float:
    try:
        return kl_divergence(f, q)
    except SupportViolationError:
        return math.inf


def _estimate(values: np.ndarray) -> ErrorEstimate:
    trials = values.size
    mean = float(values.mean())
    if trials > 1 and np.all(np.isfinite(values)):
        std_error = float(values.std(ddof=1) / math.sqrt(trials))
    elif math.isinf(mean):
        std_error = math.inf
    else:
        std_error = 0.0
    return ErrorEstimate(mean=mean, std_error=std_error, trials=trials)


def asymptotic_training_error(rank: int) -> float:
    """Large-sample training error ``(d - 1) / 2`` of a sufficient model."""
    return (rank - 1) / 2.0


def asymptotic_test_error(n_states: int, rank: int) -> float:
    """Large-sample test error ``(a + d - 2) / 2`` of a sufficient model."""
    return (n_states + rank - 2) / 2.0


def mc_training_error(
    model: Union[ArchitectureMatrix, CoefficientMatrix],
    q: Union[Distribution, np.ndarray],
    n: int,
    trials: int,
    rng: np.random.Generator,
    options: Optional[SolveOptions] = None,
) -> ErrorEstimate:
    """Monte-Carlo training error ``n KL(q || maxent(sample))``.

    Draws ``trials`` multinomial samples of size ``n`` from ``q``, refits
    the model on each, and averages the scaled divergence from the truth
    to the fit.  For a model implying the generating architecture the
    mean approaches ``(d - 1) / 2``; otherwise it grows linearly in
    ``n``.  A fit that excludes states observed under ``q`` contributes
    an infinite divergence, reported as such.
    """
    if trials < 1:
        raise InputError("trials must be at least 1")
    q_probs = prob_array(q)
    values = np.empty(trials)
    for t in range(trials):
        counts = multinomial_sample(q_probs, n, rng)
        f = counts.counts / n
        p_hat, _, _, _ = _fit_for_f(model, f, options)
        values[t] = n * _kl_or_inf(q_probs, p_hat)
    return _estimate(values)


def mc_test_error(
    model: Union[ArchitectureMatrix, CoefficientMatrix],
    q: Union[Distribution, np.ndarray],
    n: int,
    trials: int,
    test_trials: int,
    rng: np.random.Generator,
    options: Optional[SolveOptions] = None,
) -> ErrorEstimate:
    """Monte-Carlo test error ``n KL(test sample || maxent(train sample))``.

    Each trial refits the model on a fresh training sample and evaluates
    the scaled divergence of ``test_trials`` independent test samples
    from the fit, all of size ``n``.  For a model implying the
    generating architecture the mean approaches ``(a + d - 2) / 2``.
    """
    if trials < 1 or test_trials < 1:
        raise InputError("trials and test_trials must be at least 1")
    q_probs = prob_array(q)
    trial_means = np.empty(trials)
    for t in range(trials):
        counts = multinomial_sample(q_probs, n, rng)
        f = counts.counts / n
        p_hat, _, _, _ = _fit_for_f(model, f, options)
        draws = rng.multinomial(n, q_probs, size=test_trials)
        kls = np.empty(test_trials)
        for s in range(test_trials):
            kls[s] = _kl_or_inf(draws[s] / n, p_hat)
        trial_means[t] = n * kls.mean()
    return _estimate(trial_means)
