"""Maximum-entropy solvers for linearly constrained simplex models.

Two routes to the same distribution:

* :func:`solve_newton` runs damped Newton iteration on the moment map.
  Starting from the uniform distribution, each step multiplies the
  current iterate by ``exp(-rows^T @ delta)`` where ``delta`` solves the
  Jacobian system ``J = rows @ diag(p) @ rows^T``.  For a full-row-rank
  architecture and strictly positive iterate the Jacobian is a Gram
  matrix and stays invertible, and the converged solution is of
  exponential form: its log lies in the row space of the architecture.
* :func:`solve_ipf` cycles multiplicative proportional-fitting updates
  over binary marginal rows, rescaling the support of each row by the
  ratio of target to current moment.

Both report the final max-norm moment residual and agree on the solution
within a small multiple of the tolerance, which is used as a standing
cross-check.  :func:`fit_linear_system` wraps either solver with the
zero-moment exclusion cascade so that boundary moments (targets of
exactly zero or one) are handled by shrinking the working space rather
than by diverging multipliers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .constraints import (
    ArchitectureMatrix,
    CoefficientMatrix,
    KernelBasis,
    SupportReduction,
    reduce_binary_support,
    to_architecture,
)
from .errors import (
    ConvergenceError,
    InfeasibleMomentsError,
    InputError,
    RejectionExhaustedError,
    SingularJacobianError,
    ZeroMarginalError,
)
from .simplex import Distribution

__all__ = [
    "SolveOptions",
    "MaxEntSolution",
    "FitResult",
    "solve_newton",
    "solve_ipf",
    "fit_linear_system",
    "sample_equivalence_class",
]

#: Newton iteration cap when ``max_iterations`` is left unset.
NEWTON_DEFAULT_ITERATIONS = 500

#: Single-constraint update cap for proportional fitting when unset.
IPF_DEFAULT_UPDATES = 50_000

#: Exponent magnitude beyond which a Newton step is considered runaway.
_EXP_OVERFLOW = 700.0

#: Multiplier magnitude that signals diverging (infeasible) moments.
_THETA_DIVERGED = 1e3

#: Total-mass drift below which exact renormalization is a no-op for the
#: reported residual.
_SUM_SNAP_TOL = 1e-13


def _snap_normalization(
    p: np.ndarray, rows: np.ndarray, targets: np.ndarray, residual: float
) -> tuple[np.ndarray, float]:
    """Scale ``p`` to unit mass and refresh the residual.

    The solved class contains the normalization constraint, so dividing
    by the total enforces it exactly while moving every other moment by
    at most the mass drift itself.
    """
    total = float(p.sum())
    if total == 1.0:
        return p, residual
    p = p / total
    return p, float(np.max(np.abs(rows @ p - targets)))


@dataclass(frozen=True)
class SolveOptions:
    """Shared solver settings.

    ``max_iterations`` counts Newton steps for :func:`solve_newton` and
    single-constraint updates for :func:`solve_ipf`; ``None`` picks the
    per-solver default.  ``damping_halvings`` bounds how often a Newton
    step is halved before the solve is declared stalled.
    """

    tolerance: float = 1e-10
    max_iterations: Optional[int] = None
    damping_halvings: int = 30

    def __post_init__(self) -> None:
        if self.tolerance <= 0.0:
            raise InputError("tolerance must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise InputError("max_iterations must be at least 1")
        if self.damping_halvings < 0:
            raise InputError("damping_halvings must be nonnegative")


@dataclass(frozen=True)
class MaxEntSolution:
    """Converged maximum-entropy distribution on the working space.

    ``multipliers`` holds the exponential-family parameters recovered by
    the Newton route (``log p = rows^T @ multipliers``) and is ``None``
    for proportional fitting, which does not track them.
    """

    distribution: Distribution
    multipliers: Optional[np.ndarray]
    iterations: int
    residual: float

    def __post_init__(self) -> None:
        if self.multipliers is not None:
            mult = np.array(self.multipliers, dtype=float)
            mult.setflags(write=False)
            object.__setattr__(self, "multipliers", mult)


def _classify_failure(
    architecture: ArchitectureMatrix,
    p: np.ndarray,
    theta: np.ndarray,
    diff: np.ndarray,
    residual: float,
    iterations: int,
) -> Exception:
    worst = int(np.argmax(np.abs(diff)))
    detail = (
        f"residual {residual:.3e} after {iterations} iterations; worst "
        f"constraint {worst} (target {architecture.moments[worst]:.6g})"
    )
    if float(np.max(np.abs(theta))) > _THETA_DIVERGED or float(p.min()) < 1e-13:
        return InfeasibleMomentsError(
            "moments appear infeasible (multipliers diverge): " + detail
        )
    return ConvergenceError("no convergence: " + detail)


def solve_newton(
    architecture: ArchitectureMatrix,
    options: Optional[SolveOptions] = None,
) -> MaxEntSolution:
    """Maximum-entropy distribution of an architecture by damped Newton.

    Parameters
    ----------
    architecture : ArchitectureMatrix
        Canonical full-row-rank system whose moments lie strictly inside
        the feasible polytope.  States pinned to zero probability must
        have been excluded beforehand (see :func:`fit_linear_system`).
    options : SolveOptions, optional

    Returns
    -------
    MaxEntSolution
        Strictly positive solution with moment residual at or below the
        tolerance and recovered exponential-family multipliers.

    Raises
    ------
    SingularJacobianError
        If the Jacobian loses rank numerically.
    InfeasibleMomentsError
        If the residual stalls above tolerance while the multipliers
        diverge, the signature of boundary or unreachable moments.
    ConvergenceError
        If the iteration budget runs out without either of the above.
    """
    opts = options or SolveOptions()
    max_iter = opts.max_iterations or NEWTON_DEFAULT_ITERATIONS
    rows = architecture.rows
    targets = architecture.moments
    n_rows, n_states = rows.shape

    p = np.full(n_states, 1.0 / n_states)
    col_sums = rows.sum(axis=0)
    if np.allclose(col_sums, 1.0, atol=1e-9):
        # log(uniform) = -log(n) * ones = rows^T @ theta with theta constant.
        theta = np.full(n_rows, -math.log(n_states))
    else:
        theta, *_ = np.linalg.lstsq(rows.T, np.full(n_states, -math.log(n_states)), rcond=None)

    moments = rows @ p
    diff = moments - targets
    residual = float(np.max(np.abs(diff)))
    iterations = 0

    # Iterate past bare tolerance until the total mass is tight enough to
    # snap to exactly one without disturbing the other moments; quadratic
    # convergence makes the extra step essentially free.
    while residual > opts.tolerance or abs(float(p.sum()) - 1.0) > _SUM_SNAP_TOL:
        if iterations >= max_iter:
            if residual <= opts.tolerance:
                break
            raise _classify_failure(architecture, p, theta, diff, residual, iterations)
        jacobian = (rows * p) @ rows.T
        try:
            delta = np.linalg.solve(jacobian, diff)
        except np.linalg.LinAlgError:
            raise SingularJacobianError(
                f"Jacobian singular at iteration {iterations}"
            ) from None

        step = 1.0
        accepted = False
        for _ in range(opts.damping_halvings + 1):
            shift = rows.T @ (step * delta)
            if float(np.max(np.abs(shift))) > _EXP_OVERFLOW:
                step *= 0.5
                continue
            p_new = p * np.exp(-shift)
            if not np.all(np.isfinite(p_new)) or float(p_new.min()) <= 0.0:
                step *= 0.5
                continue
            moments_new = rows @ p_new
            diff_new = moments_new - targets
            residual_new = float(np.max(np.abs(diff_new)))
            if residual_new < residual:
                p, diff, residual = p_new, diff_new, residual_new
                theta = theta - step * delta
                accepted = True
                break
            step *= 0.5
        iterations += 1
        if not accepted:
            if residual <= opts.tolerance:
                break
            raise _classify_failure(architecture, p, theta, diff, residual, iterations)

    p, residual = _snap_normalization(p, rows, targets, residual)
    return MaxEntSolution(
        distribution=Distribution(p),
        multipliers=theta,
        iterations=iterations,
        residual=residual,
    )


def solve_ipf(
    system: CoefficientMatrix,
    options: Optional[SolveOptions] = None,
) -> MaxEntSolution:
    """Maximum-entropy distribution by iterative proportional fitting.

    Cycles through the binary rows of ``system``; each update rescales
    the probabilities on the support of one row by the ratio of its
    target to its current moment.  A target of exactly zero zeroes the
    support outright.  Convergence is checked on the max-norm moment
    residual after every full cycle.

    Raises
    ------
    ZeroMarginalError
        If a row has positive target but zero current mass, so no
        multiplicative update can reach it.
    ConvergenceError
        If the single-constraint update budget runs out above tolerance.
    """
    opts = options or SolveOptions()
    if not system.is_binary:
        raise InputError("proportional fitting requires binary constraint rows")
    targets = system.moments
    if np.any(targets < 0.0) or np.any(targets > 1.0 + 1e-12):
        raise InputError("binary-row targets must lie in [0, 1]")
    max_updates = opts.max_iterations or IPF_DEFAULT_UPDATES

    supports = [np.flatnonzero(row == 1.0) for row in system.rows]
    n_states = system.n_states
    p = np.full(n_states, 1.0 / n_states)
    updates = 0
    while True:
        for a, supp in enumerate(supports):
            target = targets[a]
            if target <= 0.0:
                p[supp] = 0.0
            else:
                current = float(p[supp].sum())
                if current == 0.0:
                    raise ZeroMarginalError(
                        f"row {a} has target {target:.6g} but zero current mass"
                    )
                p[supp] *= target / current
            updates += 1
        # Re-apply the normalization constraint at the end of the cycle
        # so the residual that passes the tolerance check is the one the
        # final unit-mass snap preserves.
        total = float(p.sum())
        if total > 0.0:
            p /= total
        residual = float(np.max(np.abs(system.rows @ p - targets)))
        if residual <= opts.tolerance:
            break
        if updates >= max_updates:
            raise ConvergenceError(
                f"proportional fitting stopped at residual {residual:.3e} "
                f"after {updates} updates"
            )
    p, residual = _snap_normalization(p, system.rows, targets, residual)
    return MaxEntSolution(
        distribution=Distribution(p),
        multipliers=None,
        iterations=updates,
        residual=residual,
    )


@dataclass(frozen=True)
class FitResult:
    """Maximum-entropy fit of a raw constraint system on the full space.

    The solve itself happens on the working space left after the
    zero-moment exclusion cascade; ``probabilities`` pads the solution
    back to the full space with exact zeros.  ``rank_effective`` counts
    the canonical rank of the reduced system plus one pinning constraint
    per excluded state, so ``n_states - rank_effective`` is the number of
    free fluctuation directions regardless of how many states were
    removed.
    """

    solution: MaxEntSolution
    architecture: ArchitectureMatrix
    excluded: np.ndarray
    n_states: int
    rank_effective: int
    probabilities: np.ndarray = field(repr=False)

    @property
    def distribution(self) -> Distribution:
        return Distribution(self.probabilities)

    @property
    def degrees_of_freedom(self) -> int:
        return self.n_states - self.rank_effective


def _pad_full(values: np.ndarray, excluded: np.ndarray) -> np.ndarray:
    full = np.zeros(excluded.size, dtype=float)
    full[~excluded] = values
    return full


def fit_linear_system(
    system: CoefficientMatrix,
    options: Optional[SolveOptions] = None,
    method: str = "newton",
) -> FitResult:
    """Canonicalize, reduce, and solve a raw constraint system.

    Binary systems first run :func:`reduce_binary_support`, so targets of
    exactly zero or one shrink the working space instead of stalling the
    solver.  When the reduced system is saturated (rank equals the number
    of surviving states) the unique feasible point is read off directly.

    Parameters
    ----------
    system : CoefficientMatrix
    options : SolveOptions, optional
    method : {"newton", "ipf"}
    """
    if method not in ("newton", "ipf"):
        raise InputError(f"unknown solve method {method!r}")
    opts = options or SolveOptions()

    if system.is_binary:
        reduction = reduce_binary_support(system.rows, system.moments)
        excluded = reduction.excluded
        reduced_rows, reduced_moments = reduction.rows, reduction.moments
    else:
        excluded = np.zeros(system.n_states, dtype=bool)
        reduced_rows, reduced_moments = system.rows, system.moments

    reduced = CoefficientMatrix(reduced_rows, reduced_moments)
    architecture = to_architecture(reduced)
    n_working = architecture.n_states

    if architecture.rank == n_working:
        # Saturated on the working space: the RREF is the identity and the
        # moments are the unique feasible point.
        p = np.array(architecture.moments, dtype=float)
        tiny = (p < 0.0) & (p >= -1e-12)
        p[tiny] = 0.0
        if np.any(p < 0.0):
            raise InfeasibleMomentsError(
                "infeasible moments: saturated system implies a negative probability"
            )
        p, residual = _snap_normalization(
            p, architecture.rows, architecture.moments, 0.0
        )
        solution = MaxEntSolution(
            distribution=Distribution(p),
            multipliers=None,
            iterations=0,
            residual=residual,
        )
    elif method == "newton":
        solution = solve_newton(architecture, opts)
    else:
        solution = solve_ipf(reduced, opts)

    return FitResult(
        solution=solution,
        architecture=architecture,
        excluded=excluded,
        n_states=system.n_states,
        rank_effective=architecture.rank + int(excluded.sum()),
        probabilities=_pad_full(solution.distribution.probs, excluded),
    )


def sample_equivalence_class(
    solution: MaxEntSolution,
    kernel: KernelBasis,
    n: Union[int, float],
    rng: np.random.Generator,
    *,
    max_rejections: int = 1000,
) -> Distribution:
    """Draw one member of the equivalence class around a MaxEnt anchor.

    The draw is ``p = anchor + sqrt(anchor / n) * (x @ vectors)`` with
    ``x`` standard normal, which satisfies the anchor's constraints by
    construction and models the moment-preserving fluctuations of an
    ``n``-sample empirical distribution.  Draws that leave the simplex
    are rejected and retried.

    Raises
    ------
    RejectionExhaustedError
        After ``max_rejections`` consecutive out-of-simplex draws;
        ``n`` is then too small for Gaussian fluctuations to stay
        inside the simplex.
    """
    if n <= 0:
        raise InputError("sample size must be positive")
    anchor = solution.distribution.probs
    if anchor.size != kernel.anchor.size:
        raise InputError("solution and kernel disagree on state count")
    scale = np.sqrt(anchor / float(n))
    for _ in range(max_rejections):
        x = rng.standard_normal(kernel.dim)
        p = anchor + scale * (x @ kernel.vectors)
        if float(p.min()) >= 0.0:
            return Distribution(p)
    raise RejectionExhaustedError(
        f"{max_rejections} consecutive draws left the simplex; "
        "increase the sample size"
    )


def _newton_batch(
    row_stack: np.ndarray,
    target_stack: np.ndarray,
    *,
    tolerance: float = 1e-10,
    max_iterations: int = 200,
    overflow: float = 200.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Undamped Newton iteration over a stack of same-rank systems.

    Vectorized fast path for sweeps that fit thousands of models against
    one sample.  Systems that converge are frozen; systems that produce a
    singular Jacobian, a runaway step, or fail to converge within the cap
    are flagged for the caller to refit through the damped scalar path.

    Parameters
    ----------
    row_stack : ndarray, shape (g, d, a)
        Full-row-rank constraint rows for ``g`` systems.
    target_stack : ndarray, shape (g, d)

    Returns
    -------
    probabilities : ndarray, shape (g, a)
    residuals : ndarray, shape (g,)
    converged : ndarray of bool, shape (g,)
    """
    n_systems, _, n_states = row_stack.shape
    p = np.full((n_systems, n_states), 1.0 / n_states)
    residuals = np.full(n_systems, np.inf)
    converged = np.zeros(n_systems, dtype=bool)
    active = np.arange(n_systems)

    for _ in range(max_iterations):
        if active.size == 0:
            break
        rows = row_stack[active]
        probs = p[active]
        moments = (rows @ probs[:, :, None])[:, :, 0]
        diff = moments - target_stack[active]
        res = np.max(np.abs(diff), axis=1)
        residuals[active] = res
        done = res <= tolerance
        if done.any():
            converged[active[done]] = True
            keep = ~done
            active = active[keep]
            if active.size == 0:
                break
            rows, probs, diff = rows[keep], probs[keep], diff[keep]

        jacobian = (rows * probs[:, None, :]) @ rows.transpose(0, 2, 1)
        try:
            delta = np.linalg.solve(jacobian, diff[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            delta = np.empty_like(diff)
            singular = np.zeros(active.size, dtype=bool)
            for i in range(active.size):
                try:
                    delta[i] = np.linalg.solve(jacobian[i], diff[i])
                except np.linalg.LinAlgError:
                    singular[i] = True
            if singular.any():
                keep = ~singular
                active = active[keep]
                rows, probs, delta = rows[keep], probs[keep], delta[keep]
                if active.size == 0:
                    continue

        shift = (rows.transpose(0, 2, 1) @ delta[:, :, None])[:, :, 0]
        runaway = np.max(np.abs(shift), axis=1) > overflow
        if runaway.any():
            keep = ~runaway
            active = active[keep]
            probs, shift = probs[keep], shift[keep]
            if active.size == 0:
                continue
        p[active] = probs * np.exp(-shift)

    if active.size:
        # Credit systems whose very last update reached tolerance.
        rows = row_stack[active]
        moments = (rows @ p[active][:, :, None])[:, :, 0]
        res = np.max(np.abs(moments - target_stack[active]), axis=1)
        residuals[active] = res
        converged[active[res <= tolerance]] = True

    if converged.any():
        idx = np.flatnonzero(converged)
        p[idx] /= p[idx].sum(axis=1, keepdims=True)
        moments = (row_stack[idx] @ p[idx][:, :, None])[:, :, 0]
        residuals[idx] = np.max(np.abs(moments - target_stack[idx]), axis=1)

    return p, residuals, converged
