"""
Continuous piecewise-linear regression with unknown breakpoints.

A fit with breakpoints ``psi_1 < ... < psi_N`` predicts::

    y = intercept + base_slope * x + sum_k slope_diffs[k] * max(x - psi_k, 0)

Breakpoints are estimated by iterative linearization: around the current
estimate ``psi^s`` the hinge is replaced by ``beta * U + gamma * V`` with
``U = (x - psi^s)_+`` and ``V = -I(x > psi^s)``, the linear problem is solved
and the estimate moves to ``psi^s + gamma / beta``. Once the linearization
settles, each breakpoint is moved to its exact best position given the
others, and the two alternate until neither lowers the residual.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any, Literal, overload

import numpy as np
import numpy.typing as npt
import scipy.linalg
from scipy.optimize import minimize_scalar

from .errors import ConfigError, DegenerateBreakpointsError, SingularDesignError
from .ingest import NormalizedProfile

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.intp]
IterationCallback = Callable[[FloatArray, float], None]

logger = logging.getLogger(__name__)

_MAX_HALVINGS = 10
_MIN_VARIANCE = 1e-20  # floor of SSR/n in the information criterion
# smallest residual decrease an exact move must bring
_IMPROVEMENT_RTOL = 1e-9
_IMPROVEMENT_ATOL = 1e-24


@dataclass(frozen=True)
class FitConfig:
    """
    Settings of the breakpoint search.

    ``min_gap=None`` uses two sample spacings of the profile being fitted.
    """

    max_breakpoints: int = 4
    convergence_tol: float = 1e-6
    max_iterations: int = 50
    beta_zero_tol: float = 1e-3
    min_gap: float | None = None
    initial_placement: Literal["quantile", "uniform"] = "quantile"

    def __post_init__(self) -> None:
        if self.max_breakpoints < 1:
            raise ConfigError(
                f"max_breakpoints must be >= 1, got {self.max_breakpoints}."
            )
        if not self.convergence_tol > 0:
            raise ConfigError(
                f"convergence_tol must be > 0, got {self.convergence_tol}."
            )
        if self.max_iterations < 1:
            raise ConfigError(
                f"max_iterations must be >= 1, got {self.max_iterations}."
            )
        if not self.beta_zero_tol > 0:
            raise ConfigError(f"beta_zero_tol must be > 0, got {self.beta_zero_tol}.")
        if self.min_gap is not None and not self.min_gap > 0:
            raise ConfigError(f"min_gap must be > 0, got {self.min_gap}.")
        if self.initial_placement not in ("quantile", "uniform"):
            raise ConfigError(
                f"initial_placement must be 'quantile' or 'uniform', "
                f"got {self.initial_placement!r}."
            )

    def gap_for(self, x: FloatArray) -> float:
        if self.min_gap is not None:
            return self.min_gap
        return 2.0 * float(x[-1] - x[0]) / max(x.shape[0] - 1, 1)


@dataclass(frozen=True, eq=False)
class SegmentedFit:
    """Result of a segmented regression."""

    breakpoints: FloatArray
    base_slope: float
    slope_diffs: FloatArray
    intercept: float
    rmse: float
    iterations: int = 0
    converged: bool = True
    id: str = field(default="")

    def __post_init__(self) -> None:
        if self.breakpoints.shape != self.slope_diffs.shape:
            raise ValueError("Every breakpoint needs exactly one slope difference.")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("Breakpoints must be strictly increasing.")

    @property
    def n_breakpoints(self) -> int:
        return int(self.breakpoints.shape[0])

    @property
    def n_segments(self) -> int:
        return self.n_breakpoints + 1

    @property
    def slopes(self) -> FloatArray:
        """Slope of each segment, left to right."""
        return self.base_slope + np.concatenate(([0.0], np.cumsum(self.slope_diffs)))

    def to_record(self) -> dict[str, Any]:
        """Interchange record consumed by the downstream stages."""
        return {
            "id": self.id,
            "breakpoints": self.breakpoints.tolist(),
            "slopes": self.slopes.tolist(),
            "intercept": float(self.intercept),
            "rmse": float(self.rmse),
            "converged": bool(self.converged),
            "n_segments": self.n_segments,
            "iterations": int(self.iterations),
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> SegmentedFit:
        slopes = np.asarray(record["slopes"], dtype=float)
        return cls(
            breakpoints=np.asarray(record["breakpoints"], dtype=float),
            base_slope=float(slopes[0]),
            slope_diffs=np.diff(slopes),
            intercept=float(record["intercept"]),
            rmse=float(record["rmse"]),
            iterations=int(record.get("iterations", 0)),
            converged=bool(record["converged"]),
            id=str(record.get("id", "")),
        )


@overload
def predict(fit: SegmentedFit, x: float) -> float: ...


@overload
def predict(fit: SegmentedFit, x: FloatArray) -> FloatArray: ...


def predict(fit: SegmentedFit, x: float | FloatArray) -> float | FloatArray:
    """Evaluate the piecewise-linear function of ``fit`` at ``x``."""
    xs = np.asarray(x, dtype=float)
    hinges = np.maximum(xs[..., None] - fit.breakpoints, 0.0)
    y = fit.intercept + fit.base_slope * xs + hinges @ fit.slope_diffs
    if np.ndim(x) == 0:
        return float(y)
    return np.asarray(y, dtype=float)


def ssr(fit: SegmentedFit, profile: NormalizedProfile) -> float:
    """Sum of squared residuals of ``fit`` on ``profile``."""
    residuals = profile.y - predict(fit, profile.x)
    return float(residuals @ residuals)


def compute_rmse(fit: SegmentedFit, profile: NormalizedProfile) -> float:
    """Root mean square residual of ``fit`` on ``profile``."""
    return math.sqrt(ssr(fit, profile) / len(profile))


def _hinge_design(x: FloatArray, psi: FloatArray) -> FloatArray:
    columns = [np.ones_like(x), x, *(np.maximum(x - p, 0.0) for p in psi)]
    return np.column_stack(columns)


def _solve(design: FloatArray, y: FloatArray) -> tuple[FloatArray, float]:
    coef, _, rank, _ = scipy.linalg.lstsq(design, y, lapack_driver="gelsy")
    if rank < design.shape[1]:
        raise SingularDesignError(
            f"Design matrix of shape {design.shape} has rank {rank}."
        )
    residuals = y - design @ coef
    return coef, float(residuals @ residuals)


def _exact_ssr(x: FloatArray, y: FloatArray, psi: FloatArray) -> float:
    return _solve(_hinge_design(x, psi), y)[1]


def _slope_changes(x: FloatArray, y: FloatArray, psi: FloatArray) -> FloatArray:
    coef, _ = _solve(_hinge_design(x, psi), y)
    return np.asarray(coef[2:], dtype=float)


def _build_fit(
    x: FloatArray,
    y: FloatArray,
    psi: FloatArray,
    iterations: int,
    converged: bool,
    profile_id: str,
) -> SegmentedFit:
    coef, total = _solve(_hinge_design(x, psi), y)
    return SegmentedFit(
        breakpoints=psi.copy(),
        base_slope=float(coef[1]),
        slope_diffs=np.asarray(coef[2:], dtype=float),
        intercept=float(coef[0]),
        rmse=math.sqrt(total / x.shape[0]),
        iterations=iterations,
        converged=converged,
        id=profile_id,
    )


def _interior(x: FloatArray) -> tuple[float, float]:
    """Range a linearized update may move a breakpoint to."""
    if x.shape[0] < 4:
        return float(x[0]), float(x[-1])
    return float(x[1]), float(x[-3])


def _cuts(x: FloatArray, psi: FloatArray) -> IntArray:
    """Number of samples at or left of each breakpoint."""
    return np.searchsorted(x, psi, side="right")


def _hinge_supported(x: FloatArray, psi: FloatArray) -> bool:
    """
    Whether the continuous fit with breakpoints ``psi`` is well posed: two
    samples at or left of the first breakpoint, one right of the last and a
    sample between any two neighbours.
    """
    cuts = _cuts(x, psi)
    return bool(
        np.all(cuts >= 2)
        and np.all(cuts <= x.shape[0] - 1)
        and np.all(np.diff(cuts) > 0)
    )


def _segments_supported(x: FloatArray, psi: FloatArray) -> bool:
    """Whether every segment holds two samples, as the linearized fit needs."""
    bounds = np.concatenate(([0], _cuts(x, psi), [x.shape[0]]))
    return bool(np.all(np.diff(bounds) >= 2))


def _feasible(x: FloatArray, psi: FloatArray) -> FloatArray:
    """Drop breakpoints, leftmost offender first, until the fit is well posed."""
    psi = np.sort(np.asarray(psi, dtype=float))
    while psi.shape[0]:
        cuts = _cuts(x, psi)
        shared = np.concatenate(([False], np.diff(cuts) == 0))
        bad = np.flatnonzero((cuts < 2) | (cuts > x.shape[0] - 1) | shared)
        if bad.shape[0] == 0:
            break
        psi = np.delete(psi, int(bad[0]))
    return psi


def _improves(total: float, current: float) -> bool:
    return total < current - max(_IMPROVEMENT_RTOL * current, _IMPROVEMENT_ATOL)


def _best_position(
    x: FloatArray, y: FloatArray, fixed: FloatArray, gaps: IntArray
) -> float | None:
    """
    Best position of one more breakpoint next to the ``fixed`` ones.

    ``gaps`` lists the samples ``m`` the new breakpoint may sit on or right
    of. Every such sample is tried, and for each open interval
    ``(x_m, x_{m+1})`` the two-phase least squares problem is solved in
    closed form: with the fixed columns projected out, the hinge is the
    pair ``x * I(x > x_m)``, ``I(x > x_m)`` and the breakpoint is where the
    two fitted lines cross. Returns ``None`` if no position is admissible.
    """
    if gaps.shape[0] == 0:
        return None
    n = x.shape[0]
    basis, _ = np.linalg.qr(_hinge_design(x, fixed))

    def residual(values: FloatArray) -> FloatArray:
        return values - basis @ (basis.T @ values)

    r = residual(y)
    rr = float(r @ r)

    hinges = np.maximum(x[:, None] - x[gaps][None, :], 0.0)
    h = residual(hinges)
    hh = np.einsum("ij,ij->j", h, h)
    hr = h.T @ r
    usable = hh > 1e-12 * np.einsum("ij,ij->j", hinges, hinges)
    with np.errstate(divide="ignore", invalid="ignore"):
        on_sample = np.where(usable, rr - hr**2 / hh, np.inf)
    positions = [x[gaps]]
    totals = [on_sample]

    inner = gaps[gaps <= n - 3]
    if inner.shape[0]:
        right = (np.arange(n)[:, None] > inner[None, :]).astype(float)
        u = residual(right * x[:, None])
        v = residual(right)
        uu = np.einsum("ij,ij->j", u, u)
        uv = np.einsum("ij,ij->j", u, v)
        vv = np.einsum("ij,ij->j", v, v)
        ur = u.T @ r
        vr = v.T @ r
        det = uu * vv - uv**2
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = (vv * ur - uv * vr) / det
            offset = (uu * vr - uv * ur) / det
            crossing = -offset / slope
            total = rr - (slope * ur + offset * vr)
            inside = (
                (det > 1e-12 * uu * vv)
                & np.isfinite(crossing)
                & (crossing > x[inner])
                & (crossing < x[inner + 1])
            )
        positions.append(crossing[inside])
        totals.append(total[inside])

    candidates = np.concatenate(positions)
    scores = np.concatenate(totals)
    if not np.any(np.isfinite(scores)):
        return None
    return float(candidates[int(np.argmin(scores))])


def _sweep(
    x: FloatArray, y: FloatArray, psi: FloatArray, current: float
) -> tuple[FloatArray, float, bool]:
    """Move each breakpoint in turn to its best position between its neighbours."""
    n = x.shape[0]
    moved = False
    for k in range(psi.shape[0]):
        cuts = _cuts(x, psi)
        lo_cut = int(cuts[k - 1]) if k > 0 else 1
        hi_cut = int(cuts[k + 1]) if k + 1 < psi.shape[0] else n
        found = _best_position(
            x, y, np.delete(psi, k), np.arange(lo_cut, hi_cut - 1)
        )
        if found is None:
            continue
        candidate = psi.copy()
        candidate[k] = found
        try:
            total = _exact_ssr(x, y, candidate)
        except SingularDesignError:
            continue
        if _improves(total, current):
            psi, current, moved = candidate, total, True
    return psi, current, moved


def _insert(x: FloatArray, y: FloatArray, psi: FloatArray) -> FloatArray | None:
    """``psi`` plus one breakpoint at the best free position."""
    taken = _cuts(x, psi) - 1
    gaps = np.setdiff1d(np.arange(1, x.shape[0] - 1), taken)
    found = _best_position(x, y, psi, gaps)
    if found is None:
        return None
    return np.sort(np.append(psi, found))


@dataclass
class _IterationState:
    psi: FloatArray
    iterations: int = 0
    converged: bool = False


def _linearized(
    x: FloatArray, y: FloatArray, psi: FloatArray
) -> tuple[FloatArray, FloatArray] | None:
    """Slope changes and shift terms of the linearized fit, if it is solvable."""
    if not _segments_supported(x, psi):
        return None
    hinges = np.maximum(x[:, None] - psi, 0.0)
    steps_ind = -(x[:, None] > psi).astype(float)
    design = np.column_stack([np.ones_like(x), x, hinges, steps_ind])
    try:
        coef, _ = _solve(design, y)
    except SingularDesignError:
        return None
    n_psi = psi.shape[0]
    return coef[2 : 2 + n_psi], coef[2 + n_psi :]


def _iterate(
    x: FloatArray,
    y: FloatArray,
    psi: FloatArray,
    config: FitConfig,
    *,
    prune: bool,
    callback: IterationCallback | None = None,
) -> _IterationState:
    """
    Run the linearized breakpoint updates.

    A step is halved until the residual does not grow and every segment
    keeps two samples. With ``prune`` breakpoints whose slope difference
    vanishes or which keep escaping the data range are removed on the way.
    Otherwise the number of breakpoints is preserved, flat breakpoints stay
    where they are and a run whose breakpoints keep escaping ends
    unconverged.
    """
    state = _IterationState(np.sort(np.asarray(psi, dtype=float)))
    lo, hi = _interior(x)
    clamp_streak = np.zeros(state.psi.shape[0], dtype=int)
    current = _exact_ssr(x, y, state.psi)

    while state.iterations < config.max_iterations:
        n_psi = state.psi.shape[0]
        if n_psi == 0:
            state.converged = True
            return state
        linearized = _linearized(x, y, state.psi)
        if linearized is None:
            # no linearization around this estimate, exact moves take over
            state.converged = True
            return state
        beta, gamma = linearized
        state.iterations += 1

        flat = np.abs(beta) < config.beta_zero_tol
        if prune and np.any(flat):
            logger.debug(
                "Removing breakpoints %s with vanishing slope change",
                state.psi[flat],
            )
            state.psi = state.psi[~flat]
            clamp_streak = clamp_streak[~flat]
            current = _exact_ssr(x, y, state.psi)
            continue

        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(flat, 0.0, gamma / beta)
        step = np.nan_to_num(step, nan=0.0, posinf=np.inf, neginf=-np.inf)

        accepted = False
        h = 1.0
        candidate = state.psi
        trial = current
        clamped = np.zeros(n_psi, dtype=bool)
        for _ in range(_MAX_HALVINGS):
            with np.errstate(invalid="ignore"):
                raw = state.psi + h * step
            clamped = ~flat & ((raw < lo) | (raw > hi) | ~np.isfinite(raw))
            candidate = np.clip(np.nan_to_num(raw, posinf=hi, neginf=lo), lo, hi)
            order = np.argsort(candidate, kind="stable")
            candidate = candidate[order]
            if _segments_supported(x, candidate):
                try:
                    trial = _exact_ssr(x, y, candidate)
                except SingularDesignError:
                    trial = math.inf
                if trial <= current:
                    clamped = clamped[order]
                    accepted = True
                    break
            h /= 2.0

        if not accepted:
            # no step reduces the residual: the estimate is stationary
            state.converged = True
            return state

        clamp_streak = np.where(clamped, clamp_streak + 1, 0)
        delta = float(np.max(np.abs(candidate - state.psi)))
        state.psi = candidate
        current = trial
        if callback is not None:
            callback(state.psi.copy(), current)

        if np.any(clamp_streak >= 2):
            diverging = clamp_streak >= 2
            logger.debug(
                "Breakpoints %s keep escaping the data range", state.psi[diverging]
            )
            if prune:
                state.psi = state.psi[~diverging]
                clamp_streak = clamp_streak[~diverging]
                current = _exact_ssr(x, y, state.psi)
                continue
            return state

        if delta < config.convergence_tol:
            state.converged = True
            return state
    return state


def _refine(
    x: FloatArray,
    y: FloatArray,
    psi: FloatArray,
    config: FitConfig,
    callback: IterationCallback | None = None,
) -> _IterationState:
    """
    Alternate linearized updates with exact single-breakpoint moves until
    neither lowers the residual. The number of breakpoints is preserved.
    """
    state = _iterate(x, y, psi, config, prune=False, callback=callback)
    iterations = state.iterations
    for _ in range(config.max_iterations):
        current = _exact_ssr(x, y, state.psi)
        moved_psi, total, moved = _sweep(x, y, state.psi, current)
        if not moved:
            state.iterations = iterations
            return state
        iterations += 1
        if callback is not None:
            callback(moved_psi.copy(), total)
        state = _iterate(x, y, moved_psi, config, prune=False, callback=callback)
        iterations += state.iterations
    state.iterations = iterations
    state.converged = False
    return state


def _arrays(profile: NormalizedProfile) -> tuple[FloatArray, FloatArray]:
    return np.asarray(profile.x, dtype=float), np.asarray(profile.y, dtype=float)


def fit_fixed(
    profile: NormalizedProfile,
    initial_psi: Sequence[float] | FloatArray,
    config: FitConfig | None = None,
    *,
    callback: IterationCallback | None = None,
) -> SegmentedFit:
    """
    Fit a fixed number of breakpoints starting from ``initial_psi``.

    Linearized updates alternate with exact moves of one breakpoint at a
    time, so a single breakpoint always ends at the best position between
    the second and the second to last sample. ``callback`` receives the
    breakpoints and residual sum of squares after every accepted update;
    the residual never increases.

    :raises ~polyviews.errors.SingularDesignError:
        if there are too few points or two breakpoints lie between the same
        pair of samples
    :raises ~polyviews.errors.DegenerateBreakpointsError:
        if two breakpoints converge closer than ``min_gap``
    """
    config = config or FitConfig()
    x, y = _arrays(profile)
    psi = np.asarray(initial_psi, dtype=float)
    if np.any(np.diff(psi) <= 0):
        raise ValueError(f"Initial breakpoints {psi} must be strictly increasing.")
    if psi.size and (psi[0] <= x[0] or psi[-1] >= x[-1]):
        raise ValueError(f"Initial breakpoints {psi} must lie inside the data range.")
    if x.shape[0] < 2 + 2 * psi.shape[0]:
        raise SingularDesignError(
            f"{x.shape[0]} points cannot determine {psi.shape[0]} breakpoints."
        )
    if psi.size:
        psi = np.clip(psi, x[1], x[-2])
    if not _hinge_supported(x, psi):
        raise SingularDesignError(
            f"Initial breakpoints {psi} do not separate distinct samples."
        )

    state = _refine(x, y, psi, config, callback)
    if not state.converged:
        logger.warning(
            "Profile '%s': breakpoint search stopped after %d iterations "
            "without converging",
            profile.id,
            state.iterations,
        )
    gap = config.gap_for(x)
    if np.any(np.diff(state.psi) < gap):
        raise DegenerateBreakpointsError(
            f"Profile '{profile.id}': breakpoints {state.psi} are closer than {gap}."
        )
    return _build_fit(x, y, state.psi, state.iterations, state.converged, profile.id)


def initial_breakpoints(
    x: FloatArray, count: int, placement: Literal["quantile", "uniform"]
) -> FloatArray:
    """Starting positions of ``count`` breakpoints."""
    fractions = np.arange(1, count + 1) / (count + 1)
    if placement == "quantile":
        return np.asarray(np.quantile(x, fractions), dtype=float)
    return x[0] + fractions * (x[-1] - x[0])


def _curvature_breakpoints(x: FloatArray, y: FloatArray, count: int) -> FloatArray:
    """Samples where the slope between neighbours changes most, two apart at least."""
    with np.errstate(divide="ignore", invalid="ignore"):
        change = np.abs(np.diff(np.diff(y) / np.diff(x)))
    change = np.nan_to_num(change, nan=0.0)
    chosen: list[int] = []
    for i in np.argsort(-change, kind="stable"):
        if len(chosen) == count:
            break
        if all(abs(int(i) - j) > 2 for j in chosen):
            chosen.append(int(i))
    # change[i] sits on sample i + 1
    return np.sort(x[np.asarray(chosen, dtype=int) + 1])


def _greedy_breakpoints(
    x: FloatArray, y: FloatArray, count: int, config: FitConfig
) -> FloatArray:
    """Add breakpoints one at a time at the best free position, refining after each."""
    psi = np.empty(0)
    for _ in range(count):
        grown = _insert(x, y, psi)
        if grown is None:
            break
        psi = _refine(x, y, grown, config).psi
    return psi


def _merge_close(psi: FloatArray, gap: float) -> FloatArray:
    merged: list[float] = []
    for p in np.sort(psi):
        if merged and p - merged[-1] < gap:
            merged[-1] = 0.5 * (merged[-1] + p)
        else:
            merged.append(float(p))
    return np.asarray(merged, dtype=float)


def _information(total: float, n: int, n_psi: int) -> float:
    """Bayesian information criterion of a fit with ``n_psi`` breakpoints."""
    variance = max(total / n, _MIN_VARIANCE)
    return n * math.log(variance) + (2 + 2 * n_psi) * math.log(n)


def _settle(
    x: FloatArray, y: FloatArray, psi: FloatArray, config: FitConfig, gap: float
) -> _IterationState:
    """
    Refine from ``psi``, removing flat breakpoints and merging close ones,
    until no breakpoint is removed anymore.
    """
    iterations = 0
    while True:
        psi = _feasible(x, _merge_close(psi, gap))
        pruned = _iterate(x, y, psi, config, prune=True)
        state = _refine(x, y, _feasible(x, pruned.psi), config)
        iterations += pruned.iterations + state.iterations
        state.iterations = iterations
        merged = _merge_close(state.psi, gap)
        if merged.shape[0] < state.psi.shape[0]:
            psi = merged
            continue
        flat = np.abs(_slope_changes(x, y, state.psi)) < config.beta_zero_tol
        if not np.any(flat):
            return state
        logger.debug("Removing breakpoints %s without slope change", state.psi[flat])
        psi = state.psi[~flat]


def _exchange(
    x: FloatArray,
    y: FloatArray,
    state: _IterationState,
    config: FitConfig,
    gap: float,
) -> _IterationState:
    """Relocate one breakpoint at a time to the best free position while that helps."""
    current = _exact_ssr(x, y, state.psi)
    for _ in range(config.max_iterations):
        for k in range(state.psi.shape[0]):
            grown = _insert(x, y, np.delete(state.psi, k))
            if grown is None:
                continue
            trial = _refine(x, y, grown, config)
            if np.any(np.diff(trial.psi) < gap):
                continue
            total = _exact_ssr(x, y, trial.psi)
            if _improves(total, current):
                trial.iterations += state.iterations
                state, current = trial, total
                break
        else:
            return state
    return state


def _eliminate(
    x: FloatArray,
    y: FloatArray,
    state: _IterationState,
    config: FitConfig,
    gap: float,
    profile_id: str,
) -> tuple[_IterationState, float]:
    """
    Remove breakpoints one by one, always the one whose removal raises the
    residual least, while the information criterion improves.
    """
    n = x.shape[0]
    best_bic = _information(_exact_ssr(x, y, state.psi), n, state.psi.shape[0])
    while state.psi.shape[0] > 0:
        candidates: list[tuple[float, _IterationState]] = []
        for k in range(state.psi.shape[0]):
            try:
                trial = _refine(x, y, np.delete(state.psi, k), config)
                total = _exact_ssr(x, y, trial.psi)
            except SingularDesignError:
                continue
            if np.any(np.diff(trial.psi) < gap):
                continue
            candidates.append((total, trial))
        if not candidates:
            break
        total, trial = min(candidates, key=lambda item: item[0])
        bic = _information(total, n, trial.psi.shape[0])
        if bic >= best_bic:
            break
        logger.debug(
            "Profile '%s': dropping to %d breakpoints (BIC %.4f -> %.4f)",
            profile_id,
            trial.psi.shape[0],
            best_bic,
            bic,
        )
        trial.iterations += state.iterations
        state, best_bic = trial, bic
    return state, best_bic


def _starting_sets(
    x: FloatArray, y: FloatArray, count: int, config: FitConfig
) -> list[FloatArray]:
    if count == 0:
        return [np.empty(0)]
    return [
        initial_breakpoints(x, count, config.initial_placement),
        _curvature_breakpoints(x, y, count),
        _greedy_breakpoints(x, y, count, config),
    ]


def fit_auto(
    profile: NormalizedProfile, config: FitConfig | None = None
) -> SegmentedFit:
    """
    Fit a segmented regression and choose the number of breakpoints.

    The search runs from several sets of ``max_breakpoints`` candidates:
    the configured placement, the samples where the local slope changes
    most and a greedy insertion of the best breakpoint one at a time. From
    each set breakpoints whose slope change vanishes or which come closer
    than ``min_gap`` are dropped, single breakpoints are relocated while the
    residual falls, then breakpoints are removed one by one, always the one
    whose removal raises the residual the least, while the Bayesian
    information criterion improves. The result with the lowest criterion
    wins.

    :raises ~polyviews.errors.SingularDesignError:
        if even a single straight line cannot be fitted
    """
    config = config or FitConfig()
    x, y = _arrays(profile)
    n = x.shape[0]
    gap = config.gap_for(x)
    count = min(config.max_breakpoints, max((n - 2) // 2, 0))

    best: _IterationState | None = None
    best_score = (math.inf, math.inf)
    for start in _starting_sets(x, y, count, config):
        state = _settle(x, y, start, config, gap)
        state = _exchange(x, y, state, config, gap)
        state, bic = _eliminate(x, y, state, config, gap, profile.id)
        score = (bic, _exact_ssr(x, y, state.psi))
        if best is None or score < best_score:
            best, best_score = state, score
    assert best is not None

    if not best.converged:
        logger.warning(
            "Profile '%s': automatic fit did not converge within %d iterations",
            profile.id,
            config.max_iterations,
        )
    return _build_fit(x, y, best.psi, best.iterations, best.converged, profile.id)


def _hinge_ssr(x: FloatArray, y: FloatArray, psi: float) -> float:
    return _exact_ssr(x, y, np.asarray([psi]))


def grid_search_single(profile: NormalizedProfile) -> tuple[float, float]:
    """
    Exhaustive single-breakpoint search, used as a reference for :func:`fit_fixed`.

    Every interior sample ``x_2 .. x_{n-1}`` is tried with an exact two-phase
    least squares fit; each interval between neighbouring candidates is then
    searched with a bounded scalar minimization, since the optimum of a
    continuous hinge may fall between samples.

    :return: ``(psi, ssr)`` of the best single breakpoint
    """
    x, y = _arrays(profile)
    if x.shape[0] < 4:
        raise SingularDesignError("A single breakpoint needs at least 4 points.")
    grid = x[1:-1]
    best_psi, best_total = float(grid[0]), _hinge_ssr(x, y, float(grid[0]))
    for psi in grid[1:]:
        total = _hinge_ssr(x, y, float(psi))
        if total < best_total:
            best_psi, best_total = float(psi), total
    for left, right in zip(grid[:-1], grid[1:]):
        result = minimize_scalar(
            lambda p: _hinge_ssr(x, y, float(p)),
            bounds=(float(left), float(right)),
            method="bounded",
            options={"xatol": 1e-12},
        )
        if float(result.fun) < best_total:
            best_psi, best_total = float(result.x), float(result.fun)
    return best_psi, best_total


def fit_corpus(
    profiles: Sequence[NormalizedProfile], config: FitConfig | None = None
) -> list[SegmentedFit]:
    """Run :func:`fit_auto` on every profile, skipping singular ones with a warning."""
    config = config or FitConfig()
    fits: list[SegmentedFit] = []
    for profile in profiles:
        try:
            fits.append(fit_auto(profile, config))
        except SingularDesignError as e:
            logger.warning("Cannot fit profile '%s': %s", profile.id, e)
    logger.info("Fitted %d of %d profiles", len(fits), len(profiles))
    return fits


def is_local_minimum(
    fit: SegmentedFit, profile: NormalizedProfile, rtol: float = 1e-6
) -> bool:
    """
    Whether a single-breakpoint fit is beaten by :func:`grid_search_single`.

    Logs a warning with both residuals when it is.
    """
    if fit.n_breakpoints != 1:
        raise ValueError("Only single-breakpoint fits can be checked.")
    oracle_psi, oracle_ssr = grid_search_single(profile)
    fitted = ssr(fit, profile)
    if fitted <= oracle_ssr * (1.0 + rtol) + 1e-15:
        return False
    logger.warning(
        "Profile '%s': breakpoint %.6f is a local minimum "
        "(SSR %.6g, best %.6g at %.6f)",
        profile.id,
        float(fit.breakpoints[0]),
        fitted,
        oracle_ssr,
        oracle_psi,
    )
    return True
