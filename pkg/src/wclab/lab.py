"""Two-state rigidity experiments on periodic grids.

The central probe alternates between the pointwise two-state set
{v(x) in {lam, mu}} and the linear constraint set {A v = 0, mean fixed}.
When the state difference avoids the operator's wave cone, no nontrivial
field lies in both sets, and the iteration either stalls at a positive
objective (rigid-obstructed) or degenerates to a single state
(rigid-collapse).  Compatible differences admit exact laminates, which the
iteration finds and keeps (laminate-found).

Per-iteration trajectories are recorded on the constraint-satisfying iterate
(after projection, before the mean reset), so an exact laminate shows a zero
objective and a pure-state collapse shows a zero objective with volume
fraction 0 or 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import fields as flds
from .fields import PeriodicField, PeriodicGrid
from .operators import DifferentialOperator, MultiIndex
from .spectral import afree_project, kernel_cache, residual_negative_norm
from .wavecone import in_wave_cone

__all__ = [
    "TwoStateProblem",
    "ExperimentReport",
    "SequenceReport",
    "VanishingRhsReport",
    "CalibrationResult",
    "NumericAbortError",
    "UnsolvableForcingError",
    "two_state_objective",
    "alternating_projection_run",
    "approximate_sequence_check",
    "vanishing_rhs_experiment",
    "generate_afree_noise",
    "calibrate_thresholds",
    "reference_problems",
    "verdict_of",
]

DEFAULT_DELTA = 0.1
DEFAULT_EPS_LOW_FACTOR = 1e-4
COLLAPSE_TOL_FACTOR = 0.05

VERDICTS = ("rigid-collapse", "rigid-obstructed", "laminate-found", "inconclusive", "hypotheses-violated")


class NumericAbortError(RuntimeError):
    """An experiment produced non-finite values."""


class UnsolvableForcingError(ValueError):
    """A forcing spectrum escapes the symbol's row space at some frequency."""


@dataclass(frozen=True, eq=False)
class TwoStateProblem:
    """An operator with two target states, a mean constraint, and a grid.

    The compatibility flag (is lam - mu in the wave cone?) is computed once
    at construction; theta fixes the mean theta*lam + (1-theta)*mu so that a
    collapse to a single state is visible as a fraction migration.
    """

    op: DifferentialOperator
    lam: np.ndarray
    mu: np.ndarray
    theta: float
    grid: PeriodicGrid
    seed: int
    compatible: bool = dataclass_field(init=False)
    gap: float = dataclass_field(init=False)

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=np.float64)
        mu = np.asarray(self.mu, dtype=np.float64)
        if lam.shape != (self.op.ell,) or mu.shape != (self.op.ell,):
            raise ValueError(f"states must have {self.op.ell} channels")
        if np.array_equal(lam, mu):
            raise ValueError("states must differ")
        if not (0.0 < self.theta < 1.0):
            raise ValueError(f"theta must lie in (0,1), got {self.theta}")
        if self.grid.d != self.op.d:
            raise ValueError(f"grid dimension {self.grid.d} does not match operator dimension {self.op.d}")
        lam.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)
        member, result = in_wave_cone(self.op, lam - mu)
        object.__setattr__(self, "compatible", member)
        object.__setattr__(self, "gap", result.gap)

    @property
    def state_distance(self) -> float:
        return float(np.linalg.norm(self.lam - self.mu))

    @property
    def target_mean(self) -> np.ndarray:
        return self.theta * self.lam + (1.0 - self.theta) * self.mu

    def config_echo(self) -> dict:
        return {
            "operator": self.op.name or "custom",
            "lambda": list(map(float, self.lam)),
            "mu": list(map(float, self.mu)),
            "theta": float(self.theta),
            "N": self.grid.N,
            "d": self.grid.d,
            "seed": int(self.seed),
            "compatible": bool(self.compatible),
            "gap": float(self.gap),
        }


def verdict_of(objective_final, fraction_final, theta, eps_low, delta=DEFAULT_DELTA) -> str:
    """Map final (objective, fraction) to the dichotomy taxonomy."""
    near_theta = abs(fraction_final - theta) <= delta
    pure = fraction_final >= 1.0 - delta or fraction_final <= delta
    if objective_final <= eps_low:
        if near_theta:
            return "laminate-found"
        if pure:
            return "rigid-collapse"
        return "inconclusive"
    if near_theta:
        return "rigid-obstructed"
    return "inconclusive"


@dataclass(frozen=True)
class ExperimentReport:
    """Trajectories of one run plus the verdict and the full config echo."""

    config: dict
    seed: int
    objective: np.ndarray
    fraction: np.ndarray
    residual: np.ndarray
    dist_lambda: np.ndarray
    dist_mu: np.ndarray
    verdict: str
    eps_low: float
    delta: float
    final_field: PeriodicField | None = None

    def verdict_with(self, eps_low, delta=DEFAULT_DELTA) -> str:
        """Re-derive the verdict under different thresholds (calibration)."""
        return verdict_of(float(self.objective[-1]), float(self.fraction[-1]),
                          self.config["theta"], eps_low, delta)

    def to_csv_text(self) -> str:
        lines = ["iter,objective,fraction,residual,dist_lambda,dist_mu"]
        for t in range(len(self.objective)):
            lines.append(
                f"{t + 1},{self.objective[t]!r},{self.fraction[t]!r},"
                f"{self.residual[t]!r},{self.dist_lambda[t]!r},{self.dist_mu[t]!r}"
            )
        lines.append(f"# verdict={self.verdict} seed={self.seed} eps_low={self.eps_low!r} delta={self.delta!r}")
        return "\n".join(lines) + "\n"


def two_state_objective(field: PeriodicField, lam, mu) -> float:
    """Mean pointwise distance to the two-state set; the experiment objective."""
    return flds.dist_to_states(field, lam, mu)


def alternating_projection_run(problem: TwoStateProblem, init: PeriodicField, iterations: int,
                               *, eps_low=None, delta=DEFAULT_DELTA,
                               particular: PeriodicField | None = None,
                               keep_final=True) -> ExperimentReport:
    """Alternate pointwise snapping with the kernel projection.

    Each iteration snaps every sample to the nearer state (ties to lam),
    projects back onto the constraint set, records the trajectories on the
    projected iterate, then resets the mean to theta*lam + (1-theta)*mu.
    Passing ``particular`` (a minimum-norm solution of A c = r) shifts the
    constraint set to {A v = r, mean fixed}.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if init.grid != problem.grid or init.channels != problem.op.ell:
        raise ValueError("initial field does not match the problem grid/channels")
    if eps_low is None:
        eps_low = DEFAULT_EPS_LOW_FACTOR * problem.state_distance

    lam, mu = problem.lam, problem.mu
    target_mean = problem.target_mean
    op = problem.op

    objective = np.empty(iterations)
    fraction = np.empty(iterations)
    residual = np.empty(iterations)
    dist_lambda = np.empty(iterations)
    dist_mu = np.empty(iterations)

    v = init
    projected = init
    for t in range(iterations):
        snapped = flds.snap_to_states(v, lam, mu)
        if particular is None:
            projected = afree_project(op, snapped)
        else:
            projected = particular + afree_project(op, snapped - particular)
        if not np.all(np.isfinite(projected.values)):
            raise NumericAbortError(f"non-finite field values at iteration {t + 1}")
        objective[t] = flds.dist_to_states(projected, lam, mu)
        fraction[t] = flds.state_fraction(projected, lam, mu)
        residual[t] = residual_negative_norm(op, projected)
        dist_lambda[t] = flds.l1_norm(projected.shift(-lam))
        dist_mu[t] = flds.l1_norm(projected.shift(-mu))
        v = projected.shift(target_mean - projected.mean())

    verdict = verdict_of(float(objective[-1]), float(fraction[-1]), problem.theta, eps_low, delta)
    return ExperimentReport(
        config=problem.config_echo(),
        seed=problem.seed,
        objective=objective,
        fraction=fraction,
        residual=residual,
        dist_lambda=dist_lambda,
        dist_mu=dist_mu,
        verdict=verdict,
        eps_low=float(eps_low),
        delta=float(delta),
        final_field=projected if keep_final else None,
    )


# ---------------------------------------------------------------------------
# supplied-sequence checks


@dataclass(frozen=True)
class SequenceReport:
    """Hypothesis checks and limit diagnostics for a supplied field sequence."""

    config: dict
    l1_norms: np.ndarray
    residuals: np.ndarray
    dist_states: np.ndarray
    dist_lambda: np.ndarray
    dist_mu: np.ndarray
    fractions: np.ndarray
    equi_profile: np.ndarray
    equi_thresholds: np.ndarray
    l1_bounded: bool
    residual_vanishing: bool
    dist_vanishing: bool
    equiintegrable: bool
    verdict: str
    collapse_target: str | None


def _vanishing(trajectory, scale):
    """Finite-sequence proxy for 'tends to zero': the final value is tiny
    in absolute terms or has at least halved from the start."""
    first, last = float(trajectory[0]), float(trajectory[-1])
    return last <= max(1e-8 * scale, 0.5 * first)


def approximate_sequence_check(problem: TwoStateProblem, sequence, *, eps_low=None,
                               delta=DEFAULT_DELTA, equi_thresholds=None) -> SequenceReport:
    """Check a supplied sequence against the rigidity statement.

    Verifies the hypotheses (uniform L1 bound; residual exactly zero or
    vanishing; distance to the two-state set vanishing) with finite-sequence
    proxies, then classifies the limit behaviour: collapse onto one state,
    persistent laminate, obstruction, or inconclusive.
    """
    sequence = list(sequence)
    if not sequence:
        raise ValueError("empty sequence")
    for f in sequence:
        if f.grid != problem.grid or f.channels != problem.op.ell:
            raise ValueError("sequence fields must match the problem grid/channels")
    lam, mu = problem.lam, problem.mu
    if eps_low is None:
        eps_low = DEFAULT_EPS_LOW_FACTOR * problem.state_distance

    l1_norms = np.array([flds.l1_norm(f) for f in sequence])
    residuals = np.array([residual_negative_norm(problem.op, f) for f in sequence])
    dist_states = np.array([flds.dist_to_states(f, lam, mu) for f in sequence])
    dist_lambda = np.array([flds.l1_norm(f.shift(-lam)) for f in sequence])
    dist_mu = np.array([flds.l1_norm(f.shift(-mu)) for f in sequence])
    fractions = np.array([flds.state_fraction(f, lam, mu) for f in sequence])

    state_scale = max(float(np.linalg.norm(lam)), float(np.linalg.norm(mu)), 1e-300)
    if equi_thresholds is None:
        t0 = 2.0 * state_scale
        equi_thresholds = np.array([t0, 2 * t0, 4 * t0, 8 * t0])
    else:
        equi_thresholds = np.asarray(equi_thresholds, dtype=np.float64)
    equi_profile = flds.equiintegrability_profile(sequence, equi_thresholds)

    scale = max(float(l1_norms.max()), 1e-300)
    l1_bounded = float(l1_norms.max()) <= 10.0 * float(l1_norms[0]) + 1e-12
    residual_vanishing = _vanishing(residuals, scale)
    dist_vanishing = _vanishing(dist_states, scale)
    equiintegrable = float(equi_profile[:, -1].max()) <= 1e-12 * max(1.0, scale)

    collapse_tol = COLLAPSE_TOL_FACTOR * problem.state_distance
    min_pure = np.minimum(dist_lambda, dist_mu)
    collapse_target = None

    if not (l1_bounded and residual_vanishing):
        verdict = "hypotheses-violated"
    elif dist_vanishing:
        if float(min_pure[-1]) <= collapse_tol:
            verdict = "rigid-collapse"
            collapse_target = "lambda" if dist_lambda[-1] <= dist_mu[-1] else "mu"
        elif float(min_pure[-1]) >= 0.5 * float(min_pure[0]):
            verdict = "laminate-found"
        else:
            verdict = "inconclusive"
    else:
        if float(dist_states[-1]) > eps_low and abs(float(fractions[-1]) - problem.theta) <= delta:
            verdict = "rigid-obstructed"
        else:
            verdict = "inconclusive"

    return SequenceReport(
        config=problem.config_echo(),
        l1_norms=l1_norms,
        residuals=residuals,
        dist_states=dist_states,
        dist_lambda=dist_lambda,
        dist_mu=dist_mu,
        fractions=fractions,
        equi_profile=equi_profile,
        equi_thresholds=equi_thresholds,
        l1_bounded=l1_bounded,
        residual_vanishing=residual_vanishing,
        dist_vanishing=dist_vanishing,
        equiintegrable=equiintegrable,
        verdict=verdict,
        collapse_target=collapse_target,
    )


# ---------------------------------------------------------------------------
# vanishing right-hand sides

_PINV_CACHE: dict[tuple, np.ndarray] = {}


def _symbol_pinv(op, grid):
    key = (op.cache_key, grid.d, grid.N)
    hit = _PINV_CACHE.get(key)
    if hit is None:
        cache = kernel_cache(op, grid)
        hit = np.linalg.pinv(cache.symbol)
        hit.setflags(write=False)
        _PINV_CACHE[key] = hit
    return hit


def forcing_spectrum(op: DifferentialOperator, forcing: dict) -> np.ndarray:
    """Spectrum of r = sum_beta d^beta f_beta for n-channel fields f_beta."""
    if not forcing:
        raise ValueError("empty forcing map")
    grid = None
    total = None
    for beta, f_beta in forcing.items():
        if not isinstance(beta, MultiIndex):
            beta = MultiIndex(tuple(beta))
        if beta.order != op.k:
            raise ValueError(f"forcing multi-index {beta} has order {beta.order}, expected {op.k}")
        if f_beta.channels != op.n:
            raise ValueError(f"forcing fields need {op.n} channels, got {f_beta.channels}")
        grid = grid or f_beta.grid
        if f_beta.grid != grid:
            raise ValueError("forcing fields live on different grids")
        freqs = grid.frequencies().astype(np.float64)
        mono = np.prod(freqs ** np.array(beta.entries), axis=-1)
        term = ((2j * np.pi) ** op.k) * mono[..., None] * f_beta.spectrum
        total = term if total is None else total + term
    return total


def minimum_norm_solution(op: DifferentialOperator, grid: PeriodicGrid, rhs_spectrum,
                          rel_tol=1e-8) -> PeriodicField:
    """Per-frequency minimum-norm c with S(m) hat c(m) = rhs(m).

    Raises UnsolvableForcingError when the right-hand side escapes the
    symbol's row space anywhere instead of silently projecting it.
    """
    pinv = _symbol_pinv(op, grid)
    cache = kernel_cache(op, grid)
    sol = np.einsum("...en,...n->...e", pinv, rhs_spectrum)
    back = np.einsum("...ne,...e->...n", cache.symbol, sol)
    defect = np.linalg.norm((back - rhs_spectrum).reshape(-1, op.n), axis=-1)
    size = np.linalg.norm(np.asarray(rhs_spectrum).reshape(-1, op.n), axis=-1)
    bad = defect > rel_tol * np.maximum(size, 1e-300)
    if np.any(bad):
        flat_freqs = grid.frequencies().reshape(-1, grid.d)
        examples = [tuple(int(x) for x in flat_freqs[i]) for i in np.nonzero(bad)[0][:5]]
        raise UnsolvableForcingError(
            f"forcing is outside the symbol row space at {int(bad.sum())} frequencies, e.g. {examples}"
        )
    return PeriodicField.from_spectrum(grid, sol)


@dataclass(frozen=True)
class VanishingRhsReport:
    """Forced-constraint experiment: per-step runs plus the sequence check."""

    runs: tuple
    sequence: SequenceReport
    forcing_l1: np.ndarray
    forcing_vanishing: bool
    verdict: str


def vanishing_rhs_experiment(problem: TwoStateProblem, forcings, *, iterations=200,
                             amplitude=None, eps_low=None, delta=DEFAULT_DELTA) -> VanishingRhsReport:
    """Probe the rigidity statement under forced constraints A v_j = r_j.

    Each forcing is a map beta -> n-channel field with |beta| = k; the
    corresponding r_j gets a per-frequency minimum-norm solution c_j, the
    alternating projection runs against the shifted constraint set, and the
    final fields are fed to the sequence check.  Forcings whose L1 size does
    not vanish make the whole experiment hypotheses-violated.
    """
    forcings = list(forcings)
    if not forcings:
        raise ValueError("empty forcing sequence")
    if amplitude is None:
        amplitude = 0.5 * problem.state_distance

    runs = []
    finals = []
    forcing_l1 = []
    for j, forcing in enumerate(forcings):
        if forcing:
            rhs = forcing_spectrum(problem.op, forcing)
            particular = minimum_norm_solution(problem.op, problem.grid, rhs)
            forcing_l1.append(max(flds.l1_norm(f) for f in forcing.values()))
        else:
            particular = None
            forcing_l1.append(0.0)
        init = generate_afree_noise(problem, amplitude, seed=problem.seed + 1000 + j)
        if particular is not None:
            init = init + particular
        report = alternating_projection_run(problem, init, iterations,
                                            eps_low=eps_low, delta=delta, particular=particular)
        runs.append(report)
        finals.append(report.final_field)

    sequence = approximate_sequence_check(problem, finals, eps_low=eps_low, delta=delta)
    forcing_l1 = np.array(forcing_l1)
    forcing_vanishing = _vanishing(forcing_l1, max(float(forcing_l1.max()), 1e-300)) if forcing_l1.max() > 0 else True
    verdict = sequence.verdict if forcing_vanishing else "hypotheses-violated"
    return VanishingRhsReport(
        runs=tuple(runs),
        sequence=sequence,
        forcing_l1=forcing_l1,
        forcing_vanishing=forcing_vanishing,
        verdict=verdict,
    )


# ---------------------------------------------------------------------------
# initial data and calibration


def generate_afree_noise(problem: TwoStateProblem, amplitude, seed) -> PeriodicField:
    """Seeded Gaussian noise, projected onto the constraint set, with the
    fluctuation rescaled to the requested L2 size and the mean pinned to
    theta*lam + (1-theta)*mu.  Bit-reproducible for a fixed seed."""
    if amplitude < 0:
        raise ValueError(f"amplitude must be >= 0, got {amplitude}")
    mean = problem.target_mean
    if amplitude == 0:
        return PeriodicField.constant(problem.grid, mean)
    rng = np.random.default_rng(int(seed))
    raw = rng.standard_normal(problem.grid.shape + (problem.op.ell,))
    projected = afree_project(problem.op, PeriodicField(problem.grid, raw))
    fluct = projected.shift(-projected.mean())
    size = flds.l2_norm(fluct)
    if size < 1e-300:
        return PeriodicField.constant(problem.grid, mean)
    return (float(amplitude) / size) * fluct + PeriodicField.constant(problem.grid, mean)


def reference_problems(N=63, seed=0):
    """The calibration pair: compatible curl reference (rank-one difference)
    and incompatible div reference (difference 2*I)."""
    from .operators import catalog

    grid = PeriodicGrid(2, N)
    curl = catalog("curl", m=2, d=2)
    lam_c = np.array([1.0, 0.0, 0.0, 0.0])  # e1 (x) e1, row-major
    mu_c = np.zeros(4)
    compatible = TwoStateProblem(curl, lam_c, mu_c, 0.5, grid, seed)

    div = catalog("div", m=2, d=2)
    lam_i = np.array([1.0, 0.0, 0.0, 1.0])  # identity
    mu_i = -lam_i
    incompatible = TwoStateProblem(div, lam_i, mu_i, 0.5, grid, seed)
    return compatible, incompatible


@dataclass(frozen=True)
class CalibrationResult:
    eps_low: float
    delta: float
    compatible_reports: tuple
    incompatible_reports: tuple
    separation: float

    def verdicts(self):
        compat = [r.verdict_with(self.eps_low, self.delta) for r in self.compatible_reports]
        incompat = [r.verdict_with(self.eps_low, self.delta) for r in self.incompatible_reports]
        return compat, incompat


def calibrate_thresholds(N=63, iterations=500, seeds=tuple(range(10)), amplitude=None) -> CalibrationResult:
    """Empirical dichotomy thresholds from the two reference problems.

    eps_low is 10x the worst final objective of the compatible family; the
    incompatible family must clear it by at least a factor 100, otherwise
    the calibration itself fails loudly.
    """
    compat_reports = []
    incompat_reports = []
    for seed in seeds:
        compatible, incompatible = reference_problems(N=N, seed=int(seed))
        for problem, bucket in ((compatible, compat_reports), (incompatible, incompat_reports)):
            amp = 0.5 * problem.state_distance if amplitude is None else amplitude
            init = generate_afree_noise(problem, amp, seed=problem.seed)
            bucket.append(alternating_projection_run(problem, init, iterations))

    compat_final = max(float(r.objective[-1]) for r in compat_reports)
    incompat_final = min(float(r.objective[-1]) for r in incompat_reports)
    eps_low = 10.0 * max(compat_final, 1e-300)
    separation = incompat_final / eps_low
    if separation < 100.0:
        raise RuntimeError(
            f"calibration failed: incompatible floor {incompat_final:.3e} clears eps_low {eps_low:.3e} "
            f"only by {separation:.1f}x (need >= 100x)"
        )
    return CalibrationResult(
        eps_low=eps_low,
        delta=DEFAULT_DELTA,
        compatible_reports=tuple(compat_reports),
        incompatible_reports=tuple(incompat_reports),
        separation=separation,
    )
