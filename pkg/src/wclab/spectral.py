"""Spectral action of operators on periodic fields: residuals, kernel
projection, elliptic-regularization multipliers, and the commutator with a
cutoff together with its order probe.

Everything here is per-frequency linear algebra against the full symbol
S(m) = sum_alpha (2 pi i)^|alpha| A_alpha m^alpha on the integer frequency
lattice of the grid.  A FrequencyKernelCache holds, per (operator, grid),
the symbol values and the orthogonal projections onto ker S(m); building it
(one batched SVD sweep) dominates setup cost and is reused across all fields
on that grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import PeriodicField, PeriodicGrid, l2_norm
from .operators import DifferentialOperator, MultiIndex, full_symbol_grid

__all__ = [
    "FrequencyKernelCache",
    "kernel_cache",
    "apply_operator",
    "residual_negative_norm",
    "afree_project",
    "multiplier_T",
    "multiplier_T1",
    "multiplier_T2",
    "multiplier_T3",
    "multiplier_T5",
    "multiplier_contract",
    "multiply_fields",
    "commutator",
    "commutator_order_probe",
    "ProbeResult",
]

KERNEL_RANK_TOL = 1e-10

_CACHE: dict[tuple, "FrequencyKernelCache"] = {}


class FrequencyKernelCache:
    """Per-frequency symbol values and kernel projections for one (op, grid).

    ``proj[m]`` is the orthogonal projection onto ker S(m).  Projections at
    opposite frequencies are exact conjugates (enforced, not just numerically
    true), which keeps projected real fields exactly real.  Frequencies whose
    symbol is exactly zero get the exact identity projection, so homogeneous
    operators preserve the field mean bit for bit.
    """

    __slots__ = ("op", "grid", "symbol", "proj", "rank_tol", "symbol_linf")

    def __init__(self, op: DifferentialOperator, grid: PeriodicGrid):
        if op.d != grid.d:
            raise ValueError(f"operator dimension {op.d} does not match grid dimension {grid.d}")
        self.op = op
        self.grid = grid
        self.rank_tol = KERNEL_RANK_TOL
        freqs = grid.frequencies()
        symbol = full_symbol_grid(op, freqs)
        flat = symbol.reshape(-1, op.n, op.ell)

        _, svals, vh = np.linalg.svd(flat)
        cutoff = self.rank_tol * np.maximum(svals[:, 0], 1e-300)
        keep = np.zeros((flat.shape[0], op.ell))
        keep[:, : svals.shape[1]] = svals <= cutoff[:, None]
        keep[:, svals.shape[1]:] = 1.0
        proj = np.einsum("fij,fi,fik->fjk", np.conj(vh), keep, vh)

        zero_sym = np.all(flat == 0.0, axis=(1, 2))
        proj[zero_sym] = np.eye(op.ell)

        # overwrite the non-canonical hemisphere with exact conjugates
        shape = grid.shape
        idx = np.indices(shape).reshape(grid.d, -1)
        neg = np.ravel_multi_index(tuple((-idx) % grid.N), shape)
        canonical = _lex_positive(freqs.reshape(-1, grid.d))
        proj[neg[canonical]] = np.conj(proj[canonical])

        self.symbol = symbol
        self.proj = proj.reshape(symbol.shape[:-2] + (op.ell, op.ell))
        self.symbol_linf = float(np.max(np.abs(symbol)))
        self.symbol.setflags(write=False)
        self.proj.setflags(write=False)


def _lex_positive(freqs):
    """Mask of frequencies whose first nonzero component is positive."""
    out = np.zeros(len(freqs), dtype=bool)
    undecided = np.ones(len(freqs), dtype=bool)
    for axis in range(freqs.shape[1]):
        col = freqs[:, axis]
        out |= undecided & (col > 0)
        undecided &= col == 0
    return out


def kernel_cache(op: DifferentialOperator, grid: PeriodicGrid) -> FrequencyKernelCache:
    key = (op.cache_key, grid.d, grid.N)
    hit = _CACHE.get(key)
    if hit is None:
        hit = FrequencyKernelCache(op, grid)
        _CACHE[key] = hit
    return hit



def _real_field(grid, spec, input_field, cache=None):
    # imaginary residue is roundoff relative to the input times the symbol size
    ref = float(np.max(np.abs(input_field.values)))
    if cache is not None:
        ref *= (1.0 + cache.symbol_linf) ** 2
    return PeriodicField.from_spectrum(grid, spec, check_scale=ref)


def _check_channels(op, field, expected):
    if field.channels != expected:
        raise ValueError(f"field has {field.channels} channels, operator expects {expected}")
    if field.grid.d != op.d:
        raise ValueError(f"field dimension {field.grid.d} does not match operator dimension {op.d}")


def apply_operator(op: DifferentialOperator, field: PeriodicField) -> PeriodicField:
    """Spectral action: output spectrum S(m) hat v(m), an n-channel field."""
    _check_channels(op, field, op.ell)
    cache = kernel_cache(op, field.grid)
    spec = np.einsum("...ne,...e->...n", cache.symbol, field.spectrum)
    return _real_field(field.grid, spec, field, cache)


def residual_negative_norm(op: DifferentialOperator, field: PeriodicField) -> float:
    """H^{-k} norm of the operator residual:
    (sum_m (1 + 4 pi^2 |m|^2)^{-k} |S(m) hat v(m)|^2)^(1/2)."""
    _check_channels(op, field, op.ell)
    cache = kernel_cache(op, field.grid)
    spec = np.einsum("...ne,...e->...n", cache.symbol, field.spectrum)
    weights = (1.0 + 4.0 * np.pi ** 2 * field.grid.frequency_sq()) ** (-op.k)
    return float(np.sqrt(np.sum(weights * np.sum(np.abs(spec) ** 2, axis=-1))))


def afree_project(op: DifferentialOperator, field: PeriodicField) -> PeriodicField:
    """Orthogonal projection onto the operator's kernel, frequency by
    frequency.  For homogeneous operators the mean is untouched (constants
    are in the kernel); a nonzero zero-order part constrains m = 0 too."""
    _check_channels(op, field, op.ell)
    cache = kernel_cache(op, field.grid)
    spec = np.einsum("...jk,...k->...j", cache.proj, field.spectrum)
    return _real_field(field.grid, spec, field)


def _denominator(cache, lam):
    sym_lam = np.einsum("...ne,e->...n", cache.symbol, lam)
    return 1.0 + np.sum(np.abs(sym_lam) ** 2, axis=-1), sym_lam


def multiplier_T(op: DifferentialOperator, lam, field: PeriodicField) -> PeriodicField:
    """Elliptic regularization: divide the spectrum by 1 + |S(m) lam|^2.

    Defined for every lam; it smooths by 2k orders exactly when lam sits
    outside the wave cone.
    """
    lam = _state_vector(op, lam)
    cache = kernel_cache(op, field.grid)
    denom, _ = _denominator(cache, lam)
    return _real_field(field.grid, field.spectrum / denom[..., None], field)


def multiplier_contract(op: DifferentialOperator, lam, field: PeriodicField) -> PeriodicField:
    """Scalar field with spectrum conj(S(m) lam) . hat g(m) / (1 + |S(m) lam|^2)
    for an n-channel input g."""
    lam = _state_vector(op, lam)
    _check_channels(op, field, op.n)
    cache = kernel_cache(op, field.grid)
    denom, sym_lam = _denominator(cache, lam)
    num = np.einsum("...n,...n->...", np.conj(sym_lam), field.spectrum)
    return _real_field(field.grid, (num / denom)[..., None], field, cache)


def multiplier_T1(op: DifferentialOperator, lam, field_z: PeriodicField) -> PeriodicField:
    """Scalar field with spectrum conj(S lam) . S hat z / (1 + |S lam|^2)."""
    lam = _state_vector(op, lam)
    _check_channels(op, field_z, op.ell)
    cache = kernel_cache(op, field_z.grid)
    denom, sym_lam = _denominator(cache, lam)
    az = np.einsum("...ne,...e->...n", cache.symbol, field_z.spectrum)
    num = np.einsum("...n,...n->...", np.conj(sym_lam), az)
    return _real_field(field_z.grid, (num / denom)[..., None], field_z, cache)


def multiplier_T2(op: DifferentialOperator, lam, phi: PeriodicField, field_u: PeriodicField,
                  dealias=False) -> PeriodicField:
    """Commutator term of the decomposition, realized as the composition
    contract-multiplier of [op, phi] applied to u."""
    return multiplier_contract(op, lam, commutator(op, phi, field_u, dealias=dealias))


def multiplier_T3(op: DifferentialOperator, lam, field_w: PeriodicField) -> PeriodicField:
    """multiplier_T restricted to scalar fields."""
    if field_w.channels != 1:
        raise ValueError(f"expected a scalar field, got {field_w.channels} channels")
    return multiplier_T(op, lam, field_w)


def multiplier_T5(op: DifferentialOperator, lam, beta: MultiIndex, field_f: PeriodicField) -> PeriodicField:
    """Forcing multiplier: spectrum
    (2 pi i)^k conj(Sk(m) lam) . hat f(m) m^beta / (1 + |Sk(m) lam|^2),
    with Sk the principal spectral symbol; |beta| must equal the order k.

    The forcing f carries n channels (one per equation); the contraction with
    conj(Sk lam) produces the scalar correction channel.
    """
    lam = _state_vector(op, lam)
    if not isinstance(beta, MultiIndex):
        beta = MultiIndex(tuple(beta))
    if beta.order != op.k:
        raise ValueError(f"|beta| = {beta.order} but the operator has order {op.k}")
    _check_channels(op, field_f, op.n)
    principal = op.principal_part()
    cache = kernel_cache(principal, field_f.grid)
    denom, sym_lam = _denominator(cache, lam)
    freqs = field_f.grid.frequencies().astype(np.float64)
    mono = np.prod(freqs ** np.array(beta.entries), axis=-1)
    num = np.einsum("...n,...n->...", np.conj(sym_lam), field_f.spectrum)
    scale = (2j * np.pi) ** op.k
    return _real_field(field_f.grid, (scale * mono * num / denom)[..., None], field_f, cache)


def _state_vector(op, lam):
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (op.ell,):
        raise ValueError(f"state vector has shape {lam.shape}, expected ({op.ell},)")
    return lam


# ---------------------------------------------------------------------------
# products and the commutator


def multiply_fields(phi: PeriodicField, field: PeriodicField, dealias=False) -> PeriodicField:
    """Pointwise product of a scalar field with a multi-channel field.

    Plain sample-space product by default; products of band-limited grid
    functions alias, so a 3/2 zero-padded variant is available for inputs
    whose joint bandwidth matters.
    """
    if phi.channels != 1:
        raise ValueError("phi must be a scalar field")
    if phi.grid != field.grid:
        raise ValueError("fields live on different grids")
    if not dealias:
        return PeriodicField(field.grid, phi.values * field.values)
    grid = field.grid
    big_n = _next_odd(-(-3 * grid.N // 2))
    big = PeriodicGrid(grid.d, big_n)
    phi_big = _resample(phi, big)
    f_big = _resample(field, big)
    prod_big = PeriodicField(big, phi_big.values * f_big.values)
    return _resample(prod_big, grid)


def _next_odd(n):
    return n if n % 2 == 1 else n + 1


def _resample(field: PeriodicField, new_grid: PeriodicGrid) -> PeriodicField:
    """Spectral resampling between odd grids (zero-pad or truncate)."""
    old = field.grid
    if new_grid.d != old.d:
        raise ValueError("dimension mismatch")
    spec = field.spectrum
    half = (min(old.N, new_grid.N) - 1) // 2
    freqs = np.arange(-half, half + 1)
    src = tuple(np.ix_(*([freqs % old.N] * old.d)))
    dst = tuple(np.ix_(*([freqs % new_grid.N] * old.d)))
    out = np.zeros(new_grid.shape + (field.channels,), dtype=np.complex128)
    out[dst] = spec[src]
    return _real_field(new_grid, out, field)


def commutator(op: DifferentialOperator, phi: PeriodicField, field: PeriodicField,
               dealias=False) -> PeriodicField:
    """[op, phi](f) = op(phi f) - phi op(f): products in sample space,
    derivatives in frequency space."""
    _check_channels(op, field, op.ell)
    if phi.grid != field.grid:
        raise ValueError("phi and f live on different grids")
    first = apply_operator(op, multiply_fields(phi, field, dealias=dealias))
    second = multiply_fields(phi, apply_operator(op, field), dealias=dealias)
    return first - second


@dataclass(frozen=True)
class ProbeResult:
    """Log-log slopes of the commutator and the direct operator response."""

    commutator_slope: float | None
    direct_slope: float | None
    frequencies: tuple[int, ...]
    commutator_norms: tuple[float, ...]
    direct_norms: tuple[float, ...]
    degenerate: bool


def commutator_order_probe(op: DifferentialOperator, phi: PeriodicField, q, m_list,
                           v0=None) -> ProbeResult:
    """Estimate the order of [op, phi] from oscillatory inputs.

    Feeds f_M(x) = v0 cos(2 pi M q . x) for M in m_list and regresses
    log ||[op, phi] f_M|| against log M.  The commutator of an order-k
    operator with a smooth cutoff has order k - 1, so the slope should sit
    near k - 1 while the direct response ||op f_M|| scales like M^k.

    v0 defaults to the strongest right-singular direction of the principal
    symbol at q, guaranteeing a nonzero direct response.  A (near-)constant
    phi yields a zero commutator; that case is reported as degenerate with a
    None commutator slope.
    """
    grid = phi.grid
    if phi.channels != 1:
        raise ValueError("phi must be a scalar field")
    q = np.asarray(q, dtype=np.int64)
    if q.shape != (op.d,) or np.all(q == 0):
        raise ValueError(f"q must be a nonzero integer vector of length {op.d}")
    m_list = [int(m) for m in m_list]
    if len(m_list) < 3:
        raise ValueError("need at least 3 probe frequencies")
    half = (grid.N - 1) // 2
    for m in m_list:
        if np.max(np.abs(m * q)) > half:
            raise ValueError(f"probe frequency {m}*{tuple(q)} exceeds the grid's resolvable range {half}")

    if v0 is None:
        from .operators import principal_symbol

        sym = principal_symbol(op, q.astype(np.float64))
        _, _, vh = np.linalg.svd(sym)
        v0 = vh[0]
    v0 = np.asarray(v0, dtype=np.float64)

    coords = grid.coordinates()
    phase = 2.0 * np.pi * np.tensordot(coords, q.astype(np.float64), axes=([-1], [0]))
    comm_norms = []
    direct_norms = []
    for m in m_list:
        wave = np.cos(m * phase)[..., None] * v0
        f_m = PeriodicField(grid, wave)
        comm_norms.append(l2_norm(commutator(op, phi, f_m)))
        direct_norms.append(l2_norm(apply_operator(op, f_m)))

    # the commutator counts as zero relative to the direct response scale
    ref = max(direct_norms) * max(1.0, float(np.max(np.abs(phi.values))))
    degenerate = max(comm_norms) <= 1e-10 * max(ref, 1e-300)
    comm_slope = None if degenerate else _loglog_slope(m_list, comm_norms)
    direct_slope = None if max(direct_norms) <= 1e-300 else _loglog_slope(m_list, direct_norms)
    return ProbeResult(
        commutator_slope=comm_slope,
        direct_slope=direct_slope,
        frequencies=tuple(m_list),
        commutator_norms=tuple(comm_norms),
        direct_norms=tuple(direct_norms),
        degenerate=degenerate,
    )


def _loglog_slope(xs, ys):
    lx = np.log(np.asarray(xs, dtype=np.float64))
    ly = np.log(np.asarray(ys, dtype=np.float64))
    slope, _ = np.polyfit(lx, ly, 1)
    return float(slope)
