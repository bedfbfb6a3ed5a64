"""Periodic grids, multi-channel fields, and the norms used by the rigidity
experiments.

The domain is the flat torus [0,1)^d sampled on N points per axis, N odd.
This replaces the bounded domain of the underlying theory: constant
coefficients make the spectral calculus exact there, and the dichotomy being
probed concerns volume averages, which the torus carries faithfully.  N odd
removes the Nyquist frequency so every lattice frequency m has a partner -m
and real fields have exactly Hermitian spectra.

All integrals are means over samples (the torus has measure one), so numbers
are comparable across resolutions.  Pointwise vector norms are Euclidean
across channels.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PeriodicGrid",
    "PeriodicField",
    "laminate_field",
    "pointwise_norm",
    "l1_norm",
    "l2_norm",
    "linf_norm",
    "dist_to_states",
    "state_fraction",
    "snap_to_states",
    "weak_l1_quasinorm",
    "sobolev_norm",
    "equiintegrability_profile",
    "convergence_in_measure_metric",
    "write_field",
    "read_field",
    "field_to_csv",
]

_FREQ_CACHE: dict[tuple[int, int], np.ndarray] = {}

DUMP_MAGIC = b"WCLF"
DUMP_VERSION = 1


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid on the torus [0,1)^d with an odd number of samples per axis."""

    d: int
    N: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if self.N < 3 or self.N % 2 == 0:
            raise ValueError(f"N must be odd and >= 3, got {self.N}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def size(self) -> int:
        return self.N ** self.d

    @property
    def spacing(self) -> float:
        return 1.0 / self.N

    def frequencies(self) -> np.ndarray:
        """Integer frequency lattice in FFT order, shape (*shape, d).

        Entries range over -(N-1)/2 .. (N-1)/2 per axis.
        """
        key = (self.d, self.N)
        hit = _FREQ_CACHE.get(key)
        if hit is None:
            one = np.rint(np.fft.fftfreq(self.N) * self.N).astype(np.int64)
            mesh = np.meshgrid(*([one] * self.d), indexing="ij")
            hit = np.stack(mesh, axis=-1)
            hit.setflags(write=False)
            _FREQ_CACHE[key] = hit
        return hit

    def frequency_sq(self) -> np.ndarray:
        return np.sum(self.frequencies().astype(np.float64) ** 2, axis=-1)

    def coordinates(self) -> np.ndarray:
        """Sample coordinates, shape (*shape, d), values j/N."""
        idx = np.indices(self.shape).astype(np.float64) / self.N
        return np.moveaxis(idx, 0, -1)


class PeriodicField:
    """Real ell-channel samples on a PeriodicGrid with lazy spectral access.

    Values are stored read-only: fields are value objects, and every
    operation returns a new field, which keeps the cached spectrum valid
    and makes sharing across threads safe.

    The spectrum convention matches hat f(m) = integral of f e^{-2 pi i m x}:
    coefficients are the forward FFT divided by the number of samples, so a
    constant field c has spectrum c at m = 0.
    """

    __slots__ = ("grid", "values", "_spectrum")

    def __init__(self, grid: PeriodicGrid, values, _spectrum=None):
        values = np.asarray(values, dtype=np.float64)
        if values.shape[:-1] != grid.shape or values.ndim != grid.d + 1:
            raise ValueError(f"values shape {values.shape} does not match grid {grid.shape} + (channels,)")
        if not values.flags.owndata or values.flags.writeable:
            values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_spectrum", _spectrum)

    def __setattr__(self, *_):
        raise AttributeError("PeriodicField is immutable; build a new field instead")

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    @classmethod
    def zeros(cls, grid, channels):
        return cls(grid, np.zeros(grid.shape + (int(channels),)))

    @classmethod
    def constant(cls, grid, vector):
        vector = np.asarray(vector, dtype=np.float64)
        return cls(grid, np.broadcast_to(vector, grid.shape + vector.shape).copy())

    @classmethod
    def from_spectrum(cls, grid, spectrum, imag_tol=1e-8, check_scale=0.0):
        """Inverse transform; raises if the result is not real to imag_tol.

        The imaginary residue is judged against the larger of the output
        magnitude and ``check_scale``; callers whose output may be a genuine
        zero (an operator annihilating its input) pass the input scale so
        roundoff noise is not mistaken for a broken spectrum.
        """
        spectrum = np.asarray(spectrum, dtype=np.complex128)
        axes = tuple(range(grid.d))
        values = np.fft.ifftn(spectrum, axes=axes) * grid.size
        scale = max(float(np.max(np.abs(values.real))), float(check_scale), 1e-300)
        worst = float(np.max(np.abs(values.imag)))
        if worst > imag_tol * scale:
            raise ValueError(f"spectrum is not conjugate symmetric: imaginary residue {worst:.3e} vs scale {scale:.3e}")
        field = cls(grid, np.ascontiguousarray(values.real))
        object.__setattr__(field, "_spectrum", spectrum.copy())
        return field

    @property
    def spectrum(self) -> np.ndarray:
        """Normalized DFT coefficients, shape (*grid.shape, channels)."""
        if self._spectrum is None:
            axes = tuple(range(self.grid.d))
            spec = np.fft.fftn(self.values, axes=axes) / self.grid.size
            spec.setflags(write=False)
            object.__setattr__(self, "_spectrum", spec)
        return self._spectrum

    def mean(self) -> np.ndarray:
        axes = tuple(range(self.grid.d))
        return self.values.mean(axis=axes)

    def with_values(self, values):
        return PeriodicField(self.grid, values)

    def shift(self, vector):
        """Add a constant channel vector."""
        return PeriodicField(self.grid, self.values + np.asarray(vector, dtype=np.float64))

    def __add__(self, other):
        self._check_same(other)
        return PeriodicField(self.grid, self.values + other.values)

    def __sub__(self, other):
        self._check_same(other)
        return PeriodicField(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return PeriodicField(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def _check_same(self, other):
        if not isinstance(other, PeriodicField):
            raise TypeError("expected a PeriodicField")
        if other.grid != self.grid or other.channels != self.channels:
            raise ValueError("fields live on different grids or channel counts")

    def __repr__(self):
        return f"<PeriodicField d={self.grid.d} N={self.grid.N} channels={self.channels}>"


# ---------------------------------------------------------------------------
# laminates


def laminate_field(grid, lam, mu, q, theta, period_count=1) -> PeriodicField:
    """Simple laminate oscillating between lam and mu along lattice direction q.

    The field is lam where the 1-periodic square profile of duty cycle theta,
    repeated period_count times per unit cell, is on, evaluated at q . x.  An
    integer q keeps the pattern torus-periodic.  The on-set is snapped to the
    grid toward -infinity: its length along the oscillation coordinate is
    floor(theta*N)/N, so exact two-valuedness holds sample by sample.
    """
    lam = np.asarray(lam, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if lam.shape != mu.shape or lam.ndim != 1:
        raise ValueError("states must be vectors of equal length")
    q = np.asarray(q)
    if q.shape != (grid.d,) or not np.issubdtype(q.dtype, np.integer):
        q = np.asarray(q, dtype=np.float64)
        qi = np.rint(q).astype(np.int64)
        if q.shape != (grid.d,) or np.any(qi != q):
            raise ValueError(f"q must be an integer vector of length {grid.d}")
        q = qi
    q = q.astype(np.int64)
    if np.all(q == 0):
        raise ValueError("q must be nonzero")
    if not (0.0 < theta < 1.0):
        raise ValueError(f"theta must lie in (0,1), got {theta}")
    period_count = int(period_count)
    if period_count < 1:
        raise ValueError(f"period_count must be >= 1, got {period_count}")

    idx = np.indices(grid.shape)
    phase = np.zeros(grid.shape, dtype=np.int64)
    for axis in range(grid.d):
        phase += q[axis] * idx[axis]
    residue = (period_count * phase) % grid.N
    on = residue < int(math.floor(theta * grid.N))

    values = np.empty(grid.shape + (lam.size,))
    values[on] = lam
    values[~on] = mu
    return PeriodicField(grid, values)


# ---------------------------------------------------------------------------
# norms and diagnostics


def pointwise_norm(field: PeriodicField) -> np.ndarray:
    """Euclidean norm across channels at every sample, shape grid.shape."""
    return np.linalg.norm(field.values, axis=-1)


def l1_norm(field: PeriodicField) -> float:
    return float(pointwise_norm(field).mean())


def l2_norm(field: PeriodicField) -> float:
    return float(np.sqrt(np.mean(pointwise_norm(field) ** 2)))


def linf_norm(field: PeriodicField) -> float:
    return float(pointwise_norm(field).max())


def _dist_field(field, lam, mu):
    lam = np.asarray(lam, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    dl = np.linalg.norm(field.values - lam, axis=-1)
    dm = np.linalg.norm(field.values - mu, axis=-1)
    return dl, dm


def dist_to_states(field: PeriodicField, lam, mu) -> float:
    """Mean over samples of min(|v - lam|, |v - mu|)."""
    dl, dm = _dist_field(field, lam, mu)
    return float(np.minimum(dl, dm).mean())


def state_fraction(field: PeriodicField, lam, mu) -> float:
    """Fraction of samples at least as close to lam as to mu (ties count lam)."""
    dl, dm = _dist_field(field, lam, mu)
    return float(np.mean(dl <= dm))


def snap_to_states(field: PeriodicField, lam, mu) -> PeriodicField:
    """Replace every sample by the nearer of lam, mu; ties go to lam."""
    dl, dm = _dist_field(field, lam, mu)
    take_lam = dl <= dm
    values = np.empty_like(field.values)
    values[take_lam] = np.asarray(lam, dtype=np.float64)
    values[~take_lam] = np.asarray(mu, dtype=np.float64)
    return PeriodicField(field.grid, values)


def weak_l1_quasinorm(field: PeriodicField) -> float:
    """sup_t t * fraction{|v| > t}, the sup attained at sample values.

    With the pointwise norms sorted ascending, this is
    max_i sorted[i] * (count - i) / count.
    """
    r = np.sort(pointwise_norm(field), axis=None)
    count = r.size
    return float(np.max(r * (np.arange(count, 0, -1) / count)))


def sobolev_norm(field: PeriodicField, s: float) -> float:
    """Discrete H^s norm: (sum_m (1 + 4 pi^2 |m|^2)^s |hat v(m)|^2)^(1/2).

    At s = 0 this is the discrete L2 norm (Plancherel).
    """
    weights = (1.0 + 4.0 * np.pi ** 2 * field.grid.frequency_sq()) ** s
    power = np.sum(np.abs(field.spectrum) ** 2, axis=-1)
    return float(np.sqrt(np.sum(weights * power)))


def equiintegrability_profile(fields, thresholds) -> np.ndarray:
    """Matrix of tail masses: entry (j, t) = mean of |v_j| over {|v_j| > t}.

    Non-increasing along each row; a family is equi-integrable when the
    largest-threshold column can be driven to zero uniformly in j.
    """
    fields = list(fields)
    if not fields:
        raise ValueError("empty field sequence")
    grid = fields[0].grid
    channels = fields[0].channels
    for f in fields[1:]:
        if f.grid != grid or f.channels != channels:
            raise ValueError("fields must share one grid and channel count")
    thresholds = np.asarray(thresholds, dtype=np.float64)
    out = np.empty((len(fields), thresholds.size))
    for j, f in enumerate(fields):
        r = pointwise_norm(f)
        for t_idx, t in enumerate(thresholds):
            out[j, t_idx] = float(np.mean(np.where(r > t, r, 0.0)))
    return out


def convergence_in_measure_metric(field: PeriodicField) -> float:
    """Mean of min(|v|, 1); tends to zero exactly for convergence in measure."""
    return float(np.minimum(pointwise_norm(field), 1.0).mean())


# ---------------------------------------------------------------------------
# field dumps

_HEADER = struct.Struct("<4sHIII")


def write_field(field: PeriodicField, path) -> None:
    """Binary dump: magic WCLF, version u16, d, N, channels u32 LE, then
    row-major float64 LE samples."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DUMP_MAGIC, DUMP_VERSION, field.grid.d, field.grid.N, field.channels))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C"))


def read_field(path) -> PeriodicField:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, d, n_axis, channels = _HEADER.unpack(head)
        if magic != DUMP_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != DUMP_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        grid = PeriodicGrid(d=int(d), N=int(n_axis))
        count = grid.size * int(channels)
        raw = fh.read(count * 8)
        if len(raw) != count * 8:
            raise ValueError(f"{path}: truncated payload")
        values = np.frombuffer(raw, dtype="<f8").reshape(grid.shape + (int(channels),))
        return PeriodicField(grid, values.astype(np.float64))


def field_to_csv(field: PeriodicField, fh, max_size=1_000_000) -> None:
    """CSV export for small grids: index coordinates then channel values."""
    if field.grid.size > max_size:
        raise ValueError(f"grid too large for CSV export ({field.grid.size} samples)")
    close = False
    if isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__"):
        fh = open(fh, "w", newline="\n")
        close = True
    try:
        header = [f"i{a}" for a in range(field.grid.d)] + [f"c{c}" for c in range(field.channels)]
        fh.write(",".join(header) + "\n")
        flat = field.values.reshape(-1, field.channels)
        for pos, row in enumerate(flat):
            coords = np.unravel_index(pos, field.grid.shape)
            cells = [str(c) for c in coords] + [repr(float(x)) for x in row]
            fh.write(",".join(cells) + "\n")
    finally:
        if close:
            fh.close()
