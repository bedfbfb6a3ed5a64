"""Constant-coefficient linear differential operators and their symbols.

An operator acts on smooth maps v : R^d -> R^ell and produces n scalar
equations.  It is stored as a map from multi-indices alpha to real n x ell
coefficient matrices A_alpha; the operator order k is the largest |alpha|
carrying a nonzero matrix.

Two symbol flavours are exposed.  The *principal* symbol is the real matrix
polynomial sum_{|alpha|=k} A_alpha xi^alpha (no scalar prefactor): kernels,
and hence the wave cone, only depend on this.  The *full* symbol carries the
spectral prefactor (2*pi*i)^|alpha| per term and is what acts on discrete
Fourier coefficients.

Channel layout for matrix-valued fields is row-major throughout: an m x d
matrix field occupies channels (v_11, v_12, ..., v_1d, v_21, ...).  Symmetric
d x d fields use the upper-triangle order (S_11, S_12, S_22) in 2D and
(S_11, S_12, S_13, S_22, S_23, S_33) in 3D.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from types import MappingProxyType

import numpy as np

__all__ = [
    "MultiIndex",
    "DifferentialOperator",
    "OperatorSpecError",
    "parse_operator",
    "render_operator",
    "catalog",
    "principal_symbol",
    "full_symbol",
    "principal_symbol_grid",
    "full_symbol_grid",
]


class OperatorSpecError(ValueError):
    """Malformed operator spec text."""


@dataclass(frozen=True, order=True)
class MultiIndex:
    """A d-tuple of non-negative integers; ``order`` is the sum of entries."""

    entries: tuple[int, ...]

    def __post_init__(self):
        if len(self.entries) == 0:
            raise ValueError("multi-index needs at least one entry")
        clean = []
        for e in self.entries:
            ie = int(e)
            if ie != e or ie < 0:
                raise ValueError(f"multi-index entries must be non-negative integers, got {self.entries}")
            clean.append(ie)
        object.__setattr__(self, "entries", tuple(clean))

    @property
    def order(self) -> int:
        return sum(self.entries)

    @property
    def d(self) -> int:
        return len(self.entries)

    def __str__(self):
        return ",".join(str(e) for e in self.entries)


def _unit_alpha(d, axis, power=1):
    e = [0] * d
    e[axis] = power
    return MultiIndex(tuple(e))


class DifferentialOperator:
    """Immutable constant-coefficient operator sum_alpha A_alpha d^alpha.

    Parameters
    ----------
    d, ell, n : space dimension, field channels, number of equations.
    terms : mapping from MultiIndex (length d) to (n, ell) real matrices.
         Exact-zero matrices are dropped; at least one nonzero term of the
         top order must remain.
    name : optional label used in reports.
    """

    __slots__ = ("d", "ell", "n", "k", "terms", "name", "_key", "_stacked_cache")

    def __init__(self, d, ell, n, terms, name=None):
        d, ell, n = int(d), int(ell), int(n)
        if d < 1 or ell < 1 or n < 1:
            raise ValueError(f"dimensions must be positive, got d={d} ell={ell} n={n}")
        clean = {}
        for alpha, mat in terms.items():
            if not isinstance(alpha, MultiIndex):
                alpha = MultiIndex(tuple(alpha))
            if alpha.d != d:
                raise ValueError(f"multi-index {alpha} has {alpha.d} entries, expected {d}")
            arr = np.array(mat, dtype=np.float64)
            if arr.shape != (n, ell):
                raise ValueError(f"coefficient matrix for alpha={alpha} has shape {arr.shape}, expected {(n, ell)}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite coefficient matrix for alpha={alpha}")
            if np.any(arr != 0.0):
                arr.setflags(write=False)
                clean[alpha] = arr
        if not clean:
            raise ValueError("operator has no nonzero terms")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "ell", ell)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "k", max(a.order for a in clean))
        object.__setattr__(self, "terms", MappingProxyType(dict(sorted(clean.items()))))
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "_key", None)
        object.__setattr__(self, "_stacked_cache", {})

    def __setattr__(self, *_):
        raise AttributeError("DifferentialOperator is immutable")

    @property
    def cache_key(self):
        """Hashable identity of the coefficients (name excluded)."""
        if self._key is None:
            items = tuple((a.entries, m.tobytes()) for a, m in self.terms.items())
            object.__setattr__(self, "_key", (self.d, self.ell, self.n, items))
        return self._key

    def __eq__(self, other):
        return isinstance(other, DifferentialOperator) and self.cache_key == other.cache_key

    def __hash__(self):
        return hash(self.cache_key)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<DifferentialOperator{label} d={self.d} ell={self.ell} n={self.n} k={self.k} terms={len(self.terms)}>"

    def homogeneous(self) -> bool:
        return all(a.order == self.k for a in self.terms)

    def principal_part(self) -> "DifferentialOperator":
        """The order-k part; ``self`` if already homogeneous."""
        if self.homogeneous():
            return self
        top = {a: m for a, m in self.terms.items() if a.order == self.k}
        return DifferentialOperator(self.d, self.ell, self.n, top, name=self.name)

    def lower_part(self):
        """Terms of order < k, or None if homogeneous."""
        low = {a: m for a, m in self.terms.items() if a.order < self.k}
        if not low:
            return None
        return DifferentialOperator(self.d, self.ell, self.n, low, name=self.name)

    def stacked_terms(self, principal_only=False):
        """Terms as (alphas (T, d) int array, matrices (T, n, ell) array)."""
        key = bool(principal_only)
        hit = self._stacked_cache.get(key)
        if hit is None:
            items = [(a, m) for a, m in self.terms.items() if not principal_only or a.order == self.k]
            alphas = np.array([a.entries for a, _ in items], dtype=np.int64)
            mats = np.stack([m for _, m in items])
            alphas.setflags(write=False)
            mats.setflags(write=False)
            hit = (alphas, mats)
            self._stacked_cache[key] = hit
        return hit


def principal_symbol(op: DifferentialOperator, xi) -> np.ndarray:
    """Real n x ell matrix sum_{|alpha|=k} A_alpha xi^alpha."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (op.d,):
        raise ValueError(f"direction has shape {xi.shape}, expected ({op.d},)")
    return principal_symbol_grid(op, xi[None, :])[0]


def full_symbol(op: DifferentialOperator, m) -> np.ndarray:
    """Complex n x ell matrix sum_alpha (2*pi*i)^|alpha| A_alpha m^alpha."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (op.d,):
        raise ValueError(f"frequency has shape {m.shape}, expected ({op.d},)")
    return full_symbol_grid(op, m[None, :])[0]


def principal_symbol_grid(op: DifferentialOperator, xis) -> np.ndarray:
    """Principal symbol at many directions; xis (..., d) -> (..., n, ell)."""
    xis = np.asarray(xis, dtype=np.float64)
    alphas, mats = op.stacked_terms(principal_only=True)
    mono = np.prod(xis[..., None, :] ** alphas, axis=-1)  # (..., T)
    return np.einsum("...t,tne->...ne", mono, mats)


def full_symbol_grid(op: DifferentialOperator, ms) -> np.ndarray:
    """Full symbol at many frequencies; ms (..., d) -> (..., n, ell) complex.

    The per-term factor (2*pi*i)^|alpha| makes the grid exactly conjugate
    symmetric: full_symbol(-m) == conj(full_symbol(m)) bit for bit, because
    negating m flips each monomial's sign exactly when |alpha| is odd.
    """
    ms = np.asarray(ms, dtype=np.float64)
    alphas, mats = op.stacked_terms(principal_only=False)
    orders = alphas.sum(axis=1)
    factors = (2j * np.pi) ** orders  # (T,)
    mono = np.prod(ms[..., None, :] ** alphas, axis=-1)  # (..., T)
    return np.einsum("...t,t,tne->...ne", mono.astype(np.complex128), factors, mats)


# ---------------------------------------------------------------------------
# catalog


def catalog(name, m=None, d=None) -> DifferentialOperator:
    """Built-in operators: 'curl', 'div' (on m x d matrix fields) and
    'curlcurl' (on symmetric d x d fields, d in {2, 3})."""
    if name == "curl":
        return _catalog_curl(2 if m is None else int(m), 2 if d is None else int(d))
    if name == "div":
        return _catalog_div(2 if m is None else int(m), 2 if d is None else int(d))
    if name == "curlcurl":
        if m is not None:
            raise ValueError("curlcurl takes only the space dimension d")
        return _catalog_curlcurl(2 if d is None else int(d))
    raise ValueError(f"unknown catalog operator {name!r} (expected curl, div, or curlcurl)")


def _catalog_curl(m, d):
    if m < 1 or d < 2:
        raise ValueError(f"curl needs m >= 1 and d >= 2, got m={m} d={d}")
    ell = m * d
    pairs = [(a, b) for a in range(d) for b in range(a + 1, d)]
    n = m * len(pairs)
    terms = {_unit_alpha(d, axis): np.zeros((n, ell)) for axis in range(d)}
    row = 0
    for i in range(m):
        for a, b in pairs:
            # row: d_b v_{i,a} - d_a v_{i,b}
            terms[_unit_alpha(d, b)][row, i * d + a] += 1.0
            terms[_unit_alpha(d, a)][row, i * d + b] -= 1.0
            row += 1
    return DifferentialOperator(d, ell, n, terms, name=f"curl:{m}x{d}")


def _catalog_div(m, d):
    if m < 1 or d < 1:
        raise ValueError(f"div needs m >= 1 and d >= 1, got m={m} d={d}")
    ell = m * d
    terms = {_unit_alpha(d, axis): np.zeros((m, ell)) for axis in range(d)}
    for i in range(m):
        for j in range(d):
            terms[_unit_alpha(d, j)][i, i * d + j] = 1.0
    return DifferentialOperator(d, ell, m, terms, name=f"div:{m}x{d}")


def sym_channel_index(d):
    """Channel position of each (k, n), k <= n, in upper-triangle order."""
    idx = {}
    c = 0
    for k in range(d):
        for n in range(k, d):
            idx[(k, n)] = c
            c += 1
    return idx


def _catalog_curlcurl(d):
    if d == 2:
        # single equation d22 S11 - 2 d12 S12 + d11 S22 on channels (S11, S12, S22)
        terms = {
            MultiIndex((0, 2)): np.array([[1.0, 0.0, 0.0]]),
            MultiIndex((1, 1)): np.array([[0.0, -2.0, 0.0]]),
            MultiIndex((2, 0)): np.array([[0.0, 0.0, 1.0]]),
        }
        return DifferentialOperator(2, 3, 1, terms, name="curlcurl:2")
    if d == 3:
        eps = np.zeros((3, 3, 3))
        for i, j, k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
            eps[i, j, k] = 1.0
            eps[i, k, j] = -1.0
        chan = sym_channel_index(3)
        ell = n_rows = 6
        terms = {}
        row = 0
        for i in range(3):
            for l in range(i, 3):
                # (inc S)_{il} = eps_{ijk} eps_{lmn} d_j d_m S_{kn}
                for j in range(3):
                    for k in range(3):
                        for mm in range(3):
                            for nn in range(3):
                                c = eps[i, j, k] * eps[l, mm, nn]
                                if c == 0.0:
                                    continue
                                e = [0, 0, 0]
                                e[j] += 1
                                e[mm] += 1
                                alpha = MultiIndex(tuple(e))
                                mat = terms.setdefault(alpha, np.zeros((n_rows, ell)))
                                mat[row, chan[(min(k, nn), max(k, nn))]] += c
                row += 1
        return DifferentialOperator(3, ell, n_rows, terms, name="curlcurl:3")
    raise ValueError(f"curlcurl is provided for d in {{2, 3}}, got d={d}")


# ---------------------------------------------------------------------------
# spec text format


def parse_operator(text: str) -> DifferentialOperator:
    """Parse the line-oriented operator format.

    Line 1: ``op d=<int> ell=<int> n=<int>``; then per term
    ``term alpha=<a1,...,ad> matrix=<row;row;...>`` with comma-separated
    decimals inside rows.  ``#`` starts a comment; whitespace around ``=``
    and the separators is ignored.
    """
    header = None
    terms = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        word = line.split(None, 1)[0]
        body = line[len(word):]
        compact = "".join(body.split())
        if word == "op":
            if header is not None:
                raise OperatorSpecError(f"line {lineno}: duplicate op line")
            header = _parse_header(compact, lineno)
        elif word == "term":
            if header is None:
                raise OperatorSpecError(f"line {lineno}: term before op line")
            alpha, mat = _parse_term(compact, header, lineno)
            if alpha in terms:
                raise OperatorSpecError(f"line {lineno}: duplicate term alpha={alpha}")
            terms[alpha] = mat
        else:
            raise OperatorSpecError(f"line {lineno}: unknown keyword {word!r}")
    if header is None:
        raise OperatorSpecError("missing op line")
    if not terms:
        raise OperatorSpecError("empty term list")
    d, ell, n = header
    if all(np.all(m == 0.0) for m in terms.values()):
        raise OperatorSpecError("no top-order term: all coefficient matrices are zero")
    try:
        return DifferentialOperator(d, ell, n, terms)
    except ValueError as exc:
        raise OperatorSpecError(str(exc)) from exc


def _parse_header(compact, lineno):
    fields = dict(part.split("=", 1) for part in _split_assignments(compact, ("d", "ell", "n"), lineno))
    if set(fields) != {"d", "ell", "n"}:
        raise OperatorSpecError(f"line {lineno}: op line needs d=, ell=, n=")
    try:
        return int(fields["d"]), int(fields["ell"]), int(fields["n"])
    except ValueError as exc:
        raise OperatorSpecError(f"line {lineno}: bad integer in op line: {exc}") from exc


def _parse_term(compact, header, lineno):
    d, ell, n = header
    if not compact.startswith("alpha="):
        raise OperatorSpecError(f"line {lineno}: term line must read alpha=... matrix=...")
    pos = compact.find("matrix=", len("alpha="))
    if pos < 0:
        raise OperatorSpecError(f"line {lineno}: term line missing matrix=")
    alpha_txt = compact[len("alpha="):pos]
    matrix_txt = compact[pos + len("matrix="):]
    try:
        entries = tuple(int(tok) for tok in alpha_txt.split(",") if tok != "")
        alpha = MultiIndex(entries)
    except ValueError as exc:
        raise OperatorSpecError(f"line {lineno}: bad alpha {alpha_txt!r}: {exc}") from exc
    if alpha.d != d:
        raise OperatorSpecError(f"line {lineno}: alpha has {alpha.d} entries, operator has d={d}")
    rows = []
    for row_txt in matrix_txt.split(";"):
        if row_txt == "":
            continue
        try:
            rows.append([float(tok) for tok in row_txt.split(",")])
        except ValueError as exc:
            raise OperatorSpecError(f"line {lineno}: bad matrix entry: {exc}") from exc
    if not rows:
        raise OperatorSpecError(f"line {lineno}: empty matrix")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise OperatorSpecError(f"line {lineno}: matrix rows have inconsistent lengths")
    mat = np.array(rows, dtype=np.float64)
    if mat.shape != (n, ell):
        raise OperatorSpecError(
            f"line {lineno}: matrix shape {mat.shape} does not match n x ell = ({n}, {ell})"
        )
    return alpha, mat


def _split_assignments(compact, keys, lineno):
    # header values are plain integers, so splitting on key= markers is safe
    marks = []
    for key in keys:
        token = key + "="
        pos = compact.find(token)
        if pos < 0:
            raise OperatorSpecError(f"line {lineno}: missing {key}=")
        marks.append((pos, key))
    marks.sort()
    parts = []
    for idx, (pos, key) in enumerate(marks):
        end = marks[idx + 1][0] if idx + 1 < len(marks) else len(compact)
        parts.append(compact[pos:end])
    return parts


def render_operator(op: DifferentialOperator) -> str:
    """Canonical inverse of parse_operator: terms sorted by alpha, 17
    significant digits, so parse(render(op)) round-trips bit-exactly."""
    lines = [f"op d={op.d} ell={op.ell} n={op.n}"]
    for alpha in sorted(op.terms):
        mat = op.terms[alpha]
        rows = ";".join(",".join(f"{x:.17g}" for x in row) for row in mat)
        lines.append(f"term alpha={alpha} matrix={rows}")
    return "\n".join(lines) + "\n"
