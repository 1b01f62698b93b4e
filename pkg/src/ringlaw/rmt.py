"""Random-matrix core: window standardization, singular value equivalents,
ring products, eigen-spectra and the single-ring reference law.

All functions are pure: randomness enters only through explicit seeds.
Matrices are carried as complex128 from the singular value equivalent onward.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DecompositionFailure,
    DimensionMismatch,
    EigenFailure,
    EmptySpectrum,
    ValidationError,
    ZeroVarianceRow,
)

DEFAULT_EPS_VAR = 1e-9
JITTER_SCALE = 1e-6


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class DataWindow:
    """An N x T block of raw measurements; rows are buses, columns are samples."""

    values: np.ndarray
    row_ids: tuple
    end_time: int = 0
    sample_period: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_ids", tuple(self.row_ids))
        if values.ndim != 2:
            raise ValidationError(f"window must be 2-D, got shape {values.shape}")
        n, t = values.shape
        if n < 2:
            raise ValidationError(f"window needs at least 2 rows, got {n}")
        if t < n:
            raise ValidationError(f"window has T={t} < N={n}; ratio c=N/T must be <= 1")
        if len(self.row_ids) != n:
            raise ValidationError(f"{len(self.row_ids)} row ids for {n} rows")
        if len(set(self.row_ids)) != n:
            raise ValidationError("row ids are not unique")
        if not np.all(np.isfinite(values)):
            raise ValidationError("window contains non-finite entries")

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class StandardizedWindow:
    values: np.ndarray
    row_ids: tuple = ()


@dataclass(frozen=True)
class SingularEquivalent:
    values: np.ndarray
    source_seed: object = None


@dataclass(frozen=True)
class RingMatrix:
    values: np.ndarray
    factors: int = 1


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    radii: np.ndarray = field(init=False)

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=complex).ravel()
        object.__setattr__(self, "eigenvalues", ev)
        object.__setattr__(self, "radii", np.abs(ev))

    def __len__(self):
        return self.eigenvalues.size


@dataclass(frozen=True)
class RingParams:
    """Geometry of the limiting annulus for an N x T window and L factors."""

    n_rows: int
    n_cols: int
    factors: int = 1

    def __post_init__(self):
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValidationError("n_rows and n_cols must be positive")
        if self.n_rows > self.n_cols:
            raise ValidationError(f"c = {self.n_rows}/{self.n_cols} exceeds 1")
        if self.factors < 1:
            raise ValidationError("factors must be >= 1")

    @property
    def ratio(self) -> float:
        return self.n_rows / self.n_cols

    @property
    def inner_radius(self) -> float:
        return (1.0 - self.ratio) ** (self.factors / 2.0)

    @property
    def outer_radius(self) -> float:
        return 1.0


@dataclass(frozen=True)
class ConformanceReport:
    fraction: float
    min_radius: float
    max_radius: float
    inner_radius: float
    outer_radius: float
    tol: float
    count: int

    def as_dict(self) -> dict:
        return {
            "fraction": self.fraction,
            "min_radius": self.min_radius,
            "max_radius": self.max_radius,
            "inner_radius": self.inner_radius,
            "outer_radius": self.outer_radius,
            "tol": self.tol,
            "count": self.count,
        }


def standardize_rows(
    window: DataWindow,
    jitter: bool = False,
    eps_var: float = DEFAULT_EPS_VAR,
    seed=None,
) -> StandardizedWindow:
    """Z-score every row to population mean 0 and variance 1.

    Rows whose population standard deviation is at or below ``eps_var`` raise
    ``ZeroVarianceRow`` unless ``jitter`` is set, in which case seeded Gaussian
    noise of scale ``1e-6 * max|row|`` (or 1e-6 for an all-zero row) is added first.
    """
    x = np.array(window.values, dtype=float, copy=True)
    sd = x.std(axis=1)
    flat = np.flatnonzero(sd <= eps_var)
    if flat.size:
        if not jitter:
            raise ZeroVarianceRow(window.row_ids[flat[0]])
        rng = _rng(seed)
        for i in flat:
            scale = np.max(np.abs(x[i])) or 1.0
            x[i] = x[i] + rng.normal(0.0, JITTER_SCALE * scale, size=x.shape[1])
    x = x - x.mean(axis=1, keepdims=True)
    x = x / x.std(axis=1, keepdims=True)
    # second centering removes the rounding residue left by the division
    x = x - x.mean(axis=1, keepdims=True)
    return StandardizedWindow(x, tuple(window.row_ids))


def haar_unitary(n: int, seed=None) -> np.ndarray:
    """Draw an n x n unitary from the Haar measure (phase-corrected QR)."""
    rng = _rng(seed)
    g = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    q, r = np.linalg.qr(g)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def _as_matrix(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x))


def singular_value_equivalent(
    x, seed=None, unitary: np.ndarray | None = None, identity: bool = False
) -> SingularEquivalent:
    """Return ``U @ sqrt(X X^H)`` for an N x T standardized window.

    The Hermitian square root is taken from the thin SVD of X, so the Gram
    matrix is never formed. ``U`` is Haar-distributed from ``seed`` unless an
    explicit ``unitary`` is given or ``identity`` is requested.
    """
    a = np.asarray(_as_matrix(x))
    if not np.iscomplexobj(a):
        a = a.astype(float)
    if a.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {a.shape}")
    n, t = a.shape
    if t < n:
        raise DimensionMismatch(f"T={t} < N={n}")
    try:
        p, s, _ = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise DecompositionFailure(str(exc)) from exc
    root = (p * s) @ p.conj().T
    if unitary is not None:
        u = np.asarray(unitary, dtype=complex)
        if u.shape != (n, n):
            raise DimensionMismatch(f"unitary has shape {u.shape}, expected {(n, n)}")
    elif identity:
        u = np.eye(n, dtype=complex)
    else:
        u = haar_unitary(n, seed)
    return SingularEquivalent(u @ root, seed)


def ring_product(factors: Sequence[SingularEquivalent]) -> RingMatrix:
    """Ordered left-to-right product of the factors."""
    if len(factors) == 0:
        raise DimensionMismatch("need at least one factor")
    mats = [_as_matrix(f) for f in factors]
    n = mats[0].shape[0]
    for m in mats:
        if m.ndim != 2 or m.shape != (n, n):
            raise DimensionMismatch(f"factor shape {m.shape} != {(n, n)}")
    out = np.array(mats[0], dtype=complex, copy=True)
    for m in mats[1:]:
        out = out @ m
    return RingMatrix(out, len(mats))


def normalize_product(z_tilde, axis: str = "column") -> RingMatrix:
    """Rescale the product so every column (or row) has population sigma 1/sqrt(N).

    ``axis="column"`` divides column k by sqrt(N) * sigma(column k), which keeps
    the limiting spectrum on the ring and collapses it toward the origin when
    the window carries a common signal. ``axis="row"`` applies the same map row-wise.
    """
    if axis not in ("column", "row"):
        raise ValidationError(f"axis must be 'column' or 'row', got {axis!r}")
    z = np.asarray(_as_matrix(z_tilde), dtype=complex)
    n = z.shape[0]
    along = 0 if axis == "column" else 1
    sd = z.std(axis=along)
    bad = np.flatnonzero(~(sd > np.finfo(float).tiny) | ~np.isfinite(sd))
    if bad.size:
        raise ZeroVarianceRow(int(bad[0]), f"{axis} {int(bad[0])} has zero variance")
    scale = np.sqrt(n) * sd
    out = z / (scale[None, :] if along == 0 else scale[:, None])
    return RingMatrix(out, getattr(z_tilde, "factors", 1))


def normalize_product_rows(z_tilde) -> RingMatrix:
    """Row-wise variant: row j is divided by sqrt(N) * sigma(row j)."""
    return normalize_product(z_tilde, axis="row")


def eigenvalues(z) -> Spectrum:
    m = np.asarray(_as_matrix(z), dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"eigenvalues need a square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise EigenFailure("matrix has non-finite entries")
    try:
        ev = np.linalg.eigvals(m)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    n = m.shape[0]
    tr = np.trace(m)
    if abs(ev.sum() - tr) > 1e-6 * n * max(1.0, abs(tr), float(np.abs(ev).sum())):
        raise EigenFailure("eigenvalue sum disagrees with the trace")
    return Spectrum(ev)


def msr(spectrum: Spectrum) -> float:
    """Mean spectral radius: arithmetic mean of the eigenvalue moduli."""
    if len(spectrum) == 0:
        raise EmptySpectrum("spectrum is empty")
    return float(np.mean(spectrum.radii))


def ring_density(radius, params: RingParams):
    """Limiting eigenvalue density (per unit area of the complex plane) at |lambda| = radius."""
    r = np.asarray(radius, dtype=float)
    c, a = params.ratio, float(params.factors)
    inside = (r >= params.inner_radius) & (r <= params.outer_radius)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(inside, np.power(r, 2.0 / a - 2.0) / (np.pi * c * a), 0.0)
    val = np.where(inside & ~np.isfinite(val), 0.0, val)
    return float(val) if val.ndim == 0 else val


def expected_msr(params: RingParams) -> float:
    """First moment of the ring law, 2 / (c (L+2)) * (1 - (1-c)^((L+2)/2))."""
    c, a = params.ratio, float(params.factors)
    if c == 1.0:
        return 2.0 / (a + 2.0)
    # expm1/log1p keep the c -> 0 limit accurate
    return 2.0 / (c * (a + 2.0)) * -np.expm1((a + 2.0) / 2.0 * np.log1p(-c))


def ring_conformance(spectrum: Spectrum, params: RingParams, tol: float = 0.05) -> ConformanceReport:
    if tol < 0:
        raise ValidationError("tol must be non-negative")
    if len(spectrum) == 0:
        raise EmptySpectrum("spectrum is empty")
    r = spectrum.radii
    inside = (r >= params.inner_radius - tol) & (r <= params.outer_radius + tol)
    return ConformanceReport(
        fraction=float(np.mean(inside)),
        min_radius=float(r.min()),
        max_radius=float(r.max()),
        inner_radius=params.inner_radius,
        outer_radius=params.outer_radius,
        tol=float(tol),
        count=int(r.size),
    )


def ring_spectrum(
    windows: Sequence[DataWindow | np.ndarray],
    seeds: Sequence | None = None,
    unitaries: Sequence[np.ndarray] | None = None,
    identity: bool = False,
    jitter: bool = False,
    jitter_seed=None,
    axis: str = "column",
) -> Spectrum:
    """Run the full transform over one window per factor and return the spectrum of Z."""
    factors = []
    for i, w in enumerate(windows):
        if not isinstance(w, DataWindow):
            w = DataWindow(w, tuple(range(np.shape(w)[0])))
        xs = standardize_rows(w, jitter=jitter, seed=jitter_seed)
        u = None if unitaries is None else unitaries[i]
        s = None if seeds is None else seeds[i]
        factors.append(singular_value_equivalent(xs, seed=s, unitary=u, identity=identity))
    return eigenvalues(normalize_product(ring_product(factors), axis))


def ring_check(
    n: int,
    t: int,
    factors: int = 1,
    trials: int = 10,
    seed=0,
    tol: float = 0.05,
    axis: str = "column",
    keep_first: bool = False,
) -> dict:
    """Monte Carlo comparison of Gaussian-input spectra with the ring law.

    Each trial draws ``factors`` independent N x T standard Gaussian windows.
    With ``keep_first`` the first trial's spectrum is returned under ``"first_spectrum"``.
    """
    params = RingParams(n, t, factors)
    root = np.random.SeedSequence(seed)
    msrs, fracs, radii = [], [], []
    for child in root.spawn(trials):
        data_ss, *unit_ss = child.spawn(1 + factors)
        rng = np.random.default_rng(data_ss)
        wins = [rng.standard_normal((n, t)) for _ in range(factors)]
        spec = ring_spectrum(wins, seeds=unit_ss, axis=axis)
        if not msrs:
            first = spec
        msrs.append(msr(spec))
        fracs.append(ring_conformance(spec, params, tol).fraction)
        radii.append(spec.radii)
    all_r = np.concatenate(radii)
    inside = (all_r >= params.inner_radius - tol) & (all_r <= params.outer_radius + tol)
    report = {
        "n": n,
        "t": t,
        "factors": factors,
        "trials": trials,
        "seed": seed,
        "ratio": params.ratio,
        "inner_radius": params.inner_radius,
        "outer_radius": params.outer_radius,
        "expected_msr": expected_msr(params),
        "msr_mean": float(np.mean(msrs)),
        "msr_std": float(np.std(msrs)),
        "annulus_fraction": float(np.mean(inside)),
        "annulus_fraction_min": float(np.min(fracs)),
        "tol": tol,
        "msr_trials": [float(m) for m in msrs],
    }
    if keep_first:
        report["first_spectrum"] = first
    return report
