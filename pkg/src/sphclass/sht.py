"""
Spherical harmonic transforms on the pole-free equiangular grid.

Grid convention: an ``n x n`` signal is sampled at
``theta_j = pi (j + 0.5) / n`` (rows) and ``phi_k = 2 pi k / n`` (columns).

Coefficients of a real signal are stored for ``m >= 0`` only, in a flat
array indexed by ``l (l + 1) / 2 + m``; negative orders follow from
``f_{l,-m} = (-1)^m conj(f_{lm})``.  Harmonics are orthonormal and carry the
Condon-Shortley phase, e.g. ``Y_1^1(pi/2, 0) = -sqrt(3 / (8 pi))``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

_SHS_MAGIC = b"SHS1"


@dataclass
class SphericalSignal:
    """Real samples on the ``n x n`` grid; leading batch axes are allowed."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim < 2 or v.shape[-1] != v.shape[-2]:
            raise ValueError(f"signal must end in a square (n, n) block, got {v.shape}")
        if v.shape[-1] % 2:
            raise ValueError("grid resolution must be even")
        if not np.all(np.isfinite(v)):
            raise ValueError("signal contains non-finite values")
        self.values = v

    @property
    def n(self) -> int:
        return self.values.shape[-1]


@dataclass
class SHSpectrum:
    """Flat ``m >= 0`` coefficient array of shape ``(..., (L+1)(L+2)/2)``."""

    coeffs: np.ndarray
    L: int

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape[-1] != n_coeffs(self.L):
            raise ValueError(f"expected {n_coeffs(self.L)} coefficients for L={self.L}, "
                             f"got {c.shape[-1]}")
        self.coeffs = c

    def __getitem__(self, lm):
        l, m = lm
        if m >= 0:
            return self.coeffs[..., coeff_index(l, m)]
        return (-1) ** m * np.conj(self.coeffs[..., coeff_index(l, -m)])


def n_coeffs(L: int) -> int:
    return (L + 1) * (L + 2) // 2


def coeff_index(l: int, m: int) -> int:
    if not 0 <= m <= l:
        raise ValueError(f"need 0 <= m <= l, got l={l}, m={m}")
    return l * (l + 1) // 2 + m


@lru_cache(maxsize=None)
def degree_order(L: int) -> tuple[np.ndarray, np.ndarray]:
    """Arrays ``(l, m)`` for every flat coefficient slot up to degree ``L``."""
    ls = np.concatenate([np.full(l + 1, l) for l in range(L + 1)])
    ms = np.concatenate([np.arange(l + 1) for l in range(L + 1)])
    ls.flags.writeable = False
    ms.flags.writeable = False
    return ls, ms


def theta_grid(n: int) -> np.ndarray:
    return np.pi * (np.arange(n) + 0.5) / n


def phi_grid(n: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(n) / n


# -- Legendre functions and harmonics ----------------------------------------

def legendre_table(L: int, x) -> np.ndarray:
    """Orthonormalized associated Legendre functions for all ``0 <= m <= l <= L``.

    Returns an array of shape ``(n_coeffs(L),) + x.shape`` holding
    ``sqrt((2l+1)(l-m)! / (4 pi (l+m)!)) P_l^m(x)`` (Condon-Shortley phase
    included).  The normalization is folded into the recurrences, so no
    factorials are formed and degrees in the hundreds stay finite.
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) > 1.0):
        raise ValueError("|x| must not exceed 1")
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    out = np.empty((n_coeffs(L),) + x.shape)
    pmm = np.full(x.shape, 0.5 / np.sqrt(np.pi))
    for m in range(L + 1):
        if m > 0:
            pmm = -np.sqrt((2 * m + 1) / (2.0 * m)) * s * pmm
        out[coeff_index(m, m)] = pmm
        if m == L:
            break
        p_prev, p_cur = pmm, np.sqrt(2 * m + 3.0) * x * pmm
        out[coeff_index(m + 1, m)] = p_cur
        for l in range(m + 2, L + 1):
            a = np.sqrt((4.0 * l * l - 1) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1) ** 2 - 1))
            p_prev, p_cur = p_cur, a * (x * p_cur - b * p_prev)
            out[coeff_index(l, m)] = p_cur
    return out


def assoc_legendre_normalized(l: int, m: int, x):
    if not 0 <= m <= l:
        raise ValueError(f"need 0 <= m <= l, got l={l}, m={m}")
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) > 1.0):
        raise ValueError("|x| must not exceed 1")
    val = legendre_table(l, x)[coeff_index(l, m)]
    return float(val) if val.ndim == 0 else val


def evaluate_basis(l: int, m: int, theta, phi):
    """Complex harmonic ``Y_l^m(theta, phi)`` for ``0 <= m <= l``."""
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    val = assoc_legendre_normalized(l, m, np.cos(theta)) * np.exp(1j * m * phi)
    return complex(val) if np.ndim(val) == 0 else val


# -- quadrature ---------------------------------------------------------------

@lru_cache(maxsize=None)
def _quadrature_weights(n: int, L: int) -> np.ndarray:
    if n < 2 * (L + 1):
        raise ValueError(f"resolution n={n} too small for degree L={L}; "
                         f"need n >= {2 * (L + 1)}")
    x = np.cos(theta_grid(n))
    A = np.polynomial.legendre.legvander(x, 2 * L).T  # (2L+1, n)
    rhs = np.zeros(2 * L + 1)
    rhs[0] = 2.0
    if np.linalg.matrix_rank(A) < 2 * L + 1:
        raise ValueError("moment system is rank deficient")
    w = np.linalg.lstsq(A, rhs, rcond=None)[0]
    w.flags.writeable = False
    return w


def quadrature_weights(n: int, L: int) -> np.ndarray:
    """Latitude weights ``w_j`` exact for polynomials in cos(theta) up to 2L.

    They solve ``sum_j w_j P_l(cos theta_j) = 2 delta_{l0}`` for
    ``l = 0..2L`` in the least-norm sense; an integral over the sphere is
    then ``sum_jk w_j (2 pi / n) f(theta_j, phi_k)``.
    """
    return _quadrature_weights(int(n), int(L)).copy()


@dataclass(frozen=True)
class _Plan:
    n: int
    L: int
    weights: np.ndarray     # (n,)
    legendre: np.ndarray    # (ncoef, n)
    analysis: np.ndarray    # (n, ncoef) = w_j (2 pi / n) P_lm(theta_j)
    orders: np.ndarray      # (ncoef,)


@lru_cache(maxsize=64)
def get_plan(n: int, L: int) -> _Plan:
    """Precomputed, read-only tables shared by every transform at (n, L)."""
    w = _quadrature_weights(n, L)
    leg = legendre_table(L, np.cos(theta_grid(n)))
    analysis = (leg * w * (2.0 * np.pi / n)).T.copy()
    _, ms = degree_order(L)
    for arr in (leg, analysis):
        arr.flags.writeable = False
    return _Plan(n, L, w, leg, analysis, ms)


def _signal_values(signal) -> np.ndarray:
    if isinstance(signal, SphericalSignal):
        return signal.values
    return SphericalSignal(signal).values


def forward(signal, L: int, method: str = "fft") -> SHSpectrum:
    """Analysis ``f_lm = sum_jk w_j (2 pi / n) f(theta_j, phi_k) conj(Y_lm)``.

    ``method="fft"`` takes per-row Fourier modes with an FFT and then the
    weighted Legendre sum over rows; ``method="direct"`` evaluates the full
    double sum against explicitly sampled harmonics (slow, for checking).
    """
    f = _signal_values(signal)
    n = f.shape[-1]
    plan = get_plan(n, L)
    if method == "fft":
        modes = np.fft.rfft(f, axis=-1)[..., plan.orders]    # (..., n, ncoef)
        coeffs = np.einsum("...jc,jc->...c", modes, plan.analysis)
    elif method == "direct":
        theta, phi = theta_grid(n), phi_grid(n)
        ls, ms = degree_order(L)
        basis = np.stack([
            np.conj(evaluate_basis(l, m, theta[:, None], phi[None, :]))
            for l, m in zip(ls, ms)
        ])                                                     # (ncoef, n, n)
        weighted = f * (plan.weights * 2.0 * np.pi / n)[:, None]
        coeffs = np.einsum("...jk,cjk->...c", weighted, basis)
    else:
        raise ValueError(f"unknown method {method!r}")
    return SHSpectrum(coeffs, L)


def inverse(spec: SHSpectrum, n: int, imag_tol: float = 1e-10) -> SphericalSignal:
    """Synthesis ``f = sum_l sum_{|m|<=l} f_lm Y_lm`` on the n x n grid.

    Negative orders come from conjugate symmetry, so the only possible
    imaginary residue is ``Im(f_l0)``; it must stay below ``imag_tol``
    (relative to the largest coefficient) and is then dropped.
    """
    L = spec.L
    plan = get_plan(n, L)
    c = spec.coeffs
    ls, ms = degree_order(L)
    scale = max(1.0, float(np.abs(c).max(initial=0.0)))
    resid = np.abs(c[..., ms == 0].imag).max(initial=0.0)
    if resid > imag_tol * scale:
        raise ValueError(f"spectrum is not that of a real signal "
                         f"(imaginary residue {resid:.3g})")
    # per-row Fourier modes G_m(theta_j) = sum_l f_lm P_lm(theta_j)
    rows = np.zeros(c.shape[:-1] + (n, n // 2 + 1), dtype=np.complex128)
    for m in range(L + 1):
        sel = ms == m
        rows[..., m] = np.einsum("...c,cj->...j", c[..., sel], plan.legendre[sel])
    rows[..., 0] = rows[..., 0].real
    # irfft applies 1/n and doubles the m > 0 modes implicitly
    return SphericalSignal(np.fft.irfft(rows, n=n, axis=-1) * n)


def synthesis_matrix(L: int, n: int) -> np.ndarray:
    """Real matrix mapping stacked ``(re, im)`` coefficients to grid values.

    Shape ``(2 * n_coeffs(L), n * n)``: ``values = concat(re, im) @ S``.
    Imaginary parts of ``m = 0`` coefficients map to zero, matching
    :func:`inverse` (which discards them).
    """
    plan = get_plan(n, L)
    _, ms = degree_order(L)
    phi = phi_grid(n)
    mult = np.where(ms == 0, 1.0, 2.0)[:, None, None]
    leg = plan.legendre[:, :, None]
    cos = np.cos(ms[:, None] * phi[None, :])[:, None, :]
    sin = np.sin(ms[:, None] * phi[None, :])[:, None, :]
    re_part = mult * leg * cos
    im_part = -mult * leg * sin
    return np.concatenate([re_part, im_part]).reshape(2 * len(ms), n * n)


def analysis_matrix(L: int, n: int) -> np.ndarray:
    """Real matrix mapping flattened grid values to stacked ``(re, im)``.

    Shape ``(n * n, 2 * n_coeffs(L))``, the linear map behind :func:`forward`.
    """
    plan = get_plan(n, L)
    _, ms = degree_order(L)
    phi = phi_grid(n)
    ana = plan.analysis.T[:, :, None]                       # (ncoef, n, 1)
    re_part = ana * np.cos(ms[:, None] * phi[None, :])[:, None, :]
    im_part = -ana * np.sin(ms[:, None] * phi[None, :])[:, None, :]
    return np.concatenate([re_part, im_part]).reshape(2 * len(ms), n * n).T


# -- descriptors --------------------------------------------------------------

def _stack_spectra(spectra) -> tuple[np.ndarray, int]:
    if isinstance(spectra, SHSpectrum):
        return spectra.coeffs, spectra.L
    spectra = list(spectra)
    if not spectra:
        raise ValueError("no spectra given")
    Ls = {s.L for s in spectra}
    if len(Ls) != 1:
        raise ValueError(f"shells disagree on degree: {sorted(Ls)}")
    return np.stack([s.coeffs for s in spectra]), Ls.pop()


def descriptor_f1(spectra) -> np.ndarray:
    """Per-coefficient magnitudes ``|f_lm|`` (m >= 0), concatenated over shells.

    ``spectra`` is a sequence of per-shell :class:`SHSpectrum` objects or a
    single spectrum whose coefficient array is ``(..., shells, ncoef)``.
    The result has shape ``(..., shells * ncoef)``.
    """
    c, _ = _stack_spectra(spectra)
    mag = np.abs(c)
    return mag.reshape(mag.shape[:-2] + (-1,)) if mag.ndim >= 2 else mag


def descriptor_f2(spectra) -> np.ndarray:
    """Per-degree energies ``sqrt(sum_{m=-l..l} |f_lm|^2)`` over shells."""
    c, L = _stack_spectra(spectra)
    ls, ms = degree_order(L)
    power = np.abs(c) ** 2 * np.where(ms == 0, 1.0, 2.0)
    energy = np.zeros(c.shape[:-1] + (L + 1,))
    for l in range(L + 1):
        energy[..., l] = power[..., ls == l].sum(axis=-1)
    out = np.sqrt(energy)
    return out.reshape(out.shape[:-2] + (-1,)) if out.ndim >= 2 else out


# -- spectrum dump ------------------------------------------------------------

def save_spectra(spectrum: SHSpectrum, path) -> None:
    """SHS1 dump: magic, u32 shells, u32 L, then float64 (re, im) pairs."""
    c = np.atleast_2d(spectrum.coeffs)
    if c.ndim != 2:
        raise ValueError("expected (shells, ncoef) coefficients")
    inter = np.empty(c.shape + (2,), dtype="<f8")
    inter[..., 0] = c.real
    inter[..., 1] = c.imag
    with open(path, "wb") as fh:
        fh.write(_SHS_MAGIC)
        fh.write(struct.pack("<II", c.shape[0], spectrum.L))
        fh.write(inter.tobytes())


def load_spectra(path) -> SHSpectrum:
    data = Path(path).read_bytes()
    if data[:4] != _SHS_MAGIC:
        raise ValueError(f"{path}: not an SHS1 spectrum file")
    shells, L = struct.unpack("<II", data[4:12])
    expected = 12 + shells * n_coeffs(L) * 16
    if len(data) != expected:
        raise ValueError(f"{path}: size {len(data)} does not match header ({expected})")
    arr = np.frombuffer(data, dtype="<f8", offset=12).reshape(shells, n_coeffs(L), 2)
    return SHSpectrum(arr[..., 0] + 1j * arr[..., 1], L)
