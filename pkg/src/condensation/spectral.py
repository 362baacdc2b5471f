"""Shared discretization helpers: Chebyshev and Fourier differentiation,
trigonometric interpolation, finite-difference weights."""

from __future__ import annotations

import numpy as np


def cheb(n: int):
    """Chebyshev differentiation matrix on the n+1 Gauss-Lobatto points.

    Points are ordered from +1 down to -1 (Trefethen's convention).
    """
    if n == 0:
        return np.zeros((1, 1)), np.array([1.0])
    x = np.cos(np.pi * np.arange(n + 1) / n)
    c = np.ones(n + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n + 1)
    dx = x[:, None] - x[None, :]
    d = np.outer(c, 1.0 / c) / (dx + np.eye(n + 1))
    d -= np.diag(d.sum(axis=1))
    return d, x


def fourier_wavenumbers(n: int, period: float) -> np.ndarray:
    return 2.0 * np.pi / period * np.fft.fftfreq(n, d=1.0 / n)


def fourier_diff_matrix(n: int, period: float, order: int = 1) -> np.ndarray:
    """Dense spectral differentiation matrix for n equispaced periodic samples."""
    k = fourier_wavenumbers(n, period)
    mult = (1j * k) ** order
    if order % 2 == 1 and n % 2 == 0:
        mult[n // 2] = 0.0
    eye = np.eye(n)
    return np.real(np.fft.ifft(mult[:, None] * np.fft.fft(eye, axis=0), axis=0))


def fourier_derivative(values, period: float, order: int = 1, axis: int = 0):
    """Spectral derivative of periodic samples along ``axis``."""
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    k = fourier_wavenumbers(n, period)
    mult = (1j * k) ** order
    if order % 2 == 1 and n % 2 == 0:
        mult[n // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = n
    spec = np.fft.fft(values, axis=axis) * mult.reshape(shape)
    return np.real(np.fft.ifft(spec, axis=axis))


def fourier_interp_matrix(n: int, period: float, points) -> np.ndarray:
    """Matrix E with E @ samples = trigonometric interpolant at ``points``.

    The Nyquist mode (even n) is split symmetrically so the interpolant of
    real data is real.
    """
    points = np.atleast_1d(np.asarray(points, dtype=float))
    k = fourier_wavenumbers(n, period)
    phase = np.exp(1j * np.outer(points, k))
    if n % 2 == 0:
        phase[:, n // 2] = np.cos(k[n // 2] * points)
    # samples -> coefficients is fft / n
    dft = np.fft.fft(np.eye(n), axis=0) / n
    return np.real(phase @ dft)


def fourier_interp(values, period: float, points, axis: int = 0):
    """Evaluate the trigonometric interpolant of ``values`` at ``points``."""
    values = np.asarray(values, dtype=float)
    e = fourier_interp_matrix(values.shape[axis], period, points)
    moved = np.moveaxis(values, axis, 0)
    out = np.tensordot(e, moved, axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def periodic_antiderivative(values, period: float):
    """Return (mean, F) with F periodic and d/dx(mean*x + F) = values, F(0)=0."""
    values = np.asarray(values, dtype=float)
    n = values.size
    k = fourier_wavenumbers(n, period)
    spec = np.fft.fft(values)
    mean = spec[0].real / n
    ik = 1j * k
    ik[0] = 1.0
    integ = spec / ik
    integ[0] = 0.0
    if n % 2 == 0:
        integ[n // 2] = 0.0
    f = np.real(np.fft.ifft(integ))
    return mean, f - f[0]


def fd_weights(z: float, x, m: int) -> np.ndarray:
    """Fornberg finite-difference weights at z for derivatives 0..m on nodes x."""
    x = np.asarray(x, dtype=float)
    n = x.size
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c


def fd_derivative_uniform(values, h: float, deriv: int, order: int = 8, axis: int = -1):
    """High-order finite-difference derivative on a uniform grid.

    Central stencils in the interior, one-sided stencils of the same width
    near the ends.
    """
    values = np.asarray(values, dtype=float)
    moved = np.moveaxis(values, axis, -1)
    n = moved.shape[-1]
    width = 2 * ((deriv + 1) // 2) - 1 + order
    if width % 2 == 0:
        width += 1
    width = min(width, n)
    half = width // 2
    out = np.empty_like(moved)
    nodes = np.arange(width, dtype=float)
    central = fd_weights(float(half), nodes, deriv)[:, deriv] / h**deriv
    edge = min(order + deriv, n)
    edge_nodes = np.arange(edge, dtype=float)
    if n > 2 * half:
        acc = np.zeros(moved.shape[:-1] + (n - 2 * half,))
        for j in range(width):
            acc = acc + central[j] * moved[..., j:n - 2 * half + j]
        out[..., half:n - half] = acc
    for i in list(range(min(half, n))) + list(range(max(n - half, half), n)):
        start = 0 if i < half else n - edge
        w = fd_weights(float(i - start), edge_nodes, deriv)[:, deriv] / h**deriv
        out[..., i] = moved[..., start:start + edge] @ w
    return np.moveaxis(out, -1, axis)


def _interval_weights(width: int, left: int) -> np.ndarray:
    """Weights integrating the width-point Lagrange interpolant (nodes 0..width-1)
    over [left, left + 1]."""
    nodes = np.arange(width, dtype=float) - left
    powers = np.arange(width)
    moments = 1.0 / (powers + 1.0)
    vander = nodes[None, :] ** powers[:, None]
    return np.linalg.solve(vander, moments)


_INTERVAL_CACHE: dict = {}


def cumulative_integral(values, x, axis: int = -1, order: int = 8):
    """Cumulative integral from x[0] on a uniform grid, zero at the first sample.

    Each cell is integrated with a local ``order``-point interpolant centred
    on it, which keeps the error smooth from cell to cell (important when
    the result is differentiated again). ``x`` may be increasing or
    decreasing but must be uniformly spaced.
    """
    x = np.asarray(x, dtype=float)
    v = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    n = v.shape[-1]
    h = (x[-1] - x[0]) / (n - 1)
    width = min(order, n)
    if width < 2:
        return np.moveaxis(np.zeros_like(v), -1, axis)
    half = width // 2
    key = width
    if key not in _INTERVAL_CACHE:
        _INTERVAL_CACHE[key] = [_interval_weights(width, j) for j in range(width - 1)]
    weights = _INTERVAL_CACHE[key]
    cells = np.empty(v.shape[:-1] + (n - 1,))
    # interior cells [i, i+1] use nodes i-half+1 .. i+half
    lo, hi = half - 1, n - 1 - (width - half)
    if hi >= lo:
        w = weights[half - 1]
        acc = np.zeros(v.shape[:-1] + (hi - lo + 1,))
        for j in range(width):
            acc = acc + w[j] * v[..., j:j + hi - lo + 1]
        cells[..., lo:hi + 1] = acc
    for i in list(range(0, min(lo, n - 1))) + list(range(max(hi + 1, 0), n - 1)):
        start = min(max(i - half + 1, 0), n - width)
        cells[..., i] = v[..., start:start + width] @ weights[i - start]
    out = np.concatenate([np.zeros(v.shape[:-1] + (1,)), np.cumsum(cells, axis=-1)], axis=-1) * h
    return np.moveaxis(out, -1, axis)


class PeriodicSeries:
    """Trigonometric interpolant of equispaced samples on [0, period).

    Evaluates the interpolant and its derivatives at arbitrary points by a
    direct sum over the stored coefficients.
    """

    def __init__(self, samples, period: float):
        samples = np.asarray(samples, dtype=float)
        self.period = float(period)
        self.n = samples.size
        self.coef = np.fft.fft(samples) / self.n
        self.k = fourier_wavenumbers(self.n, self.period)
        if self.n % 2 == 0:
            # split the Nyquist term as a cosine
            self.nyquist = self.coef[self.n // 2].real
            self.coef = self.coef.copy()
            self.coef[self.n // 2] = 0.0
        else:
            self.nyquist = 0.0

    def __call__(self, x, deriv: int = 0, chunk: int = 4096):
        x = np.asarray(x, dtype=float)
        flat = x.ravel()
        out = np.empty(flat.size)
        mult = (1j * self.k) ** deriv * self.coef
        kn = np.pi * self.n / self.period
        for start in range(0, flat.size, chunk):
            xs = flat[start:start + chunk]
            val = np.real(np.exp(1j * np.outer(xs, self.k)) @ mult)
            if self.nyquist != 0.0:
                # d^p/dx^p cos(kn x) = kn^p cos(kn x + p pi/2)
                val = val + self.nyquist * kn**deriv * np.cos(kn * xs + deriv * np.pi / 2)
            out[start:start + chunk] = val
        return out.reshape(x.shape)
