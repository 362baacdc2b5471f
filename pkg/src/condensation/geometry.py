"""Boundary curves parametrized by arclength, curvature data and the
boundary-collar (Fermi) coordinate chart.

Conventions
-----------
* The curve is traversed counterclockwise; ``normal`` is the inner unit
  normal obtained by rotating the tangent by +90 degrees.
* ``kappa`` is the geometric curvature (positive for convex domains).
* Collar points are indexed by an offset ``y <= 0``: the point
  ``gamma(theta) - y * normal(theta)`` lies inside at distance ``|y|``.
  The metric factor in these coordinates is ``1 + kappa * y``.  Formulas
  written with a factor ``1 - y * k`` therefore use ``k = -kappa``; see
  :func:`chart_curvature`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .spectral import PeriodicSeries, fd_derivative_uniform, fourier_derivative, periodic_antiderivative

# Sign multiplying the geometric curvature inside collar formulas that use
# the metric factor (1 - y k). Fixed by the chart-Laplacian equivalence test.
CHART_CURVATURE_SIGN = -1.0


class GeometryError(ValueError):
    pass


def _rho_from_coefficients(coeffs):
    coeffs = np.asarray(coeffs, dtype=float)
    a0 = coeffs[0]
    rest = coeffs[1:]
    if rest.size % 2:
        rest = np.concatenate([rest, [0.0]])
    a = rest[0::2]
    b = rest[1::2]
    k = np.arange(1, a.size + 1)

    def rho(phi, deriv=0):
        phi = np.asarray(phi, dtype=float)
        ph = np.multiply.outer(phi, k)
        if deriv == 0:
            val = a0 + np.cos(ph) @ a + np.sin(ph) @ b
        else:
            # d^p cos = k^p cos(. + p pi/2), same for sin
            shift = deriv * np.pi / 2
            val = np.cos(ph + shift) @ (a * k**deriv) + np.sin(ph + shift) @ (b * k**deriv)
        return val

    return rho


def ellipse_rho(a: float, b: float):
    """Polar radius of the axis-aligned ellipse with semi-axes a, b."""

    def rho(phi):
        phi = np.asarray(phi, dtype=float)
        return a * b / np.sqrt((b * np.cos(phi)) ** 2 + (a * np.sin(phi)) ** 2)

    return rho


@dataclass(frozen=True)
class BoundaryCurve:
    """Arclength-parametrized star-shaped boundary (a disk is the case rho = R).

    Sampled quantities live on the uniform arclength grid ``theta``; the
    ``*_at`` methods evaluate trigonometric interpolants anywhere.
    """

    kind: str
    ell: float
    theta: np.ndarray
    points: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    kappa: np.ndarray
    kappa_dot: np.ndarray
    phi: np.ndarray
    rho_phi: np.ndarray  # rho on the uniform polar grid used for fine work
    spec: dict = field(default_factory=dict)
    _series: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.theta.size

    def _get(self, name):
        s = self._series.get(name)
        if s is None:
            if name == "x":
                s = PeriodicSeries(self.points[:, 0], self.ell)
            elif name == "y":
                s = PeriodicSeries(self.points[:, 1], self.ell)
            elif name == "kappa":
                s = PeriodicSeries(self.kappa, self.ell)
            elif name == "kappa_dot":
                s = PeriodicSeries(self.kappa_dot, self.ell)
            elif name == "phi":
                s = PeriodicSeries(self.phi - 2 * np.pi * self.theta / self.ell, self.ell)
            elif name == "rho":
                s = PeriodicSeries(self.rho_phi, 2 * np.pi)
            elif name == "theta_of_phi":
                m = self.rho_phi.size
                grid = 2 * np.pi * np.arange(m) / m
                th = self.theta_of_phi_samples(grid)
                s = PeriodicSeries(th - self.ell * grid / (2 * np.pi), 2 * np.pi)
            self._series[name] = s
        return s

    def gamma(self, theta, deriv: int = 0):
        theta = np.asarray(theta, dtype=float)
        return np.stack([self._get("x")(theta, deriv), self._get("y")(theta, deriv)], axis=-1)

    def gamma_dot(self, theta):
        return self.gamma(theta, 1)

    def normal_at(self, theta):
        t = self.gamma_dot(theta)
        t = t / np.linalg.norm(t, axis=-1, keepdims=True)
        return np.stack([-t[..., 1], t[..., 0]], axis=-1)

    def kappa_at(self, theta, deriv: int = 0):
        return self._get("kappa")(theta, deriv)

    def kappa_dot_at(self, theta):
        return self._get("kappa_dot")(theta)

    def phi_at(self, theta):
        theta = np.asarray(theta, dtype=float)
        return 2 * np.pi * theta / self.ell + self._get("phi")(theta)

    def rho(self, phi, deriv: int = 0):
        return self._get("rho")(phi, deriv)

    def theta_of_phi_samples(self, phi):
        """Arclength position of polar angle phi (Newton-free: series inverse)."""
        phi = np.asarray(phi, dtype=float)
        # invert phi(theta) by Newton starting from the linear guess
        theta = self.ell * phi / (2 * np.pi)
        ser = self._get("phi")
        for _ in range(50):
            f = 2 * np.pi * theta / self.ell + ser(theta) - phi
            df = 2 * np.pi / self.ell + ser(theta, 1)
            step = f / df
            theta = theta - step
            if np.max(np.abs(step)) < 1e-14:
                break
        return theta

    def theta_of_phi(self, phi):
        phi = np.asarray(phi, dtype=float)
        return self.ell * phi / (2 * np.pi) + self._get("theta_of_phi")(phi)

    def resample(self, values, theta):
        """Trigonometric interpolation of arclength-grid samples to ``theta``."""
        return PeriodicSeries(values, self.ell)(theta)


def _reject_nonsmooth(samples, label):
    spec = np.abs(np.fft.rfft(samples)) / samples.size
    n = spec.size
    tail = spec[int(0.75 * n):]
    head = np.max(spec)
    if tail.size and np.max(tail) > 1e-9 * head:
        raise GeometryError(
            f"{label} is not resolved as a smooth periodic function: "
            f"trailing Fourier coefficients {np.max(tail):.2e} relative to {head:.2e}"
        )


def build_boundary(spec, resolution: int = 256, fine: int | None = None) -> BoundaryCurve:
    """Construct an arclength-parametrized boundary.

    ``spec`` is one of ``{"disk": {"radius": R}}``,
    ``{"star": {"rho_coefficients": [a0, a1, b1, a2, b2, ...]}}`` meaning
    rho(phi) = a0 + sum_k a_k cos(k phi) + b_k sin(k phi),
    ``{"star": {"rho_samples": [...]}}`` (uniform polar samples),
    ``{"ellipse": {"a": A, "b": B}}``, or a callable rho(phi).
    """
    if resolution < 64:
        raise GeometryError(f"resolution {resolution} below the minimum 64")
    fine = fine or max(4 * resolution, 1024)
    if fine % 2:
        fine += 1
    phi_fine = 2 * np.pi * np.arange(fine) / fine

    kind = "star"
    exact_rho = None
    spec_record: dict
    if callable(spec):
        samples = np.asarray(spec(phi_fine), dtype=float)
        spec_record = {"star": {"rho_samples": "callable"}}
    elif "disk" in spec:
        radius = float(spec["disk"].get("radius", 1.0))
        if radius <= 0:
            raise GeometryError("disk radius must be positive")
        kind = "disk"
        exact_rho = _rho_from_coefficients([radius])
        samples = np.full(fine, radius)
        spec_record = {"disk": {"radius": radius}}
    elif "ellipse" in spec:
        a = float(spec["ellipse"]["a"])
        b = float(spec["ellipse"]["b"])
        samples = ellipse_rho(a, b)(phi_fine)
        spec_record = {"ellipse": {"a": a, "b": b}}
    elif "star" in spec and "rho_coefficients" in spec["star"]:
        coeffs = [float(c) for c in spec["star"]["rho_coefficients"]]
        exact_rho = _rho_from_coefficients(coeffs)
        samples = exact_rho(phi_fine)
        spec_record = {"star": {"rho_coefficients": coeffs}}
    elif "star" in spec and "rho_samples" in spec["star"]:
        raw = np.asarray(spec["star"]["rho_samples"], dtype=float)
        _reject_nonsmooth(raw, "rho samples")
        samples = PeriodicSeries(raw, 2 * np.pi)(phi_fine)
        spec_record = {"star": {"rho_samples": raw.tolist()}}
    else:
        raise GeometryError(f"unrecognized curve spec {spec!r}")

    if not np.all(np.isfinite(samples)):
        raise GeometryError("rho contains non-finite values")
    if np.min(samples) <= 0:
        raise GeometryError(
            f"rho must be strictly positive (min {np.min(samples):.3e}); "
            "a nonpositive radius makes the curve self-intersect"
        )
    _reject_nonsmooth(samples, "rho")

    if exact_rho is not None:
        rho0 = lambda p: exact_rho(p)  # noqa: E731
        rho1 = lambda p: exact_rho(p, 1)  # noqa: E731
        rho2 = lambda p: exact_rho(p, 2)  # noqa: E731
    else:
        ser = PeriodicSeries(samples, 2 * np.pi)
        rho0 = lambda p: ser(p)  # noqa: E731
        rho1 = lambda p: ser(p, 1)  # noqa: E731
        rho2 = lambda p: ser(p, 2)  # noqa: E731

    speed_fine = np.sqrt(rho0(phi_fine) ** 2 + rho1(phi_fine) ** 2)
    mean_speed, periodic = periodic_antiderivative(speed_fine, 2 * np.pi)
    ell = 2 * np.pi * mean_speed
    arc_series = PeriodicSeries(periodic, 2 * np.pi)

    theta = ell * np.arange(resolution) / resolution
    phi = theta / mean_speed
    for _ in range(60):
        f = mean_speed * phi + arc_series(phi) - theta
        df = np.sqrt(rho0(phi) ** 2 + rho1(phi) ** 2)
        step = f / df
        phi = phi - step
        if np.max(np.abs(step)) < 1e-14:
            break
    else:
        raise GeometryError("arclength reparametrization did not converge")

    r0, r1, r2 = rho0(phi), rho1(phi), rho2(phi)
    cos, sin = np.cos(phi), np.sin(phi)
    points = np.stack([r0 * cos, r0 * sin], axis=1)
    dx = np.stack([r1 * cos - r0 * sin, r1 * sin + r0 * cos], axis=1)
    speed = np.linalg.norm(dx, axis=1)
    tangent = dx / speed[:, None]
    normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
    kappa = (r0**2 + 2 * r1**2 - r0 * r2) / (r0**2 + r1**2) ** 1.5
    if kind == "disk":
        kappa = np.full(resolution, 1.0 / samples[0])
    kappa_dot = fourier_derivative(kappa, ell)

    return BoundaryCurve(
        kind=kind,
        ell=float(ell),
        theta=theta,
        points=points,
        tangent=tangent,
        normal=normal,
        kappa=kappa,
        kappa_dot=kappa_dot,
        phi=phi,
        rho_phi=samples,
        spec=spec_record,
    )


def chart_curvature(curve: BoundaryCurve, theta=None):
    """Curvature entering formulas written with the metric factor (1 - y k)."""
    kap = curve.kappa if theta is None else curve.kappa_at(theta)
    return CHART_CURVATURE_SIGN * kap


@dataclass(frozen=True)
class FermiChart:
    """Collar chart (theta, y), y in [-delta, 0], x = gamma(theta) - y * normal(theta)."""

    curve: BoundaryCurve
    delta: float
    convention: str = "interior offset y<=0 at distance |y|; x = gamma - y*inner_normal; metric 1 + kappa*y"

    def __post_init__(self):
        if self.delta <= 0:
            raise GeometryError("collar width must be positive")
        kmax = float(np.max(np.abs(self.curve.kappa)))
        if self.delta * kmax >= 0.5:
            raise GeometryError(
                f"collar width {self.delta:.4g} too large for max curvature {kmax:.4g} "
                "(need delta*max|kappa| < 0.5)"
            )


def fermi_to_cartesian(chart: FermiChart, theta, y):
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y > 1e-14) or np.any(y < -chart.delta * (1 + 1e-12)):
        raise GeometryError(f"offset outside the collar [-{chart.delta}, 0]")
    g = chart.curve.gamma(theta)
    nu = chart.curve.normal_at(theta)
    return g - y[..., None] * nu


def cartesian_to_fermi(chart: FermiChart, points, max_iter: int = 30):
    """Foot-point projection onto the curve: returns (theta, y).

    No collar check is made on the result; callers should restrict to points
    within the collar where the projection is unique.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    curve = chart.curve
    d2 = ((pts[:, None, :] - curve.points[None, :, :]) ** 2).sum(axis=2)
    theta = curve.theta[np.argmin(d2, axis=1)].astype(float)
    for _ in range(max_iter):
        g = curve.gamma(theta)
        g1 = curve.gamma(theta, 1)
        g2 = curve.gamma(theta, 2)
        diff = pts - g
        f = (diff * g1).sum(axis=1)
        df = -(g1 * g1).sum(axis=1) + (diff * g2).sum(axis=1)
        step = f / df
        theta = theta - step
        if np.max(np.abs(step)) < 1e-15 * max(curve.ell, 1.0):
            break
    theta = np.mod(theta, curve.ell)
    nu = curve.normal_at(theta)
    y = -((pts - curve.gamma(theta)) * nu).sum(axis=1)
    shape = np.asarray(points).shape[:-1]
    return theta.reshape(shape), y.reshape(shape)


def chart_laplacian(chart: FermiChart, theta, y, values, order: int = 2,
                    curvature_sign: float = CHART_CURVATURE_SIGN):
    """Laplacian in collar coordinates on a tensor grid.

    ``theta``: uniform periodic grid covering [0, ell); ``y``: uniform grid;
    ``values`` has shape (len(theta), len(y)). Theta derivatives are
    spectral, y derivatives use finite differences of the given order.

    The operator is written with curvature k = curvature_sign * kappa:
        u_yy - k/(1 - y k) u_y + u_thth/(1 - y k)^2 + y k'/(1 - y k)^3 u_th.
    Only ``curvature_sign = CHART_CURVATURE_SIGN`` reproduces the Cartesian
    Laplacian under the chart's orientation.
    """
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    u = np.asarray(values, dtype=float)
    if u.shape != (theta.size, y.size):
        raise ValueError("values must have shape (len(theta), len(y))")
    hy = y[1] - y[0]
    k = curvature_sign * chart.curve.kappa_at(theta)[:, None]
    kd = curvature_sign * chart.curve.kappa_dot_at(theta)[:, None]
    u_th = fourier_derivative(u, chart.curve.ell, 1, axis=0)
    u_thth = fourier_derivative(u, chart.curve.ell, 2, axis=0)
    u_y = fd_derivative_uniform(u, hy, 1, order=order, axis=1)
    u_yy = fd_derivative_uniform(u, hy, 2, order=order, axis=1)
    if y.size < order + 3 or theta.size < 16:
        est = abs(hy) ** order * float(np.max(np.abs(u_yy)))
        warnings.warn(
            f"collar grid ({theta.size} x {y.size}) too coarse for order {order}; "
            f"estimated error ~{est:.2e}",
            RuntimeWarning,
        )
    yy = y[None, :]
    m = 1.0 - yy * k
    return u_yy - k / m * u_y + u_thth / m**2 + yy * kd / m**3 * u_th
