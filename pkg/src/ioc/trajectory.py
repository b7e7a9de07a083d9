"""Sampled trajectories and tabulated Jacobians of basis functions and dynamics.

The inverse methods consume a trajectory (x(t), u(t)) on a uniform grid
together with the Jacobians grad_x phi, grad_u phi, grad_x f, grad_u f
sampled along it.  Two tabulation paths exist: the exact LTI-quadratic
specialization (basis phi = (x_1^2, ..., x_n^2, u^2), dynamics f = Mx + Nu)
and a general callback interface for user-supplied smooth problems.

All downstream integrators run fixed-step RK4 with stage evaluations at
interval midpoints, so trajectories and tables carry half-step samples as
well; `Trajectory.with_midpoints` fills them (exactly for simulated data,
by cubic interpolation for loaded data).
"""
import csv
import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .numerics import format_float


class DimensionMismatch(ValueError):
    pass


class CallbackFailure(RuntimeError):
    """A user callback raised; carries the failing sample index."""

    def __init__(self, message, sample_index):
        super().__init__(message)
        self.sample_index = sample_index


class TooFewSamples(ValueError):
    pass


class ParseError(ValueError):
    pass


class NonUniformGrid(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Uniform sampling of [t0, tf] with step h and `count` points."""

    t0: float
    tf: float
    h: float
    count: int

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("step must be positive")
        if self.count != int(round((self.tf - self.t0) / self.h)) + 1:
            raise ValueError("count inconsistent with span and step")

    @classmethod
    def from_span(cls, t0, tf, h):
        """Grid over [t0, tf] with step h; tf is snapped onto the grid."""
        count = int(round((tf - t0) / h)) + 1
        if count < 2:
            raise ValueError("horizon shorter than one step")
        return cls(t0=float(t0), tf=float(t0) + (count - 1) * float(h),
                   h=float(h), count=count)

    def times(self):
        return self.t0 + self.h * np.arange(self.count)

    def times_dense(self):
        """Grid refined by 2: all sample times plus interval midpoints."""
        return self.t0 + (self.h / 2.0) * np.arange(2 * self.count - 1)


def _interleave(main, mid):
    """Merge (count, ...) samples and (count-1, ...) midpoints into a dense series."""
    count = main.shape[0]
    dense = np.empty((2 * count - 1,) + main.shape[1:], dtype=main.dtype)
    dense[0::2] = main
    dense[1::2] = mid
    return dense


@dataclass
class Trajectory:
    """States/inputs on a grid, with optional ground-truth costates.

    `p_true` is only attached by forward simulation; it is scaled so that
    the minimum-principle stationarity residual vanishes identically on
    optimal data (p = 2*Pi*x for the LTI-quadratic problem).
    x_mid/u_mid hold half-step samples used by the RK4 integrators.
    """

    grid: TimeGrid
    x: np.ndarray
    u: np.ndarray
    p_true: np.ndarray = None
    x_mid: np.ndarray = None
    u_mid: np.ndarray = None

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.u = np.asarray(self.u, dtype=float)
        if self.u.ndim == 1:
            self.u = self.u[:, None]
        if self.x.shape[0] != self.grid.count or self.u.shape[0] != self.grid.count:
            raise DimensionMismatch("sample counts do not match the grid")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.u))):
            raise ValueError("trajectory contains non-finite entries")

    @property
    def n(self):
        return self.x.shape[1]

    @property
    def m(self):
        return self.u.shape[1]

    def with_midpoints(self):
        """Return a trajectory that carries half-step samples.

        Simulated trajectories already have them; loaded ones are densified
        with a not-a-knot cubic spline (O(h^4) interpolation error, matching
        the RK4 order of everything downstream).
        """
        if self.x_mid is not None and self.u_mid is not None:
            return self
        from scipy.interpolate import CubicSpline

        t = self.grid.times()
        tm = t[:-1] + self.grid.h / 2.0
        x_mid = CubicSpline(t, self.x, axis=0)(tm)
        u_mid = CubicSpline(t, self.u, axis=0)(tm)
        return replace(self, x_mid=x_mid, u_mid=u_mid)

    def x_dense(self):
        return _interleave(self.x, self.x_mid)

    def u_dense(self):
        return _interleave(self.u, self.u_mid)


@dataclass
class JacobianTable:
    """Jacobians of the basis functions and dynamics along a trajectory.

    Shapes (per sample): grad_x_phi (k, n), grad_u_phi (k, m),
    grad_x_f (n, n), grad_u_f (n, m).  `midpoints` is a second table
    sampled at interval midpoints (itself without midpoints).
    For the LTI-quadratic specialization `lti` is set and M, N are the
    constant dynamics matrices.
    """

    grad_x_phi: np.ndarray
    grad_u_phi: np.ndarray
    grad_x_f: np.ndarray
    grad_u_f: np.ndarray
    k: int
    midpoints: "JacobianTable" = None
    lti: bool = False
    M: np.ndarray = None
    N: np.ndarray = None

    @property
    def count(self):
        return self.grad_x_phi.shape[0]

    @property
    def n(self):
        return self.grad_x_f.shape[1]

    @property
    def m(self):
        return self.grad_u_f.shape[2]


def _lti_quadratic_samples(x, u, M, N):
    """Jacobian samples of phi=(x_1^2,...,x_n^2,u^2), f=Mx+Nu at (x, u) arrays."""
    count, n = x.shape
    k = n + 1
    gxp = np.zeros((count, k, n))
    idx = np.arange(n)
    gxp[:, idx, idx] = 2.0 * x
    gup = np.zeros((count, k, 1))
    gup[:, n, 0] = 2.0 * u[:, 0]
    gxf = np.broadcast_to(M, (count, n, n))
    guf = np.broadcast_to(N, (count, n, 1))
    return gxp, gup, gxf, guf


def tabulate_lti_quadratic(traj, prob):
    """Exact Jacobian tables for the LTI-quadratic problem (no differencing)."""
    if traj.m != 1:
        raise DimensionMismatch("LTI-quadratic mode expects a scalar input")
    M = np.asarray(prob.M, dtype=float)
    N = np.asarray(prob.N, dtype=float).reshape(traj.n, 1)
    if M.shape != (traj.n, traj.n):
        raise DimensionMismatch("dynamics matrix does not match the trajectory dimension")
    traj = traj.with_midpoints()
    k = traj.n + 1
    gxp, gup, gxf, guf = _lti_quadratic_samples(traj.x, traj.u, M, N)
    gxpm, gupm, gxfm, gufm = _lti_quadratic_samples(traj.x_mid, traj.u_mid, M, N)
    mid = JacobianTable(gxpm, gupm, gxfm, gufm, k=k, lti=True, M=M, N=N)
    return JacobianTable(gxp, gup, gxf, guf, k=k, midpoints=mid, lti=True, M=M, N=N)


def tabulate_general(traj, callbacks):
    """Sample user-supplied Jacobian evaluators along the trajectory.

    `callbacks` provides grad_x_phi(t, x, u), grad_u_phi(t, x, u),
    grad_x_f(t, x, u), grad_u_f(t, x, u) (attributes or mapping keys),
    each returning an array of the shapes documented on JacobianTable.
    Differentiability of the supplied model is the caller's concern.
    """
    traj = traj.with_midpoints()

    def get(name):
        if isinstance(callbacks, dict):
            return callbacks[name]
        return getattr(callbacks, name)

    fns = {name: get(name) for name in
           ("grad_x_phi", "grad_u_phi", "grad_x_f", "grad_u_f")}

    def sample(times, xs, us):
        out = {name: [] for name in fns}
        for i, (t, x, u) in enumerate(zip(times, xs, us)):
            for name, fn in fns.items():
                try:
                    out[name].append(np.asarray(fn(t, x, u), dtype=float))
                except Exception as exc:
                    raise CallbackFailure(
                        "%s failed at sample %d (t=%.6g): %s" % (name, i, t, exc), i
                    ) from exc
        return {name: np.stack(vals) for name, vals in out.items()}

    t = traj.grid.times()
    tm = t[:-1] + traj.grid.h / 2.0
    main = sample(t, traj.x, traj.u)
    k = main["grad_x_phi"].shape[1]
    mids = sample(tm, traj.x_mid, traj.u_mid)
    mid = JacobianTable(mids["grad_x_phi"], mids["grad_u_phi"],
                        mids["grad_x_f"], mids["grad_u_f"], k=k)
    return JacobianTable(main["grad_x_phi"], main["grad_u_phi"],
                         main["grad_x_f"], main["grad_u_f"], k=k, midpoints=mid)


# 4th-order finite-difference stencils (central; one-sided at the edges)
_FD_CENTRAL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_FD_FORWARD = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_FD_FORWARD1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0


def derivative_series(samples, grid):
    """d/dt of a sampled series by 4th-order finite differences.

    Interior points use the 5-point central stencil; the two samples at
    each edge use 5-point one-sided stencils so no grid points are lost.
    """
    samples = np.asarray(samples, dtype=float)
    count = samples.shape[0]
    if count < 5:
        raise TooFewSamples("need at least 5 samples for 4th-order differences")
    flat = samples.reshape(count, -1)
    d = np.empty_like(flat)
    h = grid.h
    d[2:-2] = (flat[:-4] * _FD_CENTRAL[0] + flat[1:-3] * _FD_CENTRAL[1]
               + flat[3:-1] * _FD_CENTRAL[3] + flat[4:] * _FD_CENTRAL[4]) / h
    d[0] = _FD_FORWARD @ flat[:5] / h
    d[1] = _FD_FORWARD1 @ flat[:5] / h
    d[-1] = -(_FD_FORWARD @ flat[-1:-6:-1]) / h
    d[-2] = -(_FD_FORWARD1 @ flat[-1:-6:-1]) / h
    return d.reshape(samples.shape)


def save_trajectory(traj, path, fmt=None):
    """Write a trajectory as CSV (t, x1..xn, u) or JSON (adds the grid and p_true)."""
    fmt = fmt or os.path.splitext(path)[1].lstrip(".").lower() or "csv"
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t"] + ["x%d" % (j + 1) for j in range(traj.n)] + ["u"])
            for t, xr, ur in zip(traj.grid.times(), traj.x, traj.u):
                writer.writerow([format_float(t)] + [format_float(v) for v in xr]
                                + [format_float(ur[0])])
    elif fmt == "json":
        doc = {
            "grid": {"t0": traj.grid.t0, "tf": traj.grid.tf,
                     "h": traj.grid.h, "count": traj.grid.count},
            "t": traj.grid.times().tolist(),
            "x": traj.x.tolist(),
            "u": traj.u[:, 0].tolist(),
        }
        if traj.p_true is not None:
            doc["p_true"] = traj.p_true.tolist()
        with open(path, "w") as fh:
            json.dump(doc, fh)
            fh.write("\n")
    else:
        raise ValueError("unknown trajectory format %r" % fmt)


def _grid_from_times(t):
    t = np.asarray(t, dtype=float)
    if t.size < 2:
        raise ParseError("trajectory needs at least two samples")
    h = t[1] - t[0]
    if h <= 0:
        raise NonUniformGrid("time column must be strictly increasing")
    if np.max(np.abs(np.diff(t) - h)) > 1e-9 * h:
        raise NonUniformGrid("time column is not uniformly spaced")
    return TimeGrid(t0=float(t[0]), tf=float(t[0]) + (t.size - 1) * float(h),
                    h=float(h), count=t.size)


def load_trajectory(path, fmt=None):
    """Read a trajectory written by save_trajectory; validates grid uniformity."""
    fmt = fmt or os.path.splitext(path)[1].lstrip(".").lower() or "csv"
    if fmt == "csv":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ParseError("empty trajectory file: %s" % path)
        header, data = rows[0], rows[1:]
        if not header or header[0] != "t" or len(header) < 3 or header[-1] != "u":
            raise ParseError("unexpected trajectory header: %r" % header)
        if not data:
            raise ParseError("trajectory file has no samples: %s" % path)
        try:
            arr = np.array([[float(v) for v in row] for row in data])
        except (ValueError, IndexError) as exc:
            raise ParseError("malformed trajectory row: %s" % exc) from exc
        if arr.shape[1] != len(header):
            raise ParseError("row width does not match the header")
        grid = _grid_from_times(arr[:, 0])
        return Trajectory(grid=grid, x=arr[:, 1:-1], u=arr[:, -1])
    if fmt == "json":
        with open(path) as fh:
            text = fh.read()
        if not text.strip():
            raise ParseError("empty trajectory file: %s" % path)
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError("invalid JSON trajectory: %s" % exc) from exc
        try:
            grid = _grid_from_times(doc["t"])
            x = np.array(doc["x"], dtype=float)
            u = np.array(doc["u"], dtype=float)
        except KeyError as exc:
            raise ParseError("missing trajectory field: %s" % exc) from exc
        p = np.array(doc["p_true"], dtype=float) if "p_true" in doc else None
        return Trajectory(grid=grid, x=x, u=u, p_true=p)
    raise ValueError("unknown trajectory format %r" % fmt)
