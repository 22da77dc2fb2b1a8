"""Discrete norms on grid fields and on boundary traces.

Trace norms follow one fixed, versioned recipe so that both sides of every
stability comparison use the same discrete definition:

* H1((0,T) x bdry): trapezoid-in-time, surface-weighted values plus centered
  temporal and tangential first differences.
* H^{3/2}: temporal DFT with multiplier (1 + xi^2)^{3/4} per boundary point,
  plus the spatial first-difference seminorm integrated in time.
* t^{-1/2}-weighted: the t = 0 sample is weighted with t = dt/2 so the
  integrable singularity stays finite.
"""

from __future__ import annotations

import numpy as np

from .grid import Discretization


# -- grid-field norms (central differences per the project convention) -------

def _central_gradient_sq(field2d: np.ndarray, h: np.ndarray) -> np.ndarray:
    """|grad u|^2 at interior nodes via central differences (ghost-free)."""
    g = np.zeros_like(field2d)
    core = tuple(slice(1, -1) for _ in range(field2d.ndim))
    for a in range(field2d.ndim):
        up = tuple(slice(2, None) if b == a else slice(1, -1) for b in range(field2d.ndim))
        dn = tuple(slice(0, -2) if b == a else slice(1, -1) for b in range(field2d.ndim))
        g[core] += ((field2d[up] - field2d[dn]) / (2.0 * h[a])) ** 2
    return g


def grid_l2(u: np.ndarray, disc: Discretization, weight: np.ndarray | None = None) -> float:
    q = disc.w_vol * u * u
    if weight is not None:
        q = q * weight
    return float(np.sqrt(q.sum()))


def grid_h1(u: np.ndarray, disc: Discretization) -> float:
    g = disc.grid
    grad2 = _central_gradient_sq(g.reshape(u), g.h).ravel()
    return float(np.sqrt((disc.w_vol * (u * u + grad2)).sum()))


def grid_h2(u: np.ndarray, disc: Discretization) -> float:
    g = disc.grid
    f = g.reshape(u)
    lap = np.zeros_like(f)
    core = tuple(slice(1, -1) for _ in range(f.ndim))
    for a in range(f.ndim):
        up = tuple(slice(2, None) if b == a else slice(1, -1) for b in range(f.ndim))
        dn = tuple(slice(0, -2) if b == a else slice(1, -1) for b in range(f.ndim))
        lap[core] += (f[up] - 2.0 * f[core] + f[dn]) / g.h[a] ** 2
    h1 = grid_h1(u, disc)
    return float(np.sqrt(h1 * h1 + (disc.w_vol * lap.ravel() ** 2).sum()))


# -- time quadrature and difference operators on traces ----------------------

def time_weights(n_samples: int, dt: float) -> np.ndarray:
    w = np.full(n_samples, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def time_derivative(y: np.ndarray, dt: float) -> np.ndarray:
    """Centered in time, second-order one-sided at the ends.  y is (nt, nb)."""
    d = np.empty_like(y)
    d[1:-1] = (y[2:] - y[:-2]) / (2.0 * dt)
    d[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * dt)
    d[-1] = (3.0 * y[-1] - 4.0 * y[-2] + y[-3]) / (2.0 * dt)
    return d


def time_derivative_transpose(r: np.ndarray, dt: float) -> np.ndarray:
    """Exact transpose of ``time_derivative`` (needed by the misfit gradient)."""
    out = np.zeros_like(r)
    out[2:] += r[1:-1] / (2.0 * dt)
    out[:-2] -= r[1:-1] / (2.0 * dt)
    out[0] += -3.0 * r[0] / (2.0 * dt)
    out[1] += 4.0 * r[0] / (2.0 * dt)
    out[2] += -1.0 * r[0] / (2.0 * dt)
    out[-1] += 3.0 * r[-1] / (2.0 * dt)
    out[-2] += -4.0 * r[-1] / (2.0 * dt)
    out[-3] += 1.0 * r[-1] / (2.0 * dt)
    return out


def tangential_derivative(y: np.ndarray, ds: np.ndarray) -> np.ndarray:
    """Centered difference along the closed boundary cycle.  y is (nt, nb)."""
    span = ds + np.roll(ds, 1)  # distance from previous node to next node
    return (np.roll(y, -1, axis=1) - np.roll(y, 1, axis=1)) / span


def tangential_derivative_transpose(r: np.ndarray, ds: np.ndarray) -> np.ndarray:
    span = ds + np.roll(ds, 1)
    q = r / span
    return np.roll(q, 1, axis=1) - np.roll(q, -1, axis=1)


# -- the H1((0,T) x bdry) quadratic form, value + gradient consistent --------

class TraceH1Form:
    """Quadratic form ||y||^2 = sum w_t w_b (y^2 + (Dt y)^2 + (Ds y)^2).

    ``apply`` returns the gradient of ``0.5 * norm_sq`` so misfit values and
    adjoint sources come from literally the same quadrature.
    """

    def __init__(self, dt: float, n_samples: int, w_b: np.ndarray,
                 ds: np.ndarray | None):
        self.dt = dt
        self.w_t = time_weights(n_samples, dt)
        self.w_b = w_b
        self.ds = ds

    def _w(self) -> np.ndarray:
        return self.w_t[:, None] * self.w_b[None, :]

    def norm_sq(self, y: np.ndarray) -> float:
        w = self._w()
        total = float((w * y * y).sum())
        dty = time_derivative(y, self.dt)
        total += float((w * dty * dty).sum())
        if self.ds is not None:
            dsy = tangential_derivative(y, self.ds)
            total += float((w * dsy * dsy).sum())
        return total

    def apply(self, y: np.ndarray) -> np.ndarray:
        w = self._w()
        out = w * y
        out += time_derivative_transpose(w * time_derivative(y, self.dt), self.dt)
        if self.ds is not None:
            out += tangential_derivative_transpose(
                w * tangential_derivative(y, self.ds), self.ds)
        return out


# -- public trace norms -------------------------------------------------------

def trace_h1_norm(values: np.ndarray, dt: float, w_b: np.ndarray,
                  ds: np.ndarray | None) -> float:
    form = TraceH1Form(dt, values.shape[0], w_b, ds)
    return float(np.sqrt(form.norm_sq(values)))


def trace_h32_norm(values: np.ndarray, dt: float, T: float, w_b: np.ndarray,
                   ds: np.ndarray | None) -> float:
    nt = values.shape[0]
    Y = np.fft.rfft(values, axis=0)
    # discrete Parseval: sum |y|^2 dt = (dt/nt) * sum_k mult_k |Y_k|^2
    mult = np.full(Y.shape[0], 2.0)
    mult[0] = 1.0
    if nt % 2 == 0:
        mult[-1] = 1.0
    xi = 2.0 * np.pi * np.arange(Y.shape[0]) / T
    sob = (1.0 + xi * xi) ** 1.5
    temporal = (dt / nt) * ((mult * sob)[:, None] * np.abs(Y) ** 2).sum(axis=0)
    total = float((w_b * temporal).sum())
    if ds is not None:
        w_t = time_weights(nt, dt)
        dsy = tangential_derivative(values, ds)
        total += float((w_t[:, None] * w_b[None, :] * dsy * dsy).sum())
    return float(np.sqrt(total))


def trace_weighted_t_norm(values: np.ndarray, dt: float, w_b: np.ndarray) -> float:
    """|| t^{-1/2} d_t y ||_{L^2((0,T) x bdry)} with the t=0 sample at dt/2."""
    nt = values.shape[0]
    dty = time_derivative(values, dt)
    t = np.maximum(np.arange(nt) * dt, 0.5 * dt)
    w_t = time_weights(nt, dt)
    q = (w_t / t)[:, None] * w_b[None, :] * dty * dty
    return float(np.sqrt(q.sum()))
