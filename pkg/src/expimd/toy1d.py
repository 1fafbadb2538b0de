"""Minimal 1D Langevin driver for exercising metadynamics in isolation.

A single classical particle in an analytic potential, with the particle
position itself as the collective variable. This is the cheapest system on
which the well-tempered flattening law p_V(x) ~ p(x)^{1/gamma} and the
frozen-bias reweighting identity can be checked against brute-force
quadrature of the Boltzmann density.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from ._kernels import _grid_deriv, _grid_value
from .metadynamics import BiasState

__all__ = ["double_well", "double_well_gradient", "run_biased_1d",
           "boltzmann_density"]


def double_well(x, barrier=5.0, x0=1.0):
    """V(x) = barrier * ((x/x0)^2 - 1)^2; minima at +-x0, barrier at 0."""
    t = (np.asarray(x) / x0) ** 2 - 1.0
    return barrier * t * t


def double_well_gradient(x, barrier=5.0, x0=1.0):
    x = np.asarray(x)
    return 4.0 * barrier * x * ((x / x0) ** 2 - 1.0) / x0**2


@njit(cache=True, fastmath=False)
def _run_1d_chunk(x, p, nsteps, dt, mass, c1, noise_scale, noise,
                  barrier, x0, bias_on, grid_v, grid_s0, grid_inv_ds,
                  sample_stride, out_x, out_bias):
    half = 0.5 * dt
    inv_m = 1.0 / mass
    xx = x
    pp = p
    nsamp = 0
    inv_x02 = 1.0 / (x0 * x0)
    f = -4.0 * barrier * xx * (xx * xx * inv_x02 - 1.0) * inv_x02
    if bias_on:
        f -= _grid_deriv(grid_v, grid_s0, grid_inv_ds, xx)
    for it in range(nsteps):
        pp += half * f
        xx += half * pp * inv_m
        pp = c1 * pp + noise_scale * noise[it]
        xx += half * pp * inv_m
        f = -4.0 * barrier * xx * (xx * xx * inv_x02 - 1.0) * inv_x02
        if bias_on:
            f -= _grid_deriv(grid_v, grid_s0, grid_inv_ds, xx)
        pp += half * f
        if (it + 1) % sample_stride == 0:
            out_x[nsamp] = xx
            out_bias[nsamp] = _grid_value(grid_v, grid_s0, grid_inv_ds, xx) \
                if bias_on else 0.0
            nsamp += 1
    return xx, pp, nsamp


def run_biased_1d(beta, n_steps, bias: BiasState | None, seed=0, dt=0.05,
                  mass=1.0, friction=1.0, sample_stride=10, barrier=5.0,
                  x0=1.0, x_init=None, deposit=True):
    """Langevin run in the double well; returns (x samples, applied bias).

    With an unfrozen bias and deposit=True, hills are added every
    bias.tau_g steps at the instantaneous position.
    """
    rng = np.random.default_rng(seed)
    x = float(x_init) if x_init is not None else x0
    p = math.sqrt(mass / beta) * float(rng.standard_normal())
    c1 = math.exp(-friction * dt)
    noise_scale = math.sqrt((1.0 - c1 * c1) * mass / beta)
    xs, biases = [], []
    step = 0
    while step < n_steps:
        chunk = min(8192, n_steps - step)
        if bias is not None and not bias.frozen and deposit:
            tau = bias.tau_g
            chunk = min(chunk, (step // tau + 1) * tau - step)
        noise = rng.standard_normal(chunk)
        nmax = chunk // sample_stride + 1
        out_x = np.empty(nmax)
        out_b = np.empty(nmax)
        if bias is not None:
            args = (True, bias.grid_v, bias.grid_min, 1.0 / bias.grid_spacing)
        else:
            args = (False, np.zeros(2), 0.0, 1.0)
        x, p, nsamp = _run_1d_chunk(
            x, p, chunk, dt, mass, c1, noise_scale, noise, barrier, x0,
            *args, sample_stride, out_x, out_b,
        )
        xs.append(out_x[:nsamp].copy())
        biases.append(out_b[:nsamp].copy())
        step += chunk
        if (bias is not None and not bias.frozen and deposit
                and step % bias.tau_g == 0 and step > 0):
            bias.deposit(x, beta)
    return np.concatenate(xs), np.concatenate(biases)


def boltzmann_density(beta, edges, barrier=5.0, x0=1.0, n_quad=20001):
    """Bin-averaged unbiased density by brute-force quadrature."""
    lo, hi = edges[0], edges[-1]
    grid = np.linspace(lo, hi, n_quad)
    rho = np.exp(-beta * double_well(grid, barrier, x0))
    total = np.trapezoid(rho, grid)
    out = np.empty(len(edges) - 1)
    for i in range(len(out)):
        m = (grid >= edges[i]) & (grid <= edges[i + 1])
        out[i] = np.trapezoid(rho[m], grid[m]) / total / (edges[i + 1] - edges[i])
    return out
