"""Numba inner loops for the path-integral Langevin integrator.

The python layer owns all randomness (noise is pre-generated per chunk from
a numpy Generator, which keeps runs deterministic and restartable) and all
metadynamics bookkeeping (hills are deposited between chunks; the kernel
only reads the accumulated bias grid). fastmath stays off: bit-for-bit
reproducibility is part of the contract.
"""

import numpy as np
from numba import njit

POT_FREE = 0
POT_HARMONIC = 1
POT_DOT = 2

TOPO_OO = 0
TOPO_CONNECTED = 1


@njit(cache=True, fastmath=False)
def _pair_energy_grad(pot_code, pp, r1, r2, g1, g2):
    """V(r1, r2) for one bead slice; gradients written into g1, g2."""
    nd = r1.shape[0]
    v = 0.0
    for d in range(nd):
        g1[d] = 0.0
        g2[d] = 0.0
    if pot_code == POT_HARMONIC:
        c = pp[0]  # m * omega^2
        for d in range(nd):
            v += 0.5 * c * (r1[d] * r1[d] + r2[d] * r2[d])
            g1[d] = c * r1[d]
            g2[d] = c * r2[d]
    elif pot_code == POT_DOT:
        cx = pp[0]  # m* wx^2
        cy = pp[1]  # m* wy^2
        pref = pp[2]
        a2 = pp[3]
        v += 0.5 * (cx * (r1[0] * r1[0] + r2[0] * r2[0])
                    + cy * (r1[1] * r1[1] + r2[1] * r2[1]))
        g1[0] = cx * r1[0]
        g2[0] = cx * r2[0]
        g1[1] = cy * r1[1]
        g2[1] = cy * r2[1]
        d2 = a2
        for d in range(nd):
            dr = r1[d] - r2[d]
            d2 += dr * dr
        inv = 1.0 / np.sqrt(d2)
        v += pref * inv
        inv3 = pref * inv / d2
        for d in range(nd):
            dr = r1[d] - r2[d]
            g1[d] += -inv3 * dr
            g2[d] += inv3 * dr
    return v


@njit(cache=True, fastmath=False)
def _cv_value(pos, kspring):
    """Four-bead exchange variable s = V_O - V_oo."""
    P = pos.shape[1]
    nd = pos.shape[2]
    s = 0.0
    for d in range(nd):
        r1a = pos[0, 0, d]
        r1b = pos[0, P - 1, d]
        r2a = pos[1, 0, d]
        r2b = pos[1, P - 1, d]
        s += ((r2a - r1b) ** 2 + (r1a - r2b) ** 2
              - (r1a - r1b) ** 2 - (r2a - r2b) ** 2)
    return kspring * s


@njit(cache=True, fastmath=False)
def _grid_value(grid_v, s0, inv_ds, s):
    """Catmull-Rom read of the bias grid; constant beyond the edges."""
    n = grid_v.shape[0]
    t = (s - s0) * inv_ds
    if t <= 0.0:
        return grid_v[0]
    if t >= n - 1.0:
        return grid_v[n - 1]
    i = int(t)
    x = t - i
    i0 = i - 1 if i >= 1 else 0
    i2 = i + 1
    i3 = i + 2 if i + 2 <= n - 1 else n - 1
    v0 = grid_v[i0]
    v1 = grid_v[i]
    v2 = grid_v[i2]
    v3 = grid_v[i3]
    x2 = x * x
    x3 = x2 * x
    return (v1 + 0.5 * x * (v2 - v0)
            + 0.5 * x2 * (2.0 * v0 - 5.0 * v1 + 4.0 * v2 - v3)
            + 0.5 * x3 * (-v0 + 3.0 * v1 - 3.0 * v2 + v3))


@njit(cache=True, fastmath=False)
def _grid_deriv(grid_v, s0, inv_ds, s):
    n = grid_v.shape[0]
    t = (s - s0) * inv_ds
    if t <= 0.0 or t >= n - 1.0:
        return 0.0
    i = int(t)
    x = t - i
    i0 = i - 1 if i >= 1 else 0
    i2 = i + 1
    i3 = i + 2 if i + 2 <= n - 1 else n - 1
    v0 = grid_v[i0]
    v1 = grid_v[i]
    v2 = grid_v[i2]
    v3 = grid_v[i3]
    x2 = x * x
    return ((-1.5 * x2 + 2.0 * x - 0.5) * v0
            + (4.5 * x2 - 5.0 * x) * v1
            + (-4.5 * x2 + 4.0 * x + 0.5) * v2
            + (1.5 * x2 - x) * v3) * inv_ds


@njit(cache=True, fastmath=False)
def _compute_force(pos, force, kspring, inv_p, topo, pot_code, pp,
                   bias_on, grid_v, grid_s0, grid_inv_ds,
                   wall_on, s_lo, s_hi, wall_k, g1, g2):
    P = pos.shape[1]
    nd = pos.shape[2]
    two_k = 2.0 * kspring
    if topo == TOPO_OO:
        for n in range(2):
            for i in range(P):
                ip = i + 1 if i + 1 < P else 0
                im = i - 1 if i >= 1 else P - 1
                for d in range(nd):
                    force[n, i, d] = -two_k * (2.0 * pos[n, i, d]
                                               - pos[n, ip, d] - pos[n, im, d])
    else:
        # single 2P ring ordered (particle 1 beads, then particle 2 beads)
        twop = 2 * P
        for j in range(twop):
            jp = j + 1 if j + 1 < twop else 0
            jm = j - 1 if j >= 1 else twop - 1
            n = j // P
            i = j - n * P
            npn = jp // P
            ipn = jp - npn * P
            npm = jm // P
            ipm = jm - npm * P
            for d in range(nd):
                force[n, i, d] = -two_k * (2.0 * pos[n, i, d]
                                           - pos[npn, ipn, d] - pos[npm, ipm, d])
    if pot_code != POT_FREE:
        for i in range(P):
            _pair_energy_grad(pot_code, pp, pos[0, i], pos[1, i], g1, g2)
            for d in range(nd):
                force[0, i, d] -= inv_p * g1[d]
                force[1, i, d] -= inv_p * g2[d]
    if bias_on or wall_on:
        s = _cv_value(pos, kspring)
        dv = 0.0
        if bias_on:
            dv = _grid_deriv(grid_v, grid_s0, grid_inv_ds, s)
        if wall_on:
            if s < s_lo:
                dv += wall_k * (s - s_lo)
            elif s > s_hi:
                dv += wall_k * (s - s_hi)
        if dv != 0.0:
            for d in range(nd):
                r1a = pos[0, 0, d]
                r1b = pos[0, P - 1, d]
                r2a = pos[1, 0, d]
                r2b = pos[1, P - 1, d]
                force[0, 0, d] -= dv * two_k * (r1b - r2b)
                force[0, P - 1, d] -= dv * two_k * (r1a - r2a)
                force[1, 0, d] -= dv * two_k * (r2b - r1b)
                force[1, P - 1, d] -= dv * two_k * (r2a - r1a)


@njit(cache=True, fastmath=False)
def integrate_chunk(pos, mom, force, nsteps, step0, dt, mass, c1, noise_scale,
                    noise, kspring, topo, pot_code, pp,
                    bias_on, grid_v, grid_s0, grid_inv_ds,
                    wall_on, s_lo, s_hi, wall_k,
                    sample_stride, burn_in,
                    out_step, out_s, out_pot, out_spring, out_viroo, out_viro,
                    out_bias, out_snap, store_mom, out_snap_mom):
    """BAOAB Langevin chunk; returns the number of samples written.

    Samples are taken when the global step index (step0 + local + 1) is a
    multiple of sample_stride and past burn_in. Snapshot buffers must be
    large enough for nsteps // sample_stride + 1 samples.
    """
    P = pos.shape[1]
    nd = pos.shape[2]
    half = 0.5 * dt
    inv_mass = 1.0 / mass
    inv_p = 1.0 / P
    thermostat = (c1 != 1.0) or (noise_scale != 0.0)
    g1 = np.empty(nd)
    g2 = np.empty(nd)
    grad = np.empty((2, P, nd))
    _compute_force(pos, force, kspring, inv_p, topo, pot_code, pp,
                   bias_on, grid_v, grid_s0, grid_inv_ds,
                   wall_on, s_lo, s_hi, wall_k, g1, g2)
    nsamp = 0
    for it in range(nsteps):
        for n in range(2):
            for i in range(P):
                for d in range(nd):
                    p = mom[n, i, d] + half * force[n, i, d]
                    x = pos[n, i, d] + half * p * inv_mass
                    if thermostat:
                        p = c1 * p + noise_scale * noise[it, n, i, d]
                    pos[n, i, d] = x + half * p * inv_mass
                    mom[n, i, d] = p
        _compute_force(pos, force, kspring, inv_p, topo, pot_code, pp,
                       bias_on, grid_v, grid_s0, grid_inv_ds,
                       wall_on, s_lo, s_hi, wall_k, g1, g2)
        for n in range(2):
            for i in range(P):
                for d in range(nd):
                    mom[n, i, d] += half * force[n, i, d]
        gstep = step0 + it + 1
        if gstep > burn_in and gstep % sample_stride == 0:
            s = _cv_value(pos, kspring)
            spring = 0.0
            for n in range(2):
                for i in range(P):
                    ip = i + 1 if i + 1 < P else 0
                    for d in range(nd):
                        diff = pos[n, ip, d] - pos[n, i, d]
                        spring += diff * diff
            spring *= kspring
            pot = 0.0
            if pot_code != POT_FREE:
                for i in range(P):
                    pot += _pair_energy_grad(pot_code, pp, pos[0, i], pos[1, i],
                                             g1, g2)
                    for d in range(nd):
                        grad[0, i, d] = g1[d]
                        grad[1, i, d] = g2[d]
                pot *= inv_p
            else:
                for n in range(2):
                    for i in range(P):
                        for d in range(nd):
                            grad[n, i, d] = 0.0
            vir_oo = 0.0
            vir_o = 0.0
            if pot_code != POT_FREE:
                inv_2p = 0.5 * inv_p
                for d in range(nd):
                    c1d = 0.0
                    c2d = 0.0
                    for i in range(P):
                        c1d += pos[0, i, d]
                        c2d += pos[1, i, d]
                    c1d *= inv_p
                    c2d *= inv_p
                    com = 0.5 * (c1d + c2d)
                    for i in range(P):
                        vir_oo += (pos[0, i, d] - c1d) * grad[0, i, d]
                        vir_oo += (pos[1, i, d] - c2d) * grad[1, i, d]
                        vir_o += (pos[0, i, d] - com) * grad[0, i, d]
                        vir_o += (pos[1, i, d] - com) * grad[1, i, d]
                vir_oo *= inv_2p
                vir_o *= inv_2p
            bias_v = 0.0
            if bias_on:
                bias_v = _grid_value(grid_v, grid_s0, grid_inv_ds, s)
            out_step[nsamp] = gstep
            out_s[nsamp] = s
            out_pot[nsamp] = pot
            out_spring[nsamp] = spring
            out_viroo[nsamp] = vir_oo
            out_viro[nsamp] = vir_o
            out_bias[nsamp] = bias_v
            for n in range(2):
                for i in range(P):
                    for d in range(nd):
                        out_snap[nsamp, n, i, d] = pos[n, i, d]
                        if store_mom:
                            out_snap_mom[nsamp, n, i, d] = mom[n, i, d]
            nsamp += 1
    return nsamp
