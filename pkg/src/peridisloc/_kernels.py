"""Numba kernels for the pairwise peridynamic loops.

Pairs are visited once through the forward half-stencil and scattered to both
ends.  Nodes are grouped in slabs along grid axis 0 no thinner than the
stencil reach; even slabs run concurrently, then odd slabs, so no two threads
ever write the same node and every node sees the same summation order for any
thread count.
"""
import os

import numba
import numpy as np
from numba import njit, prange

if "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@njit(cache=True, parallel=True, fastmath=False)
def dilatation_sums(u, shape, off, xi, xlen, wxv, codes, burgers, slab, out):
    n0, n1, n2 = shape[0], shape[1], shape[2]
    nh = off.shape[0]
    nd = codes.shape[0]
    nslab = (n0 + slab - 1) // slab
    out[:] = 0.0
    for phase in range(2):
        count = (nslab - phase + 1) // 2
        for q in prange(count):
            s = 2 * q + phase
            a_end = min((s + 1) * slab, n0)
            for a in range(s * slab, a_end):
                for b in range(n1):
                    for c in range(n2):
                        i = (a * n1 + b) * n2 + c
                        acc = 0.0
                        for h in range(nh):
                            a2 = a + off[h, 0]
                            b2 = b + off[h, 1]
                            c2 = c + off[h, 2]
                            if a2 >= n0 or b2 < 0 or b2 >= n1 or c2 < 0 or c2 >= n2:
                                continue
                            j = (a2 * n1 + b2) * n2 + c2
                            y0 = xi[h, 0] + u[j, 0] - u[i, 0]
                            y1 = xi[h, 1] + u[j, 1] - u[i, 1]
                            y2 = xi[h, 2] + u[j, 2] - u[i, 2]
                            for d in range(nd):
                                g = codes[d, i, h]
                                if g != 0:
                                    y0 -= g * burgers[d, 0]
                                    y1 -= g * burgers[d, 1]
                                    y2 -= g * burgers[d, 2]
                            e = np.sqrt(y0 * y0 + y1 * y1 + y2 * y2) - xlen[h]
                            acc += wxv[h] * e
                            out[j] += wxv[h] * e
                        out[i] += acc


@njit(cache=True, parallel=True, fastmath=False)
def pair_forces(u, shape, off, xi, xlen, w, vol, codes, burgers, slab,
                theta, coef, alpha, force, energy, stress, status):
    """Accumulate force density; optionally deviatoric energy and virial stress.

    ``coef[i]`` multiplies ``w * x`` in the scalar force state of node i,
    ``alpha[i]`` its deviatoric coefficient.  ``energy``/``stress`` of length
    zero are skipped.
    """
    n0, n1, n2 = shape[0], shape[1], shape[2]
    nh = off.shape[0]
    nd = codes.shape[0]
    do_energy = energy.shape[0] > 0
    do_stress = stress.shape[0] > 0
    nslab = (n0 + slab - 1) // slab
    force[:, :] = 0.0
    if do_energy:
        energy[:] = 0.0
    if do_stress:
        stress[:, :] = 0.0
    for phase in range(2):
        count = (nslab - phase + 1) // 2
        for q in prange(count):
            s = 2 * q + phase
            a_end = min((s + 1) * slab, n0)
            for a in range(s * slab, a_end):
                for b in range(n1):
                    for c in range(n2):
                        i = (a * n1 + b) * n2 + c
                        ti = theta[i] / 3.0
                        ci = coef[i]
                        al_i = alpha[i]
                        for h in range(nh):
                            a2 = a + off[h, 0]
                            b2 = b + off[h, 1]
                            c2 = c + off[h, 2]
                            if a2 >= n0 or b2 < 0 or b2 >= n1 or c2 < 0 or c2 >= n2:
                                continue
                            j = (a2 * n1 + b2) * n2 + c2
                            y0 = xi[h, 0] + u[j, 0] - u[i, 0]
                            y1 = xi[h, 1] + u[j, 1] - u[i, 1]
                            y2 = xi[h, 2] + u[j, 2] - u[i, 2]
                            for d in range(nd):
                                g = codes[d, i, h]
                                if g != 0:
                                    y0 -= g * burgers[d, 0]
                                    y1 -= g * burgers[d, 1]
                                    y2 -= g * burgers[d, 2]
                            y = np.sqrt(y0 * y0 + y1 * y1 + y2 * y2)
                            if y == 0.0:
                                status[0] = 1
                                continue
                            x = xlen[h]
                            e = y - x
                            wh = w[h]
                            edi = e - ti * x
                            edj = e - theta[j] / 3.0 * x
                            t_ij = ci * wh * x + al_i * wh * edi
                            t_ji = coef[j] * wh * x + alpha[j] * wh * edj
                            fs = (t_ij + t_ji) * vol[h] / y
                            force[i, 0] += fs * y0
                            force[i, 1] += fs * y1
                            force[i, 2] += fs * y2
                            force[j, 0] -= fs * y0
                            force[j, 1] -= fs * y1
                            force[j, 2] -= fs * y2
                            if do_energy:
                                energy[i] += 0.5 * al_i * wh * edi * edi * vol[h]
                                energy[j] += 0.5 * alpha[j] * wh * edj * edj * vol[h]
                            if do_stress:
                                sf = 0.5 * fs
                                s00 = sf * y0 * y0
                                s11 = sf * y1 * y1
                                s22 = sf * y2 * y2
                                s01 = sf * y0 * y1
                                s02 = sf * y0 * y2
                                s12 = sf * y1 * y2
                                stress[i, 0] += s00
                                stress[i, 1] += s11
                                stress[i, 2] += s22
                                stress[i, 3] += s01
                                stress[i, 4] += s02
                                stress[i, 5] += s12
                                stress[j, 0] += s00
                                stress[j, 1] += s11
                                stress[j, 2] += s22
                                stress[j, 3] += s01
                                stress[j, 4] += s02
                                stress[j, 5] += s12
