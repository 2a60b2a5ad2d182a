"""Compiled inner loops for evaluating LUT arrays on binary activations.

Vertex tables ``V[m, u]`` hold the value of physical node ``m`` at vertex
``u``; bit ``k`` of ``u`` is set when input ``k`` is +1.  Activation inputs
occupy the low ``kx`` bits, parameter inputs the high bits.  Parameter inputs
may be real during training; ``wq[n, q]`` is then the multilinear weight of
parameter vertex ``q`` for logical operation ``n``.

Activations are stored feature-major, (F, B), so the per-op inner loops run
over contiguous samples.  Loops are single-threaded so accumulation order is
fixed.
"""
import numba
import numpy as np


@numba.njit(cache=True)
def lut_forward(xT, op_sel, op_phys, op_out, wq, V, n_out):
    """Feature-major evaluation: ``xT`` is (F, B) bits, the result (n_out, B).

    Also returns ``u[n, b]``, the activation vertex each op saw.
    """
    B = xT.shape[1]
    N, kx = op_sel.shape
    nq = wq.shape[1]
    nx = 1 << kx
    out = np.zeros((n_out, B))
    uu = np.empty((N, B), dtype=np.uint8)
    t = np.empty(nx)
    for n in range(N):
        u = uu[n]
        u[:] = xT[op_sel[n, 0]]
        for j in range(1, kx):
            r = xT[op_sel[n, j]]
            for b in range(B):
                u[b] |= r[b] << j
        # table of this op with its parameter word folded in
        m = op_phys[n]
        for v in range(nx):
            acc = 0.0
            for q in range(nq):
                acc += V[m, v + q * nx] * wq[n, q]
            t[v] = acc
        o = out[op_out[n]]
        for b in range(B):
            o[b] += t[u[b]]
    return out, uu


@numba.njit(cache=True)
def lut_backward(uu, op_sel, op_phys, op_out, wq, V, gT, need_x, n_in):
    """Gradients for ``lut_forward`` given upstream ``gT`` of shape (n_out, B)."""
    N, B = uu.shape
    kx = op_sel.shape[1]
    nq = wq.shape[1]
    nx = 1 << kx
    gV = np.zeros(V.shape)
    gwq = np.zeros(wq.shape)
    gx = np.zeros((n_in, B))
    h = np.empty(nx)  # upstream summed per vertex
    d = np.empty(nx)
    for n in range(N):
        g = gT[op_out[n]]
        u = uu[n]
        m = op_phys[n]
        h[:] = 0.0
        for b in range(B):
            h[u[b]] += g[b]
        for q in range(nq):
            acc = 0.0
            for v in range(nx):
                gV[m, v + q * nx] += h[v] * wq[n, q]
                acc += h[v] * V[m, v + q * nx]
            gwq[n, q] += acc
        if need_x:
            for j in range(kx):
                bit = 1 << j
                for v in range(nx):
                    hi = v | bit
                    acc = 0.0
                    for q in range(nq):
                        acc += (V[m, hi + q * nx] - V[m, (hi ^ bit) + q * nx]) * wq[n, q]
                    d[v] = 0.5 * acc
                r = gx[op_sel[n, j]]
                for b in range(B):
                    r[b] += g[b] * d[u[b]]
    return gV, gwq, gx


@numba.njit(cache=True)
def hard_counts(xbits, op_src, op_base, op_phys, op_out, masks, n_out):
    """Integer +/-1 sums of hardened LUTs.

    ``op_src[n, j]`` is the activation feeding LUT input ``j`` (or -1 when that
    input is a stored parameter bit or unused); ``op_base[n]`` holds the stored
    bits already shifted into place.  ``masks[m, u]`` is 0 or 1.
    """
    B = xbits.shape[0]
    N, width = op_src.shape
    out = np.zeros((B, n_out), dtype=np.int64)
    for b in range(B):
        for n in range(N):
            u = op_base[n]
            for j in range(width):
                s = op_src[n, j]
                if s >= 0:
                    u |= np.int64(xbits[b, s]) << j
            out[b, op_out[n]] += 2 * np.int64(masks[op_phys[n], u]) - 1
    return out
