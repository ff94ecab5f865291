"""Fused loops for the hot elementwise paths (batch norm + ReLU, group max)."""
import numpy as np
from numba import njit


@njit(cache=True)
def bn_relu_train_forward(z, gamma, beta, eps):
    R, C = z.shape
    mu = np.zeros(C)
    for i in range(R):
        for j in range(C):
            mu[j] += z[i, j]
    mu /= R
    var = np.zeros(C)
    for i in range(R):
        for j in range(C):
            d = z[i, j] - mu[j]
            var[j] += d * d
    var /= R
    inv = 1.0 / np.sqrt(var + eps)
    scale = gamma * inv
    shift = beta - mu * scale
    out = np.empty_like(z)
    for i in range(R):
        for j in range(C):
            v = z[i, j] * scale[j] + shift[j]
            out[i, j] = v if v > 0.0 else 0.0
    return out, mu, var, inv


@njit(cache=True)
def bn_relu_train_backward(g, z, out, mu, inv, gamma):
    R, C = z.shape
    s_g = np.zeros(C)
    s_gx = np.zeros(C)
    for i in range(R):
        for j in range(C):
            if out[i, j] > 0.0:
                gv = g[i, j]
                s_g[j] += gv
                s_gx[j] += gv * (z[i, j] - mu[j]) * inv[j]
    a = gamma * inv
    m_g = s_g / R
    m_gx = s_gx / R
    dz = np.empty_like(z)
    for i in range(R):
        for j in range(C):
            gv = g[i, j] if out[i, j] > 0.0 else 0.0
            xh = (z[i, j] - mu[j]) * inv[j]
            dz[i, j] = a[j] * (gv - m_g[j] - xh * m_gx[j])
    return dz, s_gx, s_g


@njit(cache=True)
def affine_relu_forward(z, scale, shift):
    R, C = z.shape
    out = np.empty_like(z)
    for i in range(R):
        for j in range(C):
            v = z[i, j] * scale[j] + shift[j]
            out[i, j] = v if v > 0.0 else 0.0
    return out


@njit(cache=True)
def group_max_forward(y, groups, size):
    C = y.shape[1]
    pooled = np.empty((groups, C))
    arg = np.zeros((groups, C), dtype=np.int32)
    for gi in range(groups):
        base = gi * size
        for j in range(C):
            pooled[gi, j] = y[base, j]
        for s in range(1, size):
            r = base + s
            for j in range(C):
                if y[r, j] > pooled[gi, j]:
                    pooled[gi, j] = y[r, j]
                    arg[gi, j] = s
    return pooled, arg


@njit(cache=True)
def group_max_backward(g, arg, size):
    groups, C = g.shape
    out = np.zeros((groups * size, C))
    for gi in range(groups):
        base = gi * size
        for j in range(C):
            out[base + arg[gi, j], j] = g[gi, j]
    return out
