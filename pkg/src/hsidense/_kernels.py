"""Compiled direct-loop convolution kernels (5-D, N×C×D×H×W layout).

2-D convolution runs through the same kernels with a unit depth axis.
Inputs must already be zero-padded. Loops walk output rows outermost so the
rows touched per step stay in cache; every reduction runs in a fixed order,
so results are bit-reproducible for a given input.
"""
import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def conv_forward(xp, w, sd, sh, sw, od, oh, ow):
    n_batch, n_in = xp.shape[0], xp.shape[1]
    n_out, _, kd, kh, kw = w.shape
    out = np.zeros((n_batch, n_out, od, oh, ow))
    for n in range(n_batch):
        for d in range(od):
            for h in range(oh):
                for f in range(n_out):
                    o = out[n, f, d, h]
                    for c in range(n_in):
                        for a in range(kd):
                            for b in range(kh):
                                row = xp[n, c, d * sd + a, h * sh + b]
                                for e in range(kw):
                                    k = w[f, c, a, b, e]
                                    if sw == 1:
                                        for j in range(ow):
                                            o[j] += k * row[j + e]
                                    else:
                                        for j in range(ow):
                                            o[j] += k * row[j * sw + e]
    return out


@numba.njit(cache=True, nogil=True)
def conv_grad_input(gout, w, sd, sh, sw, pd, ph, pw):
    """Adjoint of ``conv_forward`` w.r.t. the padded input (shape pd×ph×pw)."""
    n_batch, n_out, od, oh, ow = gout.shape
    _, n_in, kd, kh, kw = w.shape
    gxp = np.zeros((n_batch, n_in, pd, ph, pw))
    for n in range(n_batch):
        for d in range(od):
            for h in range(oh):
                for f in range(n_out):
                    g = gout[n, f, d, h]
                    for c in range(n_in):
                        for a in range(kd):
                            for b in range(kh):
                                row = gxp[n, c, d * sd + a, h * sh + b]
                                for e in range(kw):
                                    k = w[f, c, a, b, e]
                                    if sw == 1:
                                        for j in range(ow):
                                            row[j + e] += k * g[j]
                                    else:
                                        for j in range(ow):
                                            row[j * sw + e] += k * g[j]
    return gxp


@numba.njit(cache=True, nogil=True)
def conv_grad_weight(gout, xp, sd, sh, sw, kd, kh, kw):
    n_batch, n_out, od, oh, ow = gout.shape
    n_in = xp.shape[1]
    # one lane-wise accumulator per kernel tap, summed across lanes at the end
    acc = np.zeros((n_out, n_in, kd, kh, kw, ow))
    for n in range(n_batch):
        for d in range(od):
            for h in range(oh):
                for c in range(n_in):
                    for a in range(kd):
                        for b in range(kh):
                            row = xp[n, c, d * sd + a, h * sh + b]
                            for f in range(n_out):
                                g = gout[n, f, d, h]
                                for e in range(kw):
                                    lane = acc[f, c, a, b, e]
                                    if sw == 1:
                                        for j in range(ow):
                                            lane[j] += g[j] * row[j + e]
                                    else:
                                        for j in range(ow):
                                            lane[j] += g[j] * row[j * sw + e]
    gw = np.zeros((n_out, n_in, kd, kh, kw))
    for f in range(n_out):
        for c in range(n_in):
            for a in range(kd):
                for b in range(kh):
                    for e in range(kw):
                        s = 0.0
                        for j in range(ow):
                            s += acc[f, c, a, b, e, j]
                        gw[f, c, a, b, e] = s
    return gw


@numba.njit(cache=True, nogil=True)
def bn_stats(x):
    """Per-channel mean and biased variance of an N×C×M array (two-pass)."""
    n_batch, n_ch, m = x.shape
    count = n_batch * m
    mean = np.zeros(n_ch)
    var = np.zeros(n_ch)
    for c in range(n_ch):
        s = 0.0
        for n in range(n_batch):
            row = x[n, c]
            for i in range(m):
                s += row[i]
        mu = s / count
        q = 0.0
        for n in range(n_batch):
            row = x[n, c]
            for i in range(m):
                t = row[i] - mu
                q += t * t
        mean[c] = mu
        var[c] = q / count
    return mean, var


@numba.njit(cache=True, nogil=True)
def bn_apply(x, mean, inv_std, gamma, beta):
    n_batch, n_ch, m = x.shape
    out = np.empty_like(x)
    for n in range(n_batch):
        for c in range(n_ch):
            scale = gamma[c] * inv_std[c]
            shift = beta[c] - mean[c] * scale
            row = x[n, c]
            o = out[n, c]
            for i in range(m):
                o[i] = row[i] * scale + shift
    return out


@numba.njit(cache=True, nogil=True)
def bn_backward(g, x, mean, inv_std, gamma, training):
    """Gradients (input, gamma, beta) of ``gamma * (x - mean) * inv_std + beta``.

    In training mode ``mean``/``inv_std`` are batch statistics and their
    dependence on ``x`` is included.
    """
    n_batch, n_ch, m = x.shape
    count = n_batch * m
    gx = np.empty_like(x)
    ggamma = np.zeros(n_ch)
    gbeta = np.zeros(n_ch)
    for c in range(n_ch):
        mu = mean[c]
        s = inv_std[c]
        sg = 0.0
        sgx = 0.0
        for n in range(n_batch):
            grow = g[n, c]
            xrow = x[n, c]
            for i in range(m):
                sg += grow[i]
                sgx += grow[i] * (xrow[i] - mu) * s
        gbeta[c] = sg
        ggamma[c] = sgx
        k = gamma[c] * s
        if training:
            mg = sg / count
            mgx = sgx / count
            for n in range(n_batch):
                grow = g[n, c]
                xrow = x[n, c]
                o = gx[n, c]
                for i in range(m):
                    o[i] = k * (grow[i] - mg - (xrow[i] - mu) * s * mgx)
        else:
            for n in range(n_batch):
                grow = g[n, c]
                o = gx[n, c]
                for i in range(m):
                    o[i] = k * grow[i]
    return gx, ggamma, gbeta
