"""Independent reference implementations used by the test-suite.

Everything here is deliberately naive (explicit Python loops, closed forms)
and shares no code with the package.
"""
import math

import numpy as np


def conv2d_loops(x, w, stride, padding):
    n, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, f, oh, ow))
    for b in range(n):
        for o in range(f):
            for i in range(oh):
                for j in range(ow):
                    s = 0.0
                    for ch in range(c):
                        for a in range(kh):
                            for e in range(kw):
                                s += xp[b, ch, i * stride + a, j * stride + e] * w[o, ch, a, e]
                    out[b, o, i, j] = s
    return out


def conv3d_loops(x, w, stride, padding):
    n, c, d, h, wd = x.shape
    f, _, kd, kh, kw = w.shape
    p = padding
    xp = np.zeros((n, c, d + 2 * p, h + 2 * p, wd + 2 * p))
    xp[:, :, p:p + d, p:p + h, p:p + wd] = x
    od = (d + 2 * p - kd) // stride + 1
    oh = (h + 2 * p - kh) // stride + 1
    ow = (wd + 2 * p - kw) // stride + 1
    out = np.zeros((n, f, od, oh, ow))
    for b in range(n):
        for o in range(f):
            for t in range(od):
                for i in range(oh):
                    for j in range(ow):
                        s = 0.0
                        for ch in range(c):
                            for q in range(kd):
                                for a in range(kh):
                                    for e in range(kw):
                                        s += xp[b, ch, t * stride + q, i * stride + a, j * stride + e] * w[o, ch, q, a, e]
                        out[b, o, t, i, j] = s
    return out


def batch_norm_formula(x, gamma, beta, eps=1e-5):
    """Per-channel normalisation written out element by element."""
    out = np.empty_like(x)
    c = x.shape[1]
    for ch in range(c):
        vals = x[:, ch].ravel().tolist()
        mean = math.fsum(vals) / len(vals)
        var = math.fsum((v - mean) ** 2 for v in vals) / len(vals)
        out[:, ch] = gamma[ch] * (x[:, ch] - mean) / math.sqrt(var + eps) + beta[ch]
    return out


def weighted_nll(logits, labels, weights):
    total = 0.0
    for z, y in zip(logits, labels):
        m = max(z)
        lse = m + math.log(sum(math.exp(v - m) for v in z))
        total += weights[y] * (lse - z[y])
    return total / len(labels)


def softmax_rows(z):
    out = []
    for row in z:
        e = [math.exp(v) for v in row]
        s = sum(e)
        out.append([v / s for v in e])
    return np.array(out)


def densenet_param_count(variant, init, growth, layers, bands):
    """Closed-form parameter count of the Densenet backbone + 2-logit head."""
    k = 27 if variant == "Densenet3D" else 9
    one = 1
    c_in = {"Densenet2D": bands, "Densenet2D_MS": 2, "Densenet3D": 1}[variant]
    total = init * c_in * k
    ch = init
    for i, n in enumerate(layers):
        for _ in range(n):
            total += 2 * ch + growth * ch * k
            ch += growth
        if i < 2:
            total += 2 * ch + (ch // 2) * ch * one
            ch //= 2
    total += 2 * ch
    total += 2 * ch + 2
    return total


def confusion(pred, truth):
    tp = sum(1 for p, t in zip(pred, truth) if p and t)
    fp = sum(1 for p, t in zip(pred, truth) if p and not t)
    tn = sum(1 for p, t in zip(pred, truth) if not p and not t)
    fn = sum(1 for p, t in zip(pred, truth) if not p and t)
    return tp, fp, tn, fn


def cubic_generalized_eigen(a, b):
    """Eigenpairs of ``a v = lam b v`` for 3x3 symmetric a, SPD b.

    Eigenvalues are the roots of det(a - lam b), a cubic whose coefficients
    are expanded by hand and solved with the trigonometric formula; vectors
    come from the cross product of two rows of (a - lam b). Vectors are
    b-normalised with a positive largest-magnitude entry.
    """
    def det3(m):
        return (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))

    # det(a - t b) = c3 t^3 + c2 t^2 + c1 t + c0, coefficients via 4-point interpolation
    ts = [0.0, 1.0, -1.0, 2.0]
    vals = [det3([[a[i][j] - t * b[i][j] for j in range(3)] for i in range(3)]) for t in ts]
    vander = np.array([[t ** 3, t ** 2, t, 1.0] for t in ts])
    c3, c2, c1, c0 = np.linalg.solve(vander, np.array(vals))
    # depressed cubic t = s - c2/(3 c3)
    p2, p1, p0 = c2 / c3, c1 / c3, c0 / c3
    q = (3 * p1 - p2 ** 2) / 9.0
    r = (9 * p2 * p1 - 27 * p0 - 2 * p2 ** 3) / 54.0
    theta = math.acos(max(-1.0, min(1.0, r / math.sqrt(-q ** 3))))
    roots = [2 * math.sqrt(-q) * math.cos((theta + 2 * math.pi * k) / 3) - p2 / 3 for k in range(3)]
    roots.sort(reverse=True)
    pairs = []
    for lam in roots:
        m = np.array(a) - lam * np.array(b)
        cands = [np.cross(m[0], m[1]), np.cross(m[0], m[2]), np.cross(m[1], m[2])]
        v = max(cands, key=lambda u: np.linalg.norm(u))
        v = v / math.sqrt(v @ np.array(b) @ v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        pairs.append((lam, v))
    return pairs
