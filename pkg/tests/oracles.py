"""Slow, direct reference implementations used only by the tests.

Nothing here imports the package; each oracle follows the textbook
definition with explicit loops so it shares no code path with the
vectorized implementation it checks.
"""

from __future__ import annotations

import math

import numpy as np
from PIL import Image, ImageDraw


def matmul_loops(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def conv2d_loops(x, w, stride=(1, 1), pad=(0, 0), wrap=False):
    """Cross-correlation of ``C×H×W`` with ``K×C×kh×kw``; zero rows, optional circular columns."""
    C, H, W = x.shape
    K, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    out = np.zeros((K, Ho, Wo))
    for k in range(K):
        for i in range(Ho):
            for j in range(Wo):
                s = 0.0
                for c in range(C):
                    for a in range(kh):
                        for b in range(kw):
                            r = i * sh + a - ph
                            q = j * sw + b - pw
                            if r < 0 or r >= H:
                                continue
                            if wrap:
                                q %= W
                            elif q < 0 or q >= W:
                                continue
                            s += w[k, c, a, b] * x[c, r, q]
                out[k, i, j] = s
    return out


def dft2_centered(x):
    """Quadruple-loop DFT with the zero frequency moved to (H//2, W//2)."""
    H, W = x.shape
    out = np.zeros((H, W), dtype=complex)
    for u in range(H):
        for v in range(W):
            s = 0j
            for r in range(H):
                for c in range(W):
                    s += x[r, c] * complex(math.cos(-2 * math.pi * (u * r / H + v * c / W)),
                                           math.sin(-2 * math.pi * (u * r / H + v * c / W)))
            out[(u + H // 2) % H, (v + W // 2) % W] = s
    return out


def idft2_centered(s):
    H, W = s.shape
    out = np.zeros((H, W), dtype=complex)
    for r in range(H):
        for c in range(W):
            acc = 0j
            for uc in range(H):
                for vc in range(W):
                    u, v = uc - H // 2, vc - W // 2
                    acc += s[uc, vc] * complex(math.cos(2 * math.pi * (u * r / H + v * c / W)),
                                               math.sin(2 * math.pi * (u * r / H + v * c / W)))
            out[r, c] = acc / (H * W)
    return out


def attention_loops(x, wq, wk, wv, wo, heads):
    """Multi-head self-attention with one explicit loop per head and per query."""
    N, d = x.shape
    dh = d // heads
    q, k, v = x @ wq, x @ wk, x @ wv
    concat = np.zeros((N, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(N):
            scores = np.array([np.dot(q[i, sl], k[j, sl]) / math.sqrt(dh) for j in range(N)])
            e = np.exp(scores - scores.max())
            p = e / e.sum()
            concat[i, sl] = sum(p[j] * v[j, sl] for j in range(N))
    return concat @ wo


def interp_endpoint(x, n):
    """Endpoint-aligned linear resampling of a 1D signal via np.interp."""
    L = len(x)
    if L == 1:
        return np.full(n, x[0])
    t = np.linspace(0, L - 1, n)
    return np.interp(t, np.arange(L), x)


def adam_scalar_trace(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        theta = theta - lr * mh / (math.sqrt(vh) + eps)
        out.append(theta)
    return out


def raster_iou(a, b, res=4096):
    """IoU of two polygons drawn with PIL on a ``res×res`` canvas over their joint box."""
    pts = np.vstack([a, b])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    scale = (res - 1) / max(hi - lo)

    def draw(poly):
        im = Image.new("1", (res, res), 0)
        ImageDraw.Draw(im).polygon([tuple((p - lo) * scale) for p in poly], fill=1)
        return np.asarray(im, dtype=bool)

    ma, mb = draw(a), draw(b)
    return (ma & mb).sum() / (ma | mb).sum()


def shoelace(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * sum(x[i] * y[(i + 1) % len(x)] - x[(i + 1) % len(x)] * y[i] for i in range(len(x)))


def random_convex_polygon(rng, n=None, center=(0.0, 0.0), scale=1.0):
    """Convex polygon from sorted random angles on a jittered circle (counter-clockwise)."""
    n = n or int(rng.integers(3, 9))
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    while np.min(np.diff(np.concatenate([ang, ang[:1] + 2 * np.pi]))) < 0.15:
        ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    r = scale
    return np.stack([center[0] + r * np.cos(ang), center[1] + r * np.sin(ang)], axis=1)
