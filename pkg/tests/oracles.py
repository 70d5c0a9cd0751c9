"""Independent reference implementations used to verify the library.

Everything here is written the slow, obvious way (explicit loops, no shared
code with the package) so that agreement between the two routes is evidence
of correctness rather than of shared bugs.
"""
import numpy as np


def conv2d_reference(x, w, b, stride, padding, groups):
    """Grouped 2-D cross-correlation computed with six nested loops.

    x: [N, Cin, H, W]; w: [Cout, Cin/groups, kh, kw]; b: [Cout] or None.
    Zero padding, floor-division output size.
    """
    n, cin, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    assert cin % groups == 0 and cout % groups == 0 and cg == cin // groups
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow), dtype=x.dtype)
    cout_per_group = cout // groups
    for ni in range(n):
        for co in range(cout):
            g = co // cout_per_group
            acc_base = 0.0 if b is None else b[co]
            for oy in range(oh):
                for ox in range(ow):
                    acc = acc_base
                    for ci_local in range(cg):
                        ci = g * cg + ci_local
                        for u in range(kh):
                            for v in range(kw):
                                iy = oy * stride - padding + u
                                ix = ox * stride - padding + v
                                if 0 <= iy < h and 0 <= ix < wd:
                                    acc += x[ni, ci, iy, ix] * w[co, ci_local, u, v]
                    out[ni, co, oy, ox] = acc
    return out


def avg_pool_reference(x, win, stride, padding=0):
    """Windowed mean with zero padding counted in the divisor."""
    n, c, h, w = x.shape
    padded = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    padded[:, :, padding : padding + h, padding : padding + w] = x
    ph, pw = padded.shape[2], padded.shape[3]
    oh = (ph - win) // stride + 1
    ow = (pw - win) // stride + 1
    out = np.zeros((n, c, oh, ow), dtype=x.dtype)
    for ni in range(n):
        for ci in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    block = padded[
                        ni, ci,
                        oy * stride : oy * stride + win,
                        ox * stride : ox * stride + win,
                    ]
                    out[ni, ci, oy, ox] = block.sum() / (win * win)
    return out


def spp_reference(x, levels):
    """Pyramid pooling by direct window enumeration.

    For each level n: window ceil(a/n), stride floor(a/n), n*n starts at
    i*stride, windows clipped at the boundary; means collected channel-major.
    """
    nb, k, a, a2 = x.shape
    assert a == a2
    feats = []
    for ni in range(nb):
        row = []
        for ci in range(k):
            for n in levels:
                win = -(-a // n)
                stride = a // n
                for gy in range(n):
                    for gx in range(n):
                        r0, c0 = gy * stride, gx * stride
                        r1, c1 = min(r0 + win, a), min(c0 + win, a)
                        row.append(x[ni, ci, r0:r1, c0:c1].mean())
        feats.append(row)
    return np.array(feats, dtype=x.dtype)


def matmul_reference(a, b):
    """Triple-loop matrix product."""
    n, d = a.shape
    d2, e = b.shape
    assert d == d2
    out = np.zeros((n, e), dtype=a.dtype)
    for i in range(n):
        for j in range(e):
            acc = 0.0
            for k in range(d):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


DIHEDRAL_NAMES = (
    "rot0", "rot90", "rot180", "rot270",
    "mirror", "mirror+rot90", "mirror+rot180", "mirror+rot270",
)


def dihedral_reference(arr, index):
    """Transform ``index`` of the square-symmetry group: 0-3 rotate the
    image counter-clockwise by 90 degrees ``index`` times, 4-7 mirror
    left-right first and then rotate (index - 4) times."""
    a = arr
    if index >= 4:
        a = np.fliplr(a)
        index -= 4
    return np.ascontiguousarray(np.rot90(a, index))


def numeric_gradient(f, x, h=1e-5):
    """Plain central differences, written independently of the package's
    gradient-check module."""
    x = np.asarray(x, dtype=np.float64).copy()
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        keep = x[i]
        x[i] = keep + h
        fp = f(x)
        x[i] = keep - h
        fm = f(x)
        x[i] = keep
        g[i] = (fp - fm) / (2.0 * h)
        it.iternext()
    return g


def max_rel_err(analytic, numeric, abs_floor=1e-8):
    """Worst symmetric relative error, treating tiny analytic entries
    absolutely (same convention the library documents)."""
    a = np.asarray(analytic).reshape(-1)
    n = np.asarray(numeric).reshape(-1)
    assert a.shape == n.shape
    worst = 0.0
    for ai, ni in zip(a, n):
        if abs(ai) < abs_floor:
            worst = max(worst, abs(ai - ni))
        else:
            worst = max(worst, abs(ai - ni) / max(abs(ai), abs(ni)))
    return worst
