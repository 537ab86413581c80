"""Independent loop-based reference implementations used by the tests.

Everything here is written directly from the defining formulas with plain
Python loops over numpy arrays (float64), deliberately sharing no code with
the package. Tolerances in the tests compare the vectorized implementations
against these.
"""

from __future__ import annotations

import math

import numpy as np

PATCH = 3
EPS = 1e-6
VAR_GUARD = 1e-12
ALPHA = 0.85


def _reflect(i: int, n: int) -> int:
    # numpy 'reflect' convention: edge sample not repeated
    if i < 0:
        return -i
    if i >= n:
        return 2 * n - 2 - i
    return i


def _patch_values(img: np.ndarray, c: int, y: int, x: int, k: int = PATCH):
    h, w = img.shape[1], img.shape[2]
    r = k // 2
    vals = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            vals.append(img[c, _reflect(y + dy, h), _reflect(x + dx, w)])
    return vals


def zncc_at(a: np.ndarray, b: np.ndarray, y: int, x: int, k: int = PATCH, eps: float = EPS) -> float:
    """Patch ZNCC at one pixel, averaged over channels; images are (C, H, W)."""
    n = k * k
    total = 0.0
    for c in range(a.shape[0]):
        va = _patch_values(a, c, y, x, k)
        vb = _patch_values(b, c, y, x, k)
        sa, sb = sum(va), sum(vb)
        num = sum(p * q for p, q in zip(va, vb)) - sa * sb / n
        var_a = max(sum(p * p for p in va) - sa * sa / n, 0.0)
        var_b = max(sum(q * q for q in vb) - sb * sb / n, 0.0)
        total += num / (math.sqrt(var_a + VAR_GUARD) * math.sqrt(var_b + VAR_GUARD) + eps)
    return total / a.shape[0]


def reconstruction_at(a: np.ndarray, b: np.ndarray, y: int, x: int, alpha: float = ALPHA) -> float:
    """Per-pixel reconstruction integrand alpha*(1-ZNCC)/2 + (1-alpha)*mean_c|a-b|."""
    l1 = sum(abs(a[c, y, x] - b[c, y, x]) for c in range(a.shape[0])) / a.shape[0]
    return alpha * (1.0 - zncc_at(a, b, y, x)) / 2.0 + (1.0 - alpha) * l1


def reconstruction_map_oracle(a: np.ndarray, b: np.ndarray, alpha: float = ALPHA) -> np.ndarray:
    h, w = a.shape[1], a.shape[2]
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            out[y, x] = reconstruction_at(a, b, y, x, alpha)
    return out


def masked_mean_oracle(values: np.ndarray, mask: np.ndarray) -> float:
    count = float(mask.sum())
    if count == 0:
        return 0.0
    return float((values * mask).sum() / count)


def smoothness_map_oracle(img: np.ndarray, d: np.ndarray) -> np.ndarray:
    """|dx d|*exp(-|dx I|) + |dy d|*exp(-|dy I|); last column/row terms are zero."""
    c, h, w = img.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            v = 0.0
            if x + 1 < w:
                gi = sum(abs(img[ch, y, x + 1] - img[ch, y, x]) for ch in range(c)) / c
                v += abs(d[y, x + 1] - d[y, x]) * math.exp(-gi)
            if y + 1 < h:
                gi = sum(abs(img[ch, y + 1, x] - img[ch, y, x]) for ch in range(c)) / c
                v += abs(d[y + 1, x] - d[y, x]) * math.exp(-gi)
            out[y, x] = v
    return out


def smoothness_loss_oracle(img: np.ndarray, d: np.ndarray) -> float:
    return float(smoothness_map_oracle(img, d).mean())


def warp_oracle(src: np.ndarray, disp: np.ndarray, direction: str = "left-ref"):
    """Bilinear horizontal warp with border clamping; returns (image, validity)."""
    c, h, w = src.shape
    sign = -1.0 if direction == "left-ref" else 1.0
    out = np.zeros_like(src)
    valid = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            xs = x + sign * disp[y, x]
            valid[y, x] = 1.0 if 0.0 <= xs <= w - 1 else 0.0
            xs_cl = min(max(xs, 0.0), float(w - 1))
            x0 = int(math.floor(xs_cl))
            x1 = min(x0 + 1, w - 1)
            frac = xs_cl - x0
            for ch in range(c):
                out[ch, y, x] = (1.0 - frac) * src[ch, y, x0] + frac * src[ch, y, x1]
    return out, valid


def reconstruction_loss_oracle(ref: np.ndarray, src: np.ndarray, disp: np.ndarray, alpha: float = ALPHA) -> float:
    recon, valid = warp_oracle(src, disp)
    rmap = reconstruction_map_oracle(ref, recon, alpha)
    return masked_mean_oracle(rmap, valid)


def mask_loss_oracle(
    left: np.ndarray,
    right: np.ndarray,
    rc_hard: np.ndarray,
    sm_hard: np.ndarray,
    d_ster: np.ndarray,
    d_mon: np.ndarray,
    alpha: float = ALPHA,
) -> float:
    """Reconstruction under the rc-selected map plus smoothness of the sm map."""
    d_rc = np.where(rc_hard > 0.5, d_ster, d_mon)
    d_sm = np.where(sm_hard > 0.5, d_ster, d_mon)
    return reconstruction_loss_oracle(left, right, d_rc, alpha) + smoothness_loss_oracle(left, d_sm)


def depth_loss_oracle(
    left: np.ndarray,
    right: np.ndarray,
    rc_hard: np.ndarray,
    sm_hard: np.ndarray,
    d_ster: np.ndarray,
    d_mon: np.ndarray,
    alpha: float = ALPHA,
) -> float:
    """Five terms, each averaged over its own support (empty support -> 0)."""
    warp_mon, valid_mon = warp_oracle(right, d_mon)
    warp_ster, valid_ster = warp_oracle(right, d_ster)

    term1 = masked_mean_oracle(reconstruction_map_oracle(left, warp_mon, alpha), valid_mon)
    term2 = masked_mean_oracle(
        reconstruction_map_oracle(warp_ster, warp_mon, alpha), rc_hard * valid_ster * valid_mon
    )
    term3 = smoothness_loss_oracle(left, d_mon)
    term4 = masked_mean_oracle(smoothness_map_oracle(warp_ster, d_mon), sm_hard * valid_ster)
    term5 = masked_mean_oracle(np.abs(d_ster - d_mon), rc_hard * sm_hard)
    return term1 + term2 + term3 + term4 + term5


def oracle_mask_oracle(
    left: np.ndarray, right: np.ndarray, d_ster: np.ndarray, d_mon: np.ndarray, alpha: float = ALPHA
) -> np.ndarray:
    """Brute-force greedy mask: recompute the integrand with a single-pixel swap."""
    h, w = d_mon.shape
    warp_mon, _ = warp_oracle(right, d_mon)
    warp_ster, _ = warp_oracle(right, d_ster)
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            base = reconstruction_at(left, warp_mon, y, x, alpha)
            swapped_img = warp_mon.copy()
            swapped_img[:, y, x] = warp_ster[:, y, x]
            swapped = reconstruction_at(left, swapped_img, y, x, alpha)
            out[y, x] = 1.0 if swapped <= base else 0.0
    return out


def fd_loss_oracle(teacher, student) -> float:
    total = 0.0
    for i, (t, s) in enumerate(zip(teacher, student)):
        diff_sum = 0.0
        n = 0
        flat_t, flat_s = t.ravel(), s.ravel()
        for a, b in zip(flat_t, flat_s):
            diff_sum += abs(a - b)
            n += 1
        total += (0.5 ** i) * diff_sum / n
    return total


def cd_loss_oracle(teacher, student) -> float:
    total = 0.0
    for t, s in zip(teacher, student):
        b, c = t.shape[0], t.shape[1]
        acc = 0.0
        for bi in range(b):
            for ci in range(c):
                wt_t = t[bi, ci].mean()
                wt_s = s[bi, ci].mean()
                acc += abs(wt_t - wt_s)
        total += acc / (b * c)
    return total


def _gram_normalized(level: np.ndarray) -> np.ndarray:
    c = level.shape[0]
    q = level.reshape(c, -1)
    z = np.zeros((c, c))
    for i in range(c):
        for j in range(c):
            z[i, j] = float(np.dot(q[i], q[j]))
    out = np.zeros_like(z)
    for i in range(c):
        norm = math.sqrt(float((z[i] * z[i]).sum()))
        out[i] = z[i] / max(norm, 1e-12)
    return out


def sd_loss_oracle(teacher, student) -> float:
    total = 0.0
    for t, s in zip(teacher, student):
        b, c = t.shape[0], t.shape[1]
        acc = 0.0
        for bi in range(b):
            diff = _gram_normalized(t[bi]) - _gram_normalized(s[bi])
            acc += math.sqrt(float((diff * diff).sum()))
        total += acc / b / (c * c)
    return total


def metrics_oracle(pred, gt, cap: float = 80.0):
    """Loop-based depth metrics; returns dict or raises on an empty valid set."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()
    pairs = [(min(max(p, 1e-3), cap), g) for p, g in zip(pred, gt) if 0.0 < g <= cap]
    if not pairs:
        raise ValueError("empty valid set")
    n = len(pairs)
    abs_rel = sum(abs(p - g) / g for p, g in pairs) / n
    sq_rel = sum((p - g) ** 2 / g for p, g in pairs) / n
    rmse = math.sqrt(sum((p - g) ** 2 for p, g in pairs) / n)
    rmse_log = math.sqrt(sum((math.log(p) - math.log(g)) ** 2 for p, g in pairs) / n)
    deltas = []
    for k in (1, 2, 3):
        thresh = 1.25 ** k
        deltas.append(sum(1 for p, g in pairs if max(p / g, g / p) < thresh) / n)
    return {
        "abs_rel": abs_rel,
        "sq_rel": sq_rel,
        "rmse": rmse,
        "rmse_log": rmse_log,
        "delta1": deltas[0],
        "delta2": deltas[1],
        "delta3": deltas[2],
        "n_pixels": n,
    }


def central_difference(f, arrays, h: float = 1e-6):
    """Central-difference gradients of scalar f w.r.t. a list of float64 arrays."""
    grads = []
    for idx, arr in enumerate(arrays):
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(arrays)
            flat[i] = orig - h
            down = f(arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def relative_grad_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-based relative error with an absolute floor for near-zero gradients."""
    num = np.linalg.norm(analytic.ravel() - numeric.ravel())
    den = max(np.linalg.norm(analytic.ravel()), np.linalg.norm(numeric.ravel()), 1.0)
    return float(num / den)
