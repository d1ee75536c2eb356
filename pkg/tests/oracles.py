"""Independent reference implementations used as test oracles.

Nothing here imports the code under test beyond plain data types, so a bug in
the package cannot leak into its own oracle.
"""

from __future__ import annotations

from collections import deque

import numpy as np

FD_STEP = 1e-5


def finite_difference(f, arrays: list[np.ndarray], h: float = FD_STEP) -> list[np.ndarray]:
    """Central differences of scalar ``f(*arrays)`` w.r.t. every element of every array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f(*arrays)
            flat[i] = old - h
            down = f(*arrays)
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs deviation scaled by the larger gradient magnitude."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def triangle_brute_force(hist) -> int:
    """Scan every bin between peak and far tail for the max distance below the chord."""
    h = np.asarray(hist, dtype=float)
    nz = np.nonzero(h)[0]
    peak = int(np.argmax(h))
    lo, hi = int(nz[0]), int(nz[-1])
    tail = lo if (peak - lo) > (hi - peak) else hi
    x0, y0, x1, y1 = peak, h[peak], tail, h[tail]
    length = np.hypot(x1 - x0, y1 - y0)
    best, best_d = peak, -np.inf
    step = 1 if tail > peak else -1
    for b in range(peak, tail + step, step):
        # signed distance, positive for points under the peak->tail chord
        d = ((y1 - y0) * b - (x1 - x0) * h[b] + x1 * y0 - y1 * x0) / length
        if step < 0:
            d = -d
        if d > best_d + 1e-12:
            best, best_d = b, d
    return best


def flood_fill_components(mask: np.ndarray) -> list[set[tuple[int, int]]]:
    """8-connected components via explicit BFS."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or seen[r, c]:
                continue
            comp, queue = set(), deque([(r, c)])
            seen[r, c] = True
            while queue:
                y, x = queue.popleft()
                comp.add((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            queue.append((ny, nx))
            comps.append(comp)
    return comps


def flood_fill_colonies(rgb: np.ndarray, threshold: float, min_pixels: int) -> list[tuple]:
    """(species, size, centroid) triples, sorted the same way the package reports them."""
    red, green = rgb[..., 0], rgb[..., 1]
    fg = np.maximum(red, green) >= threshold
    is_red = fg & (red >= green)
    out = []
    for species, mask in (("red", is_red), ("green", fg & ~is_red)):
        for comp in flood_fill_components(mask):
            if len(comp) >= min_pixels:
                rows = [p[0] for p in comp]
                cols = [p[1] for p in comp]
                out.append((species, len(comp), (sum(rows) / len(rows), sum(cols) / len(cols))))
    out.sort(key=lambda c: (-c[1], c[2][0], c[2][1], c[0]))
    return out


def bilinear_reference(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-by-pixel half-pixel-centred bilinear sampling of a 2-D array."""
    in_h, in_w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            y = min(max((i + 0.5) * in_h / out_h - 0.5, 0.0), in_h - 1)
            x = min(max((j + 0.5) * in_w / out_w - 0.5, 0.0), in_w - 1)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, in_h - 1), min(x0 + 1, in_w - 1)
            wy, wx = y - y0, x - x0
            out[i, j] = ((1 - wy) * (1 - wx) * img[y0, x0] + (1 - wy) * wx * img[y0, x1]
                         + wy * (1 - wx) * img[y1, x0] + wy * wx * img[y1, x1])
    return out


def conv2d_reference(x: np.ndarray, k: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Direct loop 'same' convolution, NHWC input and HWIO kernel."""
    bsz, h, w, _ = x.shape
    kh, kw, _, cout = k.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.zeros((bsz, h, w, cout))
    for i in range(h):
        for j in range(w):
            patch = xp[:, i:i + kh, j:j + kw, :]
            out[:, i, j, :] = np.einsum("bijc,ijco->bo", patch, k)
    if b is not None:
        out += b
    return out


def ssim_constant_windows(a: float, b: float, k1: float = 0.01, k2: float = 0.03) -> float:
    """SSIM of two constant images: variances and covariance vanish."""
    c1, c2 = k1 ** 2, k2 ** 2
    return ((2 * a * b + c1) * c2) / ((a * a + b * b + c1) * c2)


def sampled_finite_difference(f, arrays: list[np.ndarray], per_array: int, rng: np.random.Generator,
                              h: float = FD_STEP) -> list[tuple[np.ndarray, np.ndarray]]:
    """Central differences at ``per_array`` random flat positions of each array.

    Returns ``(positions, derivatives)`` per array; used where a full sweep over
    thousands of weights would be too slow to repeat across many seeds.
    """
    out = []
    for arr in arrays:
        flat = arr.reshape(-1)
        pos = rng.choice(flat.size, size=min(per_array, flat.size), replace=False)
        vals = np.empty(len(pos))
        for j, i in enumerate(pos):
            old = flat[i]
            flat[i] = old + h
            up = f(*arrays)
            flat[i] = old - h
            down = f(*arrays)
            flat[i] = old
            vals[j] = (up - down) / (2 * h)
        out.append((pos, vals))
    return out
