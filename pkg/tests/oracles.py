"""Slow, independent reference implementations used only by the tests."""
import numpy as np


def direct_dft2(image):
    """O(N^4) double sum over h, w for every (u, v); unnormalized."""
    image = np.asarray(image, dtype=np.float64)
    h_, w_ = image.shape[-2:]
    out = np.zeros(image.shape, dtype=np.complex128)
    for u in range(h_):
        for v in range(w_):
            acc = np.zeros(image.shape[:-2], dtype=np.complex128)
            for h in range(h_):
                for w in range(w_):
                    acc = acc + image[..., h, w] * np.exp(-2j * np.pi * (u * h / h_ + v * w / w_))
            out[..., u, v] = acc
    return out


def direct_idft2(spec):
    spec = np.asarray(spec, dtype=np.complex128)
    h_, w_ = spec.shape[-2:]
    out = np.zeros(spec.shape, dtype=np.complex128)
    for h in range(h_):
        for w in range(w_):
            acc = np.zeros(spec.shape[:-2], dtype=np.complex128)
            for u in range(h_):
                for v in range(w_):
                    acc = acc + spec[..., u, v] * np.exp(2j * np.pi * (u * h / h_ + v * w / w_))
            out[..., h, w] = acc / (h_ * w_)
    return out


def half_shift(spec):
    """Centering by explicit index arithmetic: out[i, j] = in[(i - H//2) % H, (j - W//2) % W]."""
    h_, w_ = spec.shape[-2:]
    out = np.empty_like(spec)
    for i in range(h_):
        for j in range(w_):
            out[..., i, j] = spec[..., (i - h_ // 2) % h_, (j - w_ // 2) % w_]
    return out


def keep_bins(h_, w_, pb, kind):
    keep = np.zeros((h_, w_), dtype=bool)
    for i in range(h_):
        for j in range(w_):
            d2 = (i - h_ // 2) ** 2 + (j - w_ // 2) ** 2
            if kind == "all_pass":
                keep[i, j] = True
            elif kind == "low_pass":
                keep[i, j] = d2 <= pb * pb
            else:
                keep[i, j] = d2 > pb * pb
    return keep


def focal(pred_spec, target_spec, beta, weight=None):
    """Mean of w * |d|^2 per bin; ``weight`` defaults to |d|^beta at these spectra."""
    d = np.abs(np.asarray(pred_spec) - np.asarray(target_spec))
    if weight is None:
        weight = d ** beta
    return float(np.mean(weight * d ** 2))


def branch(pred, target, kind, pb, beta=1.0):
    keep = keep_bins(pred.shape[-2], pred.shape[-1], pb, kind)
    p = half_shift(direct_dft2(pred)) * keep
    t = half_shift(direct_dft2(target)) * keep
    return focal(p, t, beta)


def central_difference(f, x, h):
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2 * h)
    return grad
