"""Barlow Twins objective with mix-up regularisation on a toy affine encoder.

All correlation products use the ``1/B`` batch scaling of the canonical
Barlow Twins cross-correlation, including the mix-up terms.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dpixel import DPixel, make_view_pair, view_features


@dataclass(frozen=True)
class SslConfig:
    lambda_bt: float = 5e-3
    lambda_mix: float = 1.0
    eps: float = 1e-9

    def __post_init__(self):
        if self.lambda_bt < 0 or self.lambda_mix < 0:
            raise ValueError("loss weights must be non-negative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")


@dataclass
class ToyEncoder:
    """Affine map ``x @ weight + bias`` over per-view mean channel vectors."""

    weight: np.ndarray  # [Din, Dz]
    bias: np.ndarray    # [Dz]

    @classmethod
    def init(cls, d_in: int, d_out: int, seed: int = 0) -> "ToyEncoder":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0, 1 / np.sqrt(d_in), size=(d_in, d_out)), np.zeros(d_out))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight + self.bias

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.weight.ravel(), self.bias])

    def with_params(self, p: np.ndarray) -> "ToyEncoder":
        n = self.weight.size
        return ToyEncoder(p[:n].reshape(self.weight.shape).copy(), p[n:].copy())


@dataclass
class ViewBatch:
    """Input-space views: ``ya[b]`` and ``yb[b]`` are two views of sample ``b``."""

    ya: np.ndarray  # [B, Din]
    yb: np.ndarray  # [B, Din]

    def __post_init__(self):
        if self.ya.shape != self.yb.shape or self.ya.ndim != 2:
            raise ValueError("views must share a [B x Din] shape")
        if self.ya.shape[0] < 2:
            raise ValueError("batch normalisation needs at least 2 samples")


def make_view_batch(pixels: list[tuple[DPixel, DPixel]], k2: int, k1: int,
                    rng: np.random.Generator) -> ViewBatch:
    ya, yb = [], []
    for dp2, dp1 in pixels:
        pair = make_view_pair(dp2, dp1, k2, k1, rng)
        ya.append(view_features(dp2, dp1, pair.view_a))
        yb.append(view_features(dp2, dp1, pair.view_b))
    return ViewBatch(np.array(ya), np.array(yb))


# ----------------------------------------------------------------- forward

def batch_normalize(z: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[0] < 2:
        raise ValueError("batch_normalize needs B >= 2")
    centred = z - z.mean(axis=0)
    return centred / (centred.std(axis=0) + eps)


def cross_correlation(za: np.ndarray, zb: np.ndarray) -> np.ndarray:
    if za.shape != zb.shape:
        raise ValueError(f"shape mismatch {za.shape} vs {zb.shape}")
    return za.T @ zb / za.shape[0]


def barlow_loss(c: np.ndarray, lambda_bt: float = 5e-3) -> float:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError("cross-correlation matrix must be square")
    diag = np.diag(c)
    off = c - np.diag(diag)
    return float(np.sum((1 - diag) ** 2) + lambda_bt * np.sum(off ** 2))


def _check_alpha(alpha):
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")


def mixup_loss(za: np.ndarray, zs: np.ndarray, zm: np.ndarray, alpha: float) -> float:
    _check_alpha(alpha)
    if not (za.shape == zs.shape == zm.shape):
        raise ValueError("za, zs and zm must share a shape")
    b = za.shape[0]
    # C^MA - target^MA and C^MS - target^MS share the residual E = Zm - a*Za - (1-a)*Zs
    e = zm - alpha * za - (1 - alpha) * zs
    d1 = e.T @ za / b
    d2 = e.T @ zs / b
    return float(0.5 * (np.sum(d1 ** 2) + np.sum(d2 ** 2)))


@dataclass
class LossTerms:
    total: float
    l_bt: float
    l_mix: float
    alpha: float
    perm: np.ndarray
    grad: np.ndarray | None = field(default=None, repr=False)


def draw_mix(batch_size: int, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Shuffle permutation for the second view, then the mixing weight."""
    perm = rng.permutation(batch_size)
    alpha = float(rng.uniform(0.0, 1.0))
    return perm, alpha


def total_loss(views: ViewBatch, encoder: ToyEncoder, cfg: SslConfig = SslConfig(),
               rng: np.random.Generator | None = None, *, perm=None, alpha=None,
               with_grad: bool = False) -> LossTerms:
    """``L_BT + lambda_mix * L_MIX`` for one batch.

    The permutation and mixing weight are drawn from ``rng`` unless given
    explicitly; pass them to evaluate the loss at fixed randomness (as the
    finite-difference check does).
    """
    b = views.ya.shape[0]
    if perm is None or alpha is None:
        rng = np.random.default_rng() if rng is None else rng
        perm, alpha = draw_mix(b, rng)
    _check_alpha(alpha)
    ya, ys = views.ya, views.yb[perm]
    ym = alpha * ya + (1 - alpha) * ys

    ha, hb = encoder(ya), encoder(views.yb)
    za, zb = batch_normalize(ha, cfg.eps), batch_normalize(hb, cfg.eps)
    c = cross_correlation(za, zb)
    l_bt = barlow_loss(c, cfg.lambda_bt)

    l_mix = 0.0
    if cfg.lambda_mix > 0:
        hs, hm = encoder(ys), encoder(ym)
        zs, zm = batch_normalize(hs, cfg.eps), batch_normalize(hm, cfg.eps)
        l_mix = mixup_loss(za, zs, zm, alpha)

    terms = LossTerms(l_bt + cfg.lambda_mix * l_mix, l_bt, l_mix, alpha, np.asarray(perm))
    if with_grad:
        terms.grad = _total_loss_grad(views, encoder, cfg, np.asarray(perm), alpha)
    return terms


# ---------------------------------------------------------------- backward

def _bn_backward(h: np.ndarray, g: np.ndarray, eps: float) -> np.ndarray:
    """Gradient w.r.t. ``h`` of a loss whose gradient w.r.t. ``batch_normalize(h)`` is ``g``."""
    b = h.shape[0]
    hc = h - h.mean(axis=0)
    sigma = np.sqrt(np.mean(hc ** 2, axis=0))
    s = sigma + eps
    d_s = -np.sum(g * hc, axis=0) / s ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d_sigma_d_hc = np.where(sigma > 0, hc / (b * sigma), 0.0)
    d_hc = g / s + d_s * d_sigma_d_hc
    return d_hc - d_hc.mean(axis=0)


def _total_loss_grad(views, encoder, cfg, perm, alpha) -> np.ndarray:
    b = views.ya.shape[0]
    ya, yb = views.ya, views.yb
    ys = yb[perm]
    ym = alpha * ya + (1 - alpha) * ys
    ha, hb = encoder(ya), encoder(yb)
    za, zb = batch_normalize(ha, cfg.eps), batch_normalize(hb, cfg.eps)
    c = cross_correlation(za, zb)

    d_c = 2 * cfg.lambda_bt * c
    np.fill_diagonal(d_c, -2 * (1 - np.diag(c)))
    g_za = zb @ d_c.T / b
    g_zb = za @ d_c / b

    grads = [(ya, _bn_backward(ha, g_za, cfg.eps)), (yb, _bn_backward(hb, g_zb, cfg.eps))]

    if cfg.lambda_mix > 0:
        hs, hm = encoder(ys), encoder(ym)
        zs, zm = batch_normalize(hs, cfg.eps), batch_normalize(hm, cfg.eps)
        e = zm - alpha * za - (1 - alpha) * zs
        d1 = e.T @ za / b
        d2 = e.T @ zs / b
        g_e = (za @ d1.T + zs @ d2.T) / b
        lm = cfg.lambda_mix
        g_za_mix = lm * (e @ d1 / b - alpha * g_e)
        g_zs = lm * (e @ d2 / b - (1 - alpha) * g_e)
        g_zm = lm * g_e
        grads += [(ya, _bn_backward(ha, g_za_mix, cfg.eps)),
                  (ys, _bn_backward(hs, g_zs, cfg.eps)),
                  (ym, _bn_backward(hm, g_zm, cfg.eps))]

    g_w = sum(x.T @ g_h for x, g_h in grads)
    g_b = sum(g_h.sum(axis=0) for _, g_h in grads)
    return np.concatenate([g_w.ravel(), g_b])


def numeric_gradient(loss_fn, params, h: float = 1e-5) -> np.ndarray:
    """Central differences ``(f(p + h e_i) - f(p - h e_i)) / 2h`` for every parameter."""
    if h <= 0:
        raise ValueError("step h must be positive")
    p = np.array(params, dtype=np.float64)
    grad = np.empty_like(p)
    flat = p.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = loss_fn(p)
        flat[i] = orig - h
        f_minus = loss_fn(p)
        flat[i] = orig
        g[i] = (f_plus - f_minus) / (2 * h)
    return grad


def train_toy_encoder(pixels, encoder: ToyEncoder, cfg: SslConfig, steps: int, lr: float,
                      k2: int, k1: int, rng: np.random.Generator, gradient: str = "numeric",
                      h: float = 1e-5):
    """Plain gradient descent on fresh view batches.

    Yields ``(step, terms, encoder)`` per step, with the encoder the loss was
    evaluated at.

    ``gradient="numeric"`` uses central differences, ``"analytic"`` the
    closed-form backward pass. Only meant for small encoders.
    """
    if gradient not in ("numeric", "analytic"):
        raise ValueError("gradient must be 'numeric' or 'analytic'")
    for step in range(steps):
        views = make_view_batch(pixels, k2, k1, rng)
        perm, alpha = draw_mix(views.ya.shape[0], rng)
        terms = total_loss(views, encoder, cfg, perm=perm, alpha=alpha,
                           with_grad=gradient == "analytic")
        if gradient == "analytic":
            grad = terms.grad
        else:
            grad = numeric_gradient(
                lambda p: total_loss(views, encoder.with_params(p), cfg, perm=perm, alpha=alpha).total,
                encoder.params, h)
        yield step, terms, encoder
        encoder = encoder.with_params(encoder.params - lr * grad)
