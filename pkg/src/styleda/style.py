"""Feature-map style statistics and the losses that compare them across domains."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import sinkhorn
from .tensor import DTYPE, ShapeError

SIGMA_STABILIZER = 1e-5
STATS = ("mu", "sigma")


@dataclass
class StyleStats:
    mu: np.ndarray
    sigma: np.ndarray
    layer: int


@dataclass(frozen=True)
class LayerTapSet:
    layers: tuple
    channels: tuple

    def __post_init__(self):
        if not 1 <= len(self.layers) <= 4:
            raise ValueError("between 1 and 4 adaptation layers are supported")
        if len(self.layers) != len(self.channels):
            raise ValueError("one channel count per tapped layer")

    @classmethod
    def first(cls, lf, channels):
        """Taps on the ``lf`` shallowest layers (1-based), given all tap widths."""
        if not 1 <= lf <= len(channels):
            raise ValueError(f"L_f={lf} outside 1..{len(channels)}")
        return cls(tuple(range(1, lf + 1)), tuple(channels[:lf]))


def batch_style_stats(maps):
    """Per-sample, per-channel mean and stabilized std of an N×C×H×W batch."""
    maps = np.asarray(maps, dtype=DTYPE)
    if maps.ndim != 4:
        raise ShapeError("expected an N×C×H×W batch")
    if maps.shape[2] * maps.shape[3] < 1:
        raise ShapeError("feature map has empty spatial extent")
    mu = maps.mean(axis=(2, 3))
    var = ((maps - mu[:, :, None, None]) ** 2).mean(axis=(2, 3))
    return mu, np.sqrt(var + SIGMA_STABILIZER)


def batch_style_stats_backward(maps, mu, sigma, d_mu, d_sigma):
    hw = maps.shape[2] * maps.shape[3]
    centred = maps - mu[:, :, None, None]
    return (d_mu[:, :, None, None] + d_sigma[:, :, None, None] * centred / sigma[:, :, None, None]) / hw


def style_stats(feature_map, layer=1):
    feature_map = np.asarray(feature_map, dtype=DTYPE)
    if feature_map.ndim != 3:
        raise ShapeError("expected a C×H×W feature map")
    mu, sigma = batch_style_stats(feature_map[None])
    return StyleStats(mu=mu[0], sigma=sigma[0], layer=layer)


def style_measures(batch_maps, layer=1):
    """Stack per-image (mu, sigma) vectors into two n×C empirical measures."""
    maps = np.asarray(batch_maps, dtype=DTYPE)
    if maps.ndim != 4 or maps.shape[0] < 2:
        raise ShapeError("style measures need a batch of at least two feature maps")
    return batch_style_stats(maps)


def make_eps_states(layers, momentum=sinkhorn.DEFAULT_EPS_MOMENTUM, fixed=None, per_term=True):
    """One EpsState per (layer, statistic), or a single shared one."""
    if per_term:
        return {(l, s): sinkhorn.EpsState(momentum=momentum, fixed=fixed) for l in layers for s in STATS}
    shared = sinkhorn.EpsState(momentum=momentum, fixed=fixed)
    return {(l, s): shared for l in layers for s in STATS}


def _update_eps(eps_states, measures, squared):
    """Fold this batch's mean pairwise cost into every eps state, once each."""
    groups = {}
    for key, (p, q) in measures.items():
        groups.setdefault(id(eps_states[key]), (eps_states[key], []))[1].append(
            sinkhorn.eps_estimate_batch(p, q, squared=squared)
        )
    for state, estimates in groups.values():
        sinkhorn.eps_update(state, float(np.mean(estimates)))


def style_matching_loss_and_grads(
    source_taps,
    target_taps,
    taps,
    eps_states,
    iterations=sinkhorn.DEFAULT_ITERATIONS,
    update_eps=True,
    squared_eps=True,
):
    """Sum over tapped layers of the mu- and sigma-measure Sinkhorn divergences.

    ``source_taps``/``target_taps`` map layer index to N×C×H×W batches.
    Returns ``(loss, grads_source, grads_target, terms)`` where the grads map
    layer index to d loss / d maps and ``terms`` records every summand and the
    eps it used.
    """
    stats = {}
    measures = {}
    for layer in taps.layers:
        s_maps, t_maps = source_taps[layer], target_taps[layer]
        if len(s_maps) == 0 or len(t_maps) == 0:
            raise ShapeError(f"empty batch on layer {layer}")
        s_mu, s_sigma = batch_style_stats(s_maps)
        t_mu, t_sigma = batch_style_stats(t_maps)
        stats[layer] = (s_mu, s_sigma, t_mu, t_sigma)
        measures[(layer, "mu")] = (s_mu, t_mu)
        measures[(layer, "sigma")] = (s_sigma, t_sigma)
    if update_eps:
        _update_eps(eps_states, measures, squared_eps)

    total = 0.0
    terms = {}
    grads_s, grads_t = {}, {}
    for layer in taps.layers:
        s_mu, s_sigma, t_mu, t_sigma = stats[layer]
        d = {}
        for stat in STATS:
            p, q = measures[(layer, stat)]
            eps = eps_states[(layer, stat)].value()
            value, gp, gq = sinkhorn.sinkhorn_divergence_and_grads(p, q, eps, iterations)
            total += value
            terms[(layer, stat)] = (value, eps)
            d[stat] = (gp, gq)
        grads_s[layer] = batch_style_stats_backward(source_taps[layer], s_mu, s_sigma, d["mu"][0], d["sigma"][0])
        grads_t[layer] = batch_style_stats_backward(target_taps[layer], t_mu, t_sigma, d["mu"][1], d["sigma"][1])
    return total, grads_s, grads_t, terms


def style_matching_loss(source_taps, target_taps, taps, eps_states, iterations=sinkhorn.DEFAULT_ITERATIONS, **kw):
    return style_matching_loss_and_grads(source_taps, target_taps, taps, eps_states, iterations, **kw)[0]


def default_bandwidths(p, q, scales=(0.5, 1.0, 2.0)):
    """Kernel widths whose squares are the mean cross cost times each scale."""
    mean_cost = sinkhorn.eps_estimate_batch(p, q)
    if not mean_cost > 0:
        mean_cost = 1.0
    return [float(np.sqrt(s * mean_cost)) for s in scales]


def mmd_loss_and_grads(p, q, bandwidths):
    """Multi-kernel squared MMD (biased estimate) and its point gradients.

    Kernels are ``exp(-|x - y|^2 / b^2)`` summed over ``bandwidths``; the
    widths are constants for differentiation.
    """
    p, q = sinkhorn.as_measure(p), sinkhorn.as_measure(q)
    if len(bandwidths) == 0:
        raise ValueError("mmd needs at least one bandwidth")
    if any(not b > 0 for b in bandwidths):
        raise ValueError("bandwidths must be positive")
    n, m = len(p), len(q)
    c_pp = sinkhorn.cost_matrix(p, p)
    c_qq = sinkhorn.cost_matrix(q, q)
    c_pq = sinkhorn.cost_matrix(p, q)
    value = 0.0
    d_pp = np.zeros_like(c_pp)
    d_qq = np.zeros_like(c_qq)
    d_pq = np.zeros_like(c_pq)
    for b in bandwidths:
        inv = 1.0 / (b * b)
        k_pp, k_qq, k_pq = np.exp(-c_pp * inv), np.exp(-c_qq * inv), np.exp(-c_pq * inv)
        # exactly rounded sums keep the value independent of argument order
        value += math.fsum(k_pp.ravel()) / (n * n) + math.fsum(k_qq.ravel()) / (m * m)
        value -= 2.0 * math.fsum(k_pq.ravel()) / (n * m)
        d_pp -= k_pp * inv / (n * n)
        d_qq -= k_qq * inv / (m * m)
        d_pq += 2.0 * k_pq * inv / (n * m)
    a, b_ = sinkhorn.points_grad(p, p, d_pp)
    gp = a + b_
    a, b_ = sinkhorn.points_grad(q, q, d_qq)
    gq = a + b_
    a, b_ = sinkhorn.points_grad(p, q, d_pq)
    return float(value), gp + a, gq + b_


def mmd_loss(p, q, bandwidths):
    return mmd_loss_and_grads(p, q, bandwidths)[0]
