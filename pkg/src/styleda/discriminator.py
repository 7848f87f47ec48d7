"""Perceptual-scoring domain discriminator.

A small conv stack produces one feature map per block.  Each map is
unit-normalized along channels at every site, projected on a nonnegative
per-layer weight vector ``u`` and averaged spatially, giving one scalar per
layer.  A linear head ``v`` and a sigmoid turn those scalars into g(x), the
probability that ``x`` looks like the target domain.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import convnet
from .network import sgd_step
from .tensor import DTYPE, NonFiniteError, ShapeError, sigmoid

log = logging.getLogger(__name__)

NORM_FLOOR = 1e-10
U_INIT = 0.1


@dataclass(frozen=True)
class DiscArch:
    in_size: int = 32
    blocks: tuple = ((8, 2), (16, 2), (32, 2), (64, 2))

    @property
    def stack(self):
        return convnet.ConvStack(1, self.in_size, self.blocks)

    @property
    def n_layers(self):
        return len(self.blocks)


def init_params(arch, rng):
    params = arch.stack.init_params(rng.child("conv"), prefix="disc.conv")
    for l, (c, _) in enumerate(arch.blocks, start=1):
        params[f"disc.u{l}"] = np.full(c, U_INIT)
    params["disc.v"] = np.zeros(arch.n_layers)
    return params


def unit_normalize(feature_map):
    """Divide every site's channel vector by its norm (zero vectors stay zero)."""
    fm = np.asarray(feature_map, dtype=DTYPE)
    if fm.size == 0:
        raise ShapeError("empty feature map")
    axis = -3
    norm = np.sqrt(np.sum(fm * fm, axis=axis, keepdims=True))
    return fm / (norm + NORM_FLOOR)


def unit_normalize_backward(fm, d_out):
    norm = np.sqrt(np.sum(fm * fm, axis=-3, keepdims=True))
    s = norm + NORM_FLOOR
    dot = np.sum(fm * d_out, axis=-3, keepdims=True)
    return d_out / s - fm * dot / (np.maximum(norm, NORM_FLOOR) * s * s)


def perceptual_scalar(norm_map, u):
    """Spatial mean of ``<u, channel vector>`` for a C×H×W (or batched) map."""
    norm_map = np.asarray(norm_map, dtype=DTYPE)
    u = np.asarray(u, dtype=DTYPE)
    if norm_map.shape[-3] != u.shape[0]:
        raise ShapeError(f"{norm_map.shape[-3]} channels but u has {u.shape[0]} entries")
    return np.einsum("...chw,c->...", norm_map, u) / (norm_map.shape[-1] * norm_map.shape[-2])


@dataclass
class DiscForward:
    maps: list
    normed: list
    r: np.ndarray  # N×L_g
    z: np.ndarray
    g: np.ndarray
    tape: object = None


def forward(arch, params, x):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 3:
        x = x[:, None]
    maps, tape = convnet.forward(arch.stack, params, x, prefix="disc.conv")
    normed = [unit_normalize(m) for m in maps]
    r = np.stack(
        [perceptual_scalar(nm, params[f"disc.u{l}"]) for l, nm in enumerate(normed, start=1)], axis=1
    )
    z = r @ params["disc.v"]
    return DiscForward(maps, normed, r, z, sigmoid(z), tape)


def score(arch, params, x, batch_size=256):
    """g(x) for one image (1×H×W) or a batch."""
    x = np.asarray(x, dtype=DTYPE)
    single = x.ndim == 3 and x.shape[0] == 1
    if single:
        x = x[None]
    out = np.concatenate([forward(arch, params, x[i : i + batch_size]).g for i in range(0, len(x), batch_size)])
    return float(out[0]) if single else out


def backward(arch, params, fwd, d_g):
    """Parameter gradients given d loss / d g for each image."""
    d_z = d_g * fwd.g * (1.0 - fwd.g)
    grads = {"disc.v": fwd.r.T @ d_z}
    d_r = d_z[:, None] * params["disc.v"][None, :]
    d_maps = []
    for l, (m, nm) in enumerate(zip(fwd.maps, fwd.normed), start=1):
        hw = m.shape[2] * m.shape[3]
        u = params[f"disc.u{l}"]
        grads[f"disc.u{l}"] = np.einsum("n,nchw->c", d_r[:, l - 1], nm) / hw
        d_nm = d_r[:, l - 1][:, None, None, None] * u[None, :, None, None] / hw
        d_maps.append(unit_normalize_backward(m, np.broadcast_to(d_nm, m.shape)))
    grads.update(convnet.backward(arch.stack, params, fwd.tape, d_maps, prefix="disc.conv"))
    return grads


def domain_loss(source_score, target_score):
    """``g(x_s)^2 + (g(x_t) - 1)^2``, averaged when given equal-length batches."""
    s = np.asarray(source_score, dtype=DTYPE)
    t = np.asarray(target_score, dtype=DTYPE)
    return float(np.mean(s**2 + (t - 1.0) ** 2))


def domain_loss_and_grads(arch, params, xs, xt):
    if len(xs) != len(xt):
        raise ShapeError("source and target batches must be the same size")
    fs, ft = forward(arch, params, xs), forward(arch, params, xt)
    n = len(xs)
    loss = domain_loss(fs.g, ft.g)
    gs = backward(arch, params, fs, 2.0 * fs.g / n)
    gt = backward(arch, params, ft, 2.0 * (ft.g - 1.0) / n)
    return loss, {k: gs[k] + gt[k] for k in gs}


def weight_classification(score_value, lc):
    """Scale a classification loss by a (constant) discriminator score."""
    return float(score_value) * lc


@dataclass
class DiscTrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 12


def train_discriminator(arch, source, target, params, config, rng):
    """SGD on the batch-mean domain loss; returns (params, per-epoch loss)."""
    if len(source) == 0 or len(target) == 0:
        raise ValueError("both image streams must be nonempty")
    params = {k: v.copy() for k, v in params.items()}
    velocity = {}
    n = min(len(source), len(target))
    history = []
    for epoch in range(config.epochs):
        s_order = rng.child("s", epoch).permutation(len(source))[:n]
        t_order = rng.child("t", epoch).permutation(len(target))[:n]
        losses = []
        for i in range(0, n, config.batch_size):
            loss, grads = domain_loss_and_grads(
                arch, params, source[s_order[i : i + config.batch_size]], target[t_order[i : i + config.batch_size]]
            )
            if not np.isfinite(loss):
                raise NonFiniteError(f"discriminator loss diverged at epoch {epoch}, batch {i // config.batch_size}")
            sgd_step(params, grads, config.lr, config.momentum, velocity)
            for l in range(1, arch.n_layers + 1):
                np.maximum(params[f"disc.u{l}"], 0.0, out=params[f"disc.u{l}"])
            losses.append(loss)
        history.append(float(np.mean(losses)))
        log.debug("discriminator epoch %d loss %.4f", epoch, history[-1])
    return params, history


class JointScorer:
    """Per-batch scorer that also takes one discriminator step on each batch pair.

    Used only when the discriminator is trained alongside adaptation instead
    of being frozen beforehand.
    """

    def __init__(self, arch, params, config):
        self.arch = arch
        self.params = {k: v.copy() for k, v in params.items()}
        self.config = config
        self.velocity = {}

    def __call__(self, xs, xt):
        if xt is None:
            raise ValueError("joint discriminator training needs target batches")
        n = min(len(xs), len(xt))
        loss, grads = domain_loss_and_grads(self.arch, self.params, xs[:n], xt[:n])
        if not np.isfinite(loss):
            raise NonFiniteError("discriminator loss diverged during joint training")
        sgd_step(self.params, grads, self.config.lr, self.config.momentum, self.velocity)
        for l in range(1, self.arch.n_layers + 1):
            np.maximum(self.params[f"disc.u{l}"], 0.0, out=self.params[f"disc.u{l}"])
        return forward(self.arch, self.params, xs).g


def score_histogram(scores, weights=None, bins=10):
    """Counts (or weight sums) over equal-width bins of [0, 1].

    Bins are ``[lo, hi)`` except the last, which also includes 1.
    """
    if bins < 2:
        raise ValueError("need at least two bins")
    scores = np.asarray(scores, dtype=DTYPE)
    hist, edges = np.histogram(scores, bins=bins, range=(0.0, 1.0), weights=weights)
    return [(float(edges[i]), float(edges[i + 1]), float(hist[i])) for i in range(bins)]


def weighted_mean_score(scores):
    """Mean source score when each sample is weighted by its own score."""
    s = np.asarray(scores, dtype=DTYPE)
    mean = float(np.mean(s))
    if not mean > 0:
        raise ValueError("weighted mean needs a positive total score")
    # sum(s^2)/sum(s) rewritten as mean + var/mean, so the excess over the mean is not lost to rounding
    return mean + float(np.mean((s - mean) ** 2)) / mean


def write_score_table(path, ids, domains, scores):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "domain", "score"])
        for i, d, s in zip(ids, domains, scores):
            w.writerow([i, d, repr(float(s))])
