"""Recognition backbone, classifier head, adaptation objectives and training."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import convnet, sinkhorn, style
from .tensor import DTYPE, NonFiniteError, Rng, ShapeError, logsumexp, softmax

log = logging.getLogger(__name__)

MODES = ("baseline", "ps", "sm", "ps+sm", "mmd")


@dataclass(frozen=True)
class Arch:
    in_size: int = 32
    blocks: tuple = ((8, 1), (16, 2), (16, 1), (32, 2), (32, 2))
    n_taps: int = 4
    embed_dim: int = 64
    n_classes: int = 50

    @property
    def stack(self):
        return convnet.ConvStack(1, self.in_size, self.blocks)

    def tap_shapes(self):
        return self.stack.shapes()[: self.n_taps]

    def tap_channels(self):
        return tuple(s[0] for s in self.tap_shapes())

    def flat_dim(self):
        c, h, w = self.stack.shapes()[-1]
        return c * h * w


MINI_ARCH = Arch(in_size=8, blocks=((3, 1), (4, 2)), n_taps=2, embed_dim=8, n_classes=3)


def init_params(arch, rng):
    params = arch.stack.init_params(rng.child("conv"))
    f = arch.flat_dim()
    params["embed.w"] = rng.child("embed").normal((arch.embed_dim, f), scale=np.sqrt(1.0 / f))
    params["embed.b"] = np.zeros(arch.embed_dim)
    params["cls.w"] = rng.child("cls").normal((arch.n_classes, arch.embed_dim), scale=np.sqrt(1.0 / arch.embed_dim))
    return params


@dataclass
class ForwardResult:
    taps: dict  # layer (1-based) -> N×C×H×W
    embedding: np.ndarray  # N×D
    logits: np.ndarray  # N×K
    tape: object = field(repr=False, default=None)


def forward(arch, params, x):
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 3:
        x = x[:, None]
    if x.ndim != 4 or x.shape[1:] != (1, arch.in_size, arch.in_size):
        raise ShapeError(f"expected N×1×{arch.in_size}×{arch.in_size} images, got {x.shape}")
    outputs, tape = convnet.forward(arch.stack, params, x)
    flat = outputs[-1].reshape(len(x), -1)
    emb = flat @ params["embed.w"].T + params["embed.b"]
    logits = emb @ params["cls.w"].T
    taps = {l: outputs[l - 1] for l in range(1, arch.n_taps + 1)}
    return ForwardResult(taps, emb, logits, tape=(tape, outputs, flat))


def backward(arch, params, result, d_logits=None, d_embedding=None, d_taps=None):
    """Parameter gradients given upstream gradients on logits, embedding, taps."""
    tape, outputs, flat = result.tape
    n = len(flat)
    grads = {}
    d_emb = np.zeros((n, arch.embed_dim)) if d_embedding is None else np.array(d_embedding, dtype=DTYPE)
    if d_logits is not None:
        grads["cls.w"] = d_logits.T @ result.embedding
        d_emb = d_emb + d_logits @ params["cls.w"]
    else:
        grads["cls.w"] = np.zeros_like(params["cls.w"])
    grads["embed.w"] = d_emb.T @ flat
    grads["embed.b"] = d_emb.sum(axis=0)
    d_flat = (d_emb @ params["embed.w"]).reshape(outputs[-1].shape)
    d_outputs = [None] * len(arch.blocks)
    d_outputs[-1] = d_flat
    for l, g in (d_taps or {}).items():
        d_outputs[l - 1] = g if d_outputs[l - 1] is None else d_outputs[l - 1] + g
    grads.update(convnet.backward(arch.stack, params, tape, d_outputs))
    return grads


def classification_loss(logits, label):
    """Cross-entropy ``-log softmax(logits)[label]`` for one sample."""
    logits = np.asarray(logits, dtype=DTYPE)
    if not 0 <= label < logits.shape[-1]:
        raise IndexError(f"label {label} outside 0..{logits.shape[-1] - 1}")
    return float(logsumexp(logits) - logits[label])


def classification_losses(logits, labels):
    """Per-sample cross-entropy and d loss_i / d logits_i for a batch."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise IndexError("label out of range")
    rows = np.arange(len(labels))
    losses = logsumexp(logits, axis=1) - logits[rows, labels]
    d = softmax(logits, axis=1)
    d[rows, labels] -= 1.0
    return losses, d


@dataclass
class AdaptComponents:
    """Everything a non-baseline objective needs besides the two batches."""

    lam: float = 0.01
    taps: style.LayerTapSet | None = None
    eps_states: dict | None = None
    iterations: int = sinkhorn.DEFAULT_ITERATIONS
    squared_eps: bool = True
    update_eps: bool = True
    mmd_scales: tuple = (0.5, 1.0, 2.0)
    mmd_bandwidths: tuple | None = None  # fixed kernel widths; None = per-batch heuristic


@dataclass
class LossResult:
    value: float
    grads: dict
    terms: dict


def adaptation_loss(arch, params, xs, ys, mode="baseline", xt=None, source_scores=None, components=None):
    """Objective value, parameter gradients, and its individual terms.

    ``source_scores`` are discriminator outputs g(x^s) for the source batch;
    they are constants here.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    uses_ps = mode in ("ps", "ps+sm")
    uses_target = mode in ("sm", "ps+sm", "mmd")
    if uses_ps and source_scores is None:
        raise ValueError(f"mode {mode} needs discriminator scores")
    if uses_target and (xt is None or len(xt) == 0):
        raise ValueError(f"mode {mode} needs a target batch")
    comp = components or AdaptComponents()

    fs = forward(arch, params, xs)
    losses, d_logits = classification_losses(fs.logits, ys)
    n = len(losses)
    weights = np.ones(n) if not uses_ps else np.asarray(source_scores, dtype=DTYPE)
    lc = float(np.mean(weights * losses))
    d_logits *= (weights / n)[:, None]
    terms = {"L_c": lc}
    value = lc

    if not uses_target:
        grads = backward(arch, params, fs, d_logits=d_logits)
        return LossResult(value, grads, terms)

    ft = forward(arch, params, xt)
    if mode == "mmd":
        bw = comp.mmd_bandwidths
        if bw is None:
            bw = style.default_bandwidths(fs.embedding, ft.embedding, comp.mmd_scales)
        mmd, g_s, g_t = style.mmd_loss_and_grads(fs.embedding, ft.embedding, bw)
        terms["MMD"] = mmd
        value += comp.lam * mmd
        grads = backward(arch, params, fs, d_logits=d_logits, d_embedding=comp.lam * g_s)
        grads_t = backward(arch, params, ft, d_embedding=comp.lam * g_t)
    else:
        if comp.taps is None or comp.eps_states is None:
            raise ValueError("style matching needs taps and eps states")
        ls, g_s, g_t, sm_terms = style.style_matching_loss_and_grads(
            fs.taps,
            ft.taps,
            comp.taps,
            comp.eps_states,
            comp.iterations,
            update_eps=comp.update_eps,
            squared_eps=comp.squared_eps,
        )
        terms["L_s"] = ls
        for (layer, stat), (_, eps) in sm_terms.items():
            terms[f"eps_l{layer}_{stat}"] = eps
        value += comp.lam * ls
        grads = backward(
            arch, params, fs, d_logits=d_logits, d_taps={l: comp.lam * g for l, g in g_s.items()}
        )
        grads_t = backward(arch, params, ft, d_taps={l: comp.lam * g for l, g in g_t.items()})
    for k in grads:
        grads[k] = grads[k] + grads_t[k]
    return LossResult(value, grads, terms)


def sgd_step(params, grads, lr, momentum, velocity, keys=None):
    """Heavy-ball update, in place: ``v = m v + g; p -= lr v``."""
    for k in keys if keys is not None else params:
        g = grads[k]
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {k}")
        v = velocity.get(k)
        v = g.copy() if v is None else momentum * v + g
        velocity[k] = v
        params[k] = params[k] - lr * v
    return params, velocity


@dataclass
class TrainConfig:
    lr: float = 0.05
    adapt_lr: float = 0.02
    momentum: float = 0.9
    batch_size: int = 32
    baseline_epochs: int = 8
    adapt_epochs: int = 4
    lr_decays: int = 2
    lam: float = 0.01
    sinkhorn_iters: int = sinkhorn.DEFAULT_ITERATIONS
    eps_momentum: float = sinkhorn.DEFAULT_EPS_MOMENTUM
    eps_fixed: float | None = None
    eps_per_term: bool = True
    eps_squared: bool = True
    lf: int = 2
    mode: str = "baseline"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")

    @classmethod
    def large_scale(cls, **kw):
        """Schedule for full-size data; the defaults are tuned for the synthetic preset."""
        return cls(lr=0.1, adapt_lr=1e-4, batch_size=128, baseline_epochs=50, adapt_epochs=50, **kw)


@dataclass
class CurveRow:
    phase: str
    epoch: int
    batch: int
    term: str
    value: float


class TrainingDiverged(NonFiniteError):
    pass


def _lr_at(base, epoch, epochs, decays):
    if decays <= 0 or epochs <= 1:
        return base
    step = math.ceil(epochs / (decays + 1))
    return base * 0.1 ** min(epoch // step, decays)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train_phase(
    arch,
    params,
    xs,
    ys,
    config,
    rng,
    mode="baseline",
    xt=None,
    source_scores=None,
    lr=None,
    epochs=None,
    phase="baseline",
    curves=None,
    components=None,
):
    """One SGD phase over the source set (target batches drawn alongside).

    ``source_scores`` is either an array indexed like ``xs`` or a callable
    ``(source_batch, target_batch) -> scores`` invoked once per batch.
    """
    lr = config.lr if lr is None else lr
    epochs = config.baseline_epochs if epochs is None else epochs
    curves = [] if curves is None else curves
    velocity = {}
    if mode in ("sm", "ps+sm") and components is None:
        taps = style.LayerTapSet.first(config.lf, arch.tap_channels())
        components = AdaptComponents(
            lam=config.lam,
            taps=taps,
            eps_states=style.make_eps_states(
                taps.layers, config.eps_momentum, config.eps_fixed, config.eps_per_term
            ),
            iterations=config.sinkhorn_iters,
            squared_eps=config.eps_squared,
        )
    elif components is None:
        components = AdaptComponents(lam=config.lam, iterations=config.sinkhorn_iters)
    for epoch in range(epochs):
        lr_e = _lr_at(lr, epoch, epochs, config.lr_decays)
        batches = _batches(len(xs), config.batch_size, rng.child("shuffle", phase, epoch))
        t_order = None
        if xt is not None and (mode in ("sm", "ps+sm", "mmd") or callable(source_scores)):
            t_order = rng.child("target", phase, epoch).permutation(len(xt))
        for b, idx in enumerate(batches):
            xt_b = None
            if t_order is not None:
                start = (b * config.batch_size) % len(xt)
                t_idx = np.take(t_order, np.arange(start, start + len(idx)), mode="wrap")
                xt_b = xt[t_idx]
            if callable(source_scores):
                scores = source_scores(xs[idx], xt_b)
            else:
                scores = None if source_scores is None else source_scores[idx]
            res = adaptation_loss(arch, params, xs[idx], ys[idx], mode, xt_b, scores, components)
            if not np.isfinite(res.value):
                raise TrainingDiverged(f"non-finite loss in {phase} phase, epoch {epoch}, batch {b}")
            for term, v in res.terms.items():
                curves.append(CurveRow(phase, epoch, b, term, float(v)))
            curves.append(CurveRow(phase, epoch, b, "L", float(res.value)))
            try:
                sgd_step(params, res.grads, lr_e, config.momentum, velocity)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"{exc} in {phase} phase, epoch {epoch}, batch {b}") from exc
        log.debug("%s epoch %d done", phase, epoch)
    return params, curves


def train(arch, xs, ys, config, seed, xt=None, source_scores=None, baseline_params=None):
    """Baseline phase on labeled source, then adaptation at reduced LR.

    ``baseline_params`` skips phase one (adaptation forks from a shared
    checkpoint).  Returns ``(baseline_params, adapted_params, curves)``.
    """
    rng = Rng(seed)
    curves = []
    if baseline_params is None:
        params = init_params(arch, rng.child("init"))
        params, curves = train_phase(arch, params, xs, ys, config, rng, curves=curves)
    else:
        params = {k: v.copy() for k, v in baseline_params.items()}
    base = {k: v.copy() for k, v in params.items()}
    if config.adapt_epochs > 0:
        params, curves = train_phase(
            arch,
            params,
            xs,
            ys,
            config,
            rng,
            mode=config.mode,
            xt=xt,
            source_scores=source_scores,
            lr=config.adapt_lr,
            epochs=config.adapt_epochs,
            phase="adapt",
            curves=curves,
        )
    return base, params, curves


def embed(arch, params, images, batch_size=256):
    out = []
    for i in range(0, len(images), batch_size):
        out.append(forward(arch, params, images[i : i + batch_size]).embedding)
    return np.concatenate(out) if out else np.zeros((0, arch.embed_dim))


def _cos_pairs(e, mask):
    unit = e / np.linalg.norm(e, axis=1, keepdims=True)
    sims = unit @ unit.T
    iu = np.triu_indices(len(e), k=1)
    vals = sims[iu]
    sel = mask[iu]
    return vals[sel], vals[~sel]


def _mean_sd(v):
    if len(v) == 0:
        return None
    return (float(np.mean(v)), float(np.std(v)))


def embed_stats(embeddings, labels):
    """Mean/sd of intra-class cosine, inter-class cosine and embedding norm."""
    e = np.asarray(embeddings, dtype=DTYPE)
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 1 or len(e) < 2:
        raise ValueError("embed_stats needs at least two embeddings")
    same = labels[:, None] == labels[None, :]
    intra, inter = _cos_pairs(e, same)
    return {
        "intra_cos": _mean_sd(intra),
        "inter_cos": _mean_sd(inter),
        "norm": _mean_sd(np.linalg.norm(e, axis=1)),
    }
