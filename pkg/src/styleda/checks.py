"""Randomized oracle suites.

:func:`sinkhorn_suite` compares the transport solver with exhaustive
assignment (``styleda sinkhorn-check``); :func:`gradient_suite` compares every
analytic gradient with central differences on the miniature network.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import discriminator, network, sinkhorn, style
from .tensor import Rng


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def random_instances(count=200, seed=0, sizes=(2, 5), dims=(1, 4)):
    rng = Rng(seed).child("sinkhorn-suite")
    out = []
    for i in range(count):
        r = rng.child(i)
        n = int(r.integers(sizes[0], sizes[1] + 1))
        d = int(r.integers(dims[0], dims[1] + 1))
        out.append((r.normal((n, d)), r.normal((n, d))))
    return out


def sinkhorn_suite(count=200, seed=0, eps_ratio=1e-3, iterations=200, rel_tol=0.05,
                   neg_tol=1e-8, sym_tol=1e-9, self_tol=1e-9):
    """Compare the solver with exhaustive assignment and check divergence axioms."""
    t0 = time.perf_counter()
    rel, neg, sym, self_d = [], [], [], []
    for p, q in random_instances(count, seed):
        cost = sinkhorn.cost_matrix(p, q)
        eps = eps_ratio * float(cost.mean())
        exact = sinkhorn.exact_ot_bruteforce(p, q)
        approx = sinkhorn.regularized_ot(p, q, eps, iterations)
        rel.append(abs(approx - exact) / exact)
        w_qp = sinkhorn.regularized_ot(q, p, eps, iterations)
        w_pp = sinkhorn.regularized_ot(p, p, eps, iterations)
        w_qq = sinkhorn.regularized_ot(q, q, eps, iterations)
        d_pq = 2.0 * approx - w_pp - w_qq
        d_qp = 2.0 * w_qp - w_qq - w_pp
        neg.append(min(d_pq, d_qp))
        sym.append(abs(d_pq - d_qp))
        self_d.append(abs(sinkhorn.sinkhorn_divergence(p, p, eps, iterations)))
    rel, sym, self_d = np.array(rel), np.array(sym), np.array(self_d)
    elapsed = time.perf_counter() - t0
    n = len(rel)
    return [
        Check("regularized vs exact", bool(np.all(rel <= rel_tol)),
              f"{int(np.sum(rel > rel_tol))}/{n} beyond {rel_tol:.0%}, worst {rel.max():.3g}, median {np.median(rel):.3g}"),
        Check("nonnegativity", bool(min(neg) >= -neg_tol), f"min {min(neg):.3g}"),
        Check("symmetry", bool(np.all(sym <= sym_tol)),
              f"{int(np.sum(sym > sym_tol))}/{n} beyond {sym_tol:g}, worst {sym.max():.3g}"),
        Check("self-distance", bool(np.all(self_d <= self_tol)), f"worst {self_d.max():.3g}"),
        Check("runtime", elapsed < 30.0, f"{elapsed:.1f} s"),
    ]


def numeric_grad(f, params, h=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``params`` (perturbed in place)."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = f()
            p[idx] = orig - h
            down = f()
            p[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out[name] = g
    return out


def grad_error(analytic, numeric):
    """Worst per-tensor relative error ``|a - n| / |n|`` (absolute when ``n`` vanishes)."""
    worst = 0.0
    for name, n in numeric.items():
        scale = np.linalg.norm(n)
        err = np.linalg.norm(analytic[name] - n)
        worst = max(worst, err / scale if scale > 1e-8 else err)
    return worst


MINI_DISC = discriminator.DiscArch(in_size=8, blocks=((3, 1), (4, 2)))


def gradient_suite(seed=0, tol=1e-4, lam=0.5, batch=4):
    """Finite-difference checks of L_c, L_s, L_d and every adaptation mode."""
    t0 = time.perf_counter()
    arch = network.MINI_ARCH
    rng = Rng(seed).child("gradient-suite")
    params = network.init_params(arch, rng.child("init"))
    for k in params:
        if k.endswith(".b"):
            params[k] = rng.child("bias", k).normal(params[k].shape, scale=0.1)
    xs = rng.child("xs").random((batch, 1, arch.in_size, arch.in_size))
    xt = rng.child("xt").random((batch, 1, arch.in_size, arch.in_size)) * 0.7 + 0.3
    ys = rng.child("ys").integers(0, arch.n_classes, batch)
    scores = rng.child("g").random(batch)
    taps = style.LayerTapSet.first(arch.n_taps, arch.tap_channels())

    def components():
        return network.AdaptComponents(
            lam=lam, taps=taps, eps_states=style.make_eps_states(taps.layers, fixed=0.4),
            update_eps=False, mmd_bandwidths=(0.5, 1.0, 2.0),
        )

    results = []

    def record(name, analytic, f, p):
        err = grad_error(analytic, numeric_grad(f, p))
        results.append(Check(f"gradient {name}", bool(err < tol), f"max relative error {err:.2e}"))

    def style_only():
        fs, ft = network.forward(arch, params, xs), network.forward(arch, params, xt)
        comp = components()
        value, g_s, g_t, _ = style.style_matching_loss_and_grads(
            fs.taps, ft.taps, taps, comp.eps_states, update_eps=False
        )
        grads = network.backward(arch, params, fs, d_taps=g_s)
        grads_t = network.backward(arch, params, ft, d_taps=g_t)
        return value, {k: grads[k] + grads_t[k] for k in grads}

    for name, mode in (("L_c", "baseline"), ("ps", "ps"), ("sm", "sm"), ("ps+sm", "ps+sm"), ("mmd", "mmd")):
        def f(mode=mode):
            return network.adaptation_loss(arch, params, xs, ys, mode, xt, scores, components()).value
        record(name, network.adaptation_loss(arch, params, xs, ys, mode, xt, scores, components()).grads, f, params)
        if mode == "baseline":
            record("L_s", style_only()[1], lambda: style_only()[0], params)

    d_params = discriminator.init_params(MINI_DISC, rng.child("disc"))
    for l, (c, _) in enumerate(MINI_DISC.blocks, start=1):
        d_params[f"disc.u{l}"] = rng.child("u", l).random(c) + 0.1
        d_params[f"disc.conv{l}.b"] = rng.child("db", l).normal(c, scale=0.1)
    d_params["disc.v"] = rng.child("v").normal(MINI_DISC.n_layers)
    _, d_grads = discriminator.domain_loss_and_grads(MINI_DISC, d_params, xs, xt)
    record("L_d", d_grads, lambda: discriminator.domain_loss_and_grads(MINI_DISC, d_params, xs, xt)[0], d_params)

    elapsed = time.perf_counter() - t0
    results.append(Check("gradient runtime", elapsed < 300.0, f"{elapsed:.1f} s"))
    return results
