"""Acceptance criteria, each run at its stated tolerance.

Every test records a PASS/FAIL verdict line (printed in the terminal summary)
before asserting, so a failing criterion still reports its measured numbers.
"""

import time

import numpy as np
import pytest

import oracles
from conftest import record
from styleda import checks, cli, datagen, network, pipeline, sinkhorn, style
from styleda import discriminator as disc
from styleda import evaluation as ev
from styleda.config import RunConfig
from styleda.tensor import Rng

SEEDS = (0, 1, 2)


def test_criterion_1_sinkhorn():
    results = checks.sinkhorn_suite(count=200, seed=0)
    for c in results:
        print(c.line())
    passed = all(c.passed for c in results)
    record(1, passed, "; ".join(c.line() for c in results))
    assert passed


def test_criterion_2_gradients():
    results = checks.gradient_suite()
    for c in results:
        print(c.line())
    passed = all(c.passed for c in results)
    record(2, passed, "; ".join(f"{c.name.replace('gradient ', '')} {c.detail}" for c in results))
    assert passed


def test_criterion_3_evaluation_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    mismatches = {"tpr_at_fpr": 0, "kfold": 0, "rank_k": 0, "tpir_at_fpir": 0}
    largest = 0
    for _ in range(100):
        pos, neg = oracles.random_verification(rng)
        largest = max(largest, len(pos) + len(neg))
        got = [(op.threshold, op.value, op.reachable) for op in ev.tpr_at_fpr(pos, neg)]
        mismatches["tpr_at_fpr"] += got != oracles.tpr_at_fpr(pos, neg, ev.FPR_LEVELS)

        n = int(rng.integers(10, 10_000))
        scores = np.round(rng.normal(size=n), 2)
        labels = rng.integers(0, 2, n)
        folds = rng.integers(0, int(rng.integers(2, 11)), n)
        folds[:2] = [0, 1]
        mean, _, accs = ev.kfold_verification(scores, labels, folds)
        mismatches["kfold"] += (mean, accs) != oracles.kfold(scores.tolist(), labels.tolist(), folds.tolist())

        g, subj, k, k_subj, u = oracles.random_identification(rng)
        sim_k = ev.cosine_matrix(k, g).tolist()
        ks = (1, 2, 5, 10)
        mismatches["rank_k"] += ev.rank_k(k, k_subj, g, subj, ks) != oracles.rank_k(
            sim_k, k_subj.tolist(), subj.tolist(), ks
        )
        levels = (0.01, 0.05, 0.1, 0.5)
        got = [(op.threshold, op.value, op.reachable) for op in ev.tpir_at_fpir(k, k_subj, u, g, subj, levels)]
        want = oracles.tpir_at_fpir(sim_k, k_subj.tolist(), ev.cosine_matrix(u, g).tolist(), subj.tolist(), levels)
        mismatches["tpir_at_fpir"] += got != want
    elapsed = time.perf_counter() - t0
    passed = not any(mismatches.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v}/100 mismatches" for k, v in mismatches.items())
    record(3, passed, f"{detail}; largest instance {largest} scores; {elapsed:.1f} s")
    assert passed


# --- end-to-end runs shared by criteria 4 to 6 -------------------------------------------


def heldout(seed, gap):
    """Fresh identities never seen by the discriminator, many of them so the AUC is not identity-clustered."""
    ds = datagen.generate(10_000 + seed, n_source=100, n_target=100, source_per_id=4, target_per_id=4, gap=gap)
    return ds.source_images.astype(np.float64), ds.target_images.astype(np.float64)


def heldout_auc(params, seed, gap):
    hs, ht = heldout(seed, gap)
    return ev.auc(disc.score(pipeline.DISC_ARCH, params, ht), disc.score(pipeline.DISC_ARCH, params, hs))


@pytest.fixture(scope="module")
def gap1_runs():
    """Per seed: shared baseline, discriminator, SM and PS+SM runs on the default gap-1 preset."""
    runs = {}
    t0 = time.perf_counter()
    for seed in SEEDS:
        cfg = RunConfig(seed=seed)
        data = pipeline.from_dataset(pipeline.generate(cfg))
        base, _ = pipeline.train_baseline(data, cfg)
        d_params, _ = pipeline.train_discriminator(data, cfg)
        sm, sm_curves = pipeline.adapt(data, cfg, base, "sm", lf=2)
        pssm, _ = pipeline.adapt(data, cfg, base, "ps+sm", lf=2, disc_params=d_params)
        runs[seed] = {
            "cfg": cfg,
            "data": data,
            "base": base,
            "disc": d_params,
            "sm_curves": sm_curves,
            "reports": {name: pipeline.summarize(pipeline.evaluate_model(data, p))
                        for name, p in (("baseline", base), ("sm", sm), ("ps+sm", pssm))},
        }
    runs["elapsed"] = time.perf_counter() - t0
    return runs


@pytest.mark.slow
def test_criterion_4_discriminator(gap1_runs):
    lines, ok = [], True
    for seed in SEEDS:
        run = gap1_runs[seed]
        auc1 = heldout_auc(run["disc"], seed, 1.0)
        s_scores = disc.score(pipeline.DISC_ARCH, run["disc"], run["data"].source_images.astype(np.float64))
        w1, m1 = disc.weighted_mean_score(s_scores), float(s_scores.mean())

        cfg0 = RunConfig(seed=seed, gap=0.0)
        data0 = pipeline.from_dataset(pipeline.generate(cfg0))
        params0, _ = pipeline.train_discriminator(data0, cfg0)
        auc0 = heldout_auc(params0, seed, 0.0)
        s0 = disc.score(pipeline.DISC_ARCH, params0, data0.source_images.astype(np.float64))
        w0, m0 = disc.weighted_mean_score(s0), float(s0.mean())

        # "non-constant" means the excess var/mean is representable next to the mean
        weighted_ok = all(
            w > m for w, m, s in ((w1, m1, s_scores), (w0, m0, s0)) if np.var(s) / m > np.spacing(m)
        )
        seed_ok = auc1 > 0.95 and 0.4 <= auc0 <= 0.6 and weighted_ok
        ok &= seed_ok
        lines.append(f"seed {seed}: AUC gap1 {auc1:.3f}, gap0 {auc0:.3f}, "
                     f"weighted/plain mean {w1:.4f}/{m1:.4f} and {w0:.4f}/{m0:.4f}")
    record(4, ok, "; ".join(lines))
    assert ok


@pytest.mark.slow
def test_criterion_5_directional(gap1_runs):
    rep = {seed: gap1_runs[seed]["reports"] for seed in SEEDS}
    tpr = "TPR@FPR=0.01"
    tpir = "TPIR@FPIR=0.1"
    a = [rep[s]["sm"][tpr] > rep[s]["baseline"][tpr] for s in SEEDS]
    means = {m: {k: float(np.mean([rep[s][m][k] for s in SEEDS])) for k in (tpr, tpir)} for m in ("sm", "ps+sm")}
    b = all(means["ps+sm"][k] >= means["sm"][k] for k in (tpr, tpir))
    c = [rep[s]["sm"]["inter_cos"] < rep[s]["baseline"]["inter_cos"] for s in SEEDS]
    elapsed = gap1_runs["elapsed"]
    passed = all(a) and b and all(c) and elapsed < 20 * 60
    per_seed = "; ".join(
        f"seed {s}: TPR@0.01 base {rep[s]['baseline'][tpr]:.4f} sm {rep[s]['sm'][tpr]:.4f} "
        f"ps+sm {rep[s]['ps+sm'][tpr]:.4f}, inter-cos {rep[s]['baseline']['inter_cos']:.4f} -> "
        f"{rep[s]['sm']['inter_cos']:.4f}"
        for s in SEEDS
    )
    record(
        5,
        passed,
        f"(a) {sum(a)}/3 seeds; (b) seed means sm {means['sm'][tpr]:.4f}/{means['sm'][tpir]:.4f} vs ps+sm "
        f"{means['ps+sm'][tpr]:.4f}/{means['ps+sm'][tpir]:.4f} (TPR@0.01/TPIR@0.1); (c) {sum(c)}/3 seeds; "
        f"{elapsed:.0f} s; {per_seed}",
    )
    assert passed


def fixed_eps_run(run):
    """Repeat the SM adaptation with every eps pinned to where the dynamic run ended."""
    data, cfg = run["data"], run["cfg"]
    arch = pipeline.arch_for(data)
    tc = cfg.train_config(mode="sm", lf=2)
    final = pipeline.style_eps_terms(run["sm_curves"])
    taps = style.LayerTapSet.first(2, arch.tap_channels())
    states = {(l, s): sinkhorn.EpsState(fixed=final[f"eps_l{l}_{s}"]) for l in taps.layers for s in style.STATS}
    comp = network.AdaptComponents(lam=tc.lam, taps=taps, eps_states=states, iterations=tc.sinkhorn_iters)
    params, _ = network.train_phase(
        arch, {k: v.copy() for k, v in run["base"].items()}, data.source_images.astype(np.float64),
        data.source_labels, tc, Rng(cfg.seed), mode="sm", xt=data.target_images.astype(np.float64),
        lr=tc.adapt_lr, epochs=tc.adapt_epochs, phase="adapt", components=comp,
    )
    return pipeline.summarize(pipeline.evaluate_model(data, params))


@pytest.mark.slow
def test_criterion_6_eps_dynamics(gap1_runs):
    state = sinkhorn.EpsState(momentum=0.9, eps=1.0)
    worst = 0.0
    for k in range(1, 51):
        sinkhorn.eps_update(state, 5.0)
        worst = max(worst, abs(state.eps - (5.0 - 4.0 * 0.9**k)))
    closed_ok = worst <= 1e-12

    eps_values = [c.value for s in SEEDS for c in gap1_runs[s]["sm_curves"] if c.term.startswith("eps_")]
    eps_ok = bool(eps_values) and all(np.isfinite(v) and v > 0 for v in eps_values)

    key = "TPR@FPR=0.01"
    dyn = np.array([gap1_runs[s]["reports"]["sm"][key] for s in SEEDS])
    fixed = np.array([fixed_eps_run(gap1_runs[s])[key] for s in SEEDS])
    noise = float(np.std(dyn, ddof=1))
    parity_ok = abs(dyn.mean() - fixed.mean()) <= noise
    passed = closed_ok and eps_ok and parity_ok
    record(
        6,
        passed,
        f"closed form max error {worst:.1e}; {len(eps_values)} recorded eps all finite and positive: {eps_ok}; "
        f"TPR@0.01 dynamic {np.round(dyn, 4).tolist()} vs fixed {np.round(fixed, 4).tolist()}, "
        f"mean gap {abs(dyn.mean() - fixed.mean()):.4f} vs seed sd {noise:.4f}",
    )
    assert passed


TINY = """\
n_source = 4
n_target = 6
source_per_id = 8
target_per_id = 10
baseline_epochs = 1
adapt_epochs = 1
disc_epochs = 1
lf_sweep = true
"""


def test_criterion_7_determinism(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY + f"data = {tmp_path / 'data'}\nout = {tmp_path / 'gen'}\n")
    assert cli.main(["datagen", "--config", str(cfg)]) == 0
    outputs = []
    for tag in ("first", "second"):
        assert cli.main(["ablation", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / tag)]) == 0
        outputs.append(
            ((tmp_path / tag / "ablation.json").read_bytes(), (tmp_path / tag / "ablation.csv").read_bytes())
        )
    passed = outputs[0] == outputs[1]
    n_rows = len(outputs[0][1].splitlines()) - 1
    record(7, passed, f"ablation.json and ablation.csv byte-identical across two runs: {passed} ({n_rows} rows)")
    assert passed
