"""Acceptance suite: one test (or small group) per criterion, each printing a PASS/FAIL line.

The benchmark constants below were frozen after running both arms once;
`pytest -m "not slow"` skips the long experiments.
"""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image
from scipy import stats

from contextmeta.datasets import SyntheticSpec, generate
from contextmeta.episodes import EpisodeSource, make_context_split
from contextmeta.experiments import (
    ExperimentPlan,
    TreeSource,
    context_count_deltas,
    emit_metrics,
    mean_metric,
    run_cell,
    run_cells,
    sweep_context_count,
    sweep_lambda,
)
from contextmeta.meta import (
    AdversarialHead,
    MetaConfig,
    adversarial_gradients,
    flip_context_labels,
    grl_backward,
    grl_forward,
    init_state,
    load_state,
    meta_train,
    outer_update,
    save_state,
    state_digest,
)
from contextmeta.nn import (
    CROSS_ENTROPY,
    MSE_LOSS,
    Conv2d,
    Dense,
    Flatten,
    Layout,
    Network,
    ParameterVector,
    ReLU,
    backward,
    finite_difference_grad,
    mlp,
)
from contextmeta.samples import SampleSet

# frozen desk-scale benchmark
GLYPH_SPEC = SyntheticSpec(kind="proc-glyphs", n_contexts=4, n_classes_per_context=50, samples_per_class=20,
                           noise=0.1, distortion=0.5, seed=0)
GLYPH_META = MetaConfig(method="reptile", k=10, l=3, lam=1.0, alpha=0.1, epsilon=0.2, inner_lr_task=0.1,
                        inner_lr_adv=0.05, head_lr=0.01)
GLYPH_PLAN = dict(way=5, shot=1, query_per_class=15, n_outer=4000, hidden=(64, 32), finetune_steps=10,
                  n_episodes=200, record_timing=False, seeds=(0, 1, 2, 3, 4))

SINE_SPEC = SyntheticSpec(kind="context-sinusoid", n_contexts=5, noise=0.0, seed=0)
SINE_PLAN = dict(shot=10, query_per_class=10, train_query_per_class=10, n_outer=5000, hidden=(64, 64),
                 finetune_steps=32, n_episodes=200, record_timing=False, seeds=(0, 1, 2, 3, 4))
SINE_META = MetaConfig(method="reptile", k=10, alpha=0.5, inner_lr_task=0.005)
SINE_RATIO = 0.5


# ---------------------------------------------------------------- 1. gradients


def _randomized(net, rng):
    # nonzero biases keep pre-activations away from the relu kink
    values = rng.normal(0, 0.7, size=len(net.params))
    return net.with_params(ParameterVector(values, net.layout))


def _relu_margin(net, x):
    # smallest |input| to any relu; finite differences are invalid within h of the kink
    h, margin = x, np.inf
    for i, layer in enumerate(net.layers):
        if isinstance(layer, ReLU):
            margin = min(margin, float(np.min(np.abs(h))))
        h, _ = layer.forward(net._layer_params(net.params, i), h)
    return margin


def _draw_off_kink(net, rng, shape, min_margin=1e-3):
    for tries in range(100):
        x = rng.normal(size=shape)
        if _relu_margin(net, x) > min_margin:
            return x, tries
    raise AssertionError("no input batch clear of the relu kink")


def _max_violation(analytic, numeric, rtol=1e-4, atol=1e-7):
    # fraction of the allowed tolerance used by the worst coordinate; <= 1 passes
    return float(np.max(np.abs(analytic - numeric) / (atol + rtol * np.abs(numeric))))


def test_c1_gradients_match_finite_differences(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    n_configs = redraws = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        d, h, c = (int(v) for v in rng.integers(2, 6, size=3))
        dense = _randomized(mlp((d,), (h, 4), c, dtype=np.float64), rng)
        conv = _randomized(Network([Conv2d(1, 2, 3, stride=2), ReLU(), Flatten(), Dense(18, 3)], (7, 7),
                                   dtype=np.float64), rng)
        x, r1 = _draw_off_kink(dense, rng, (5, d))
        xi, r2 = _draw_off_kink(conv, rng, (2, 7, 7))
        redraws += r1 + r2
        pairings = [
            (dense, x, rng.integers(0, c, 5), CROSS_ENTROPY),
            (dense, x, rng.normal(size=(5, c)), MSE_LOSS),
            (conv, xi, rng.integers(0, 3, 2), CROSS_ENTROPY),
            (conv, xi, rng.normal(size=(2, 3)), MSE_LOSS),
        ]
        for net, xb, yb, loss in pairings:
            _, grad = backward(net, xb, yb, loss)
            fd = finite_difference_grad(lambda p: net.loss_and_grad(xb, yb, loss, p)[0], net.params, h=1e-5)
            worst = max(worst, _max_violation(grad.values, fd.values))
            n_configs += 1
        # adversarial path: head gradient and the reversed primary gradient
        head = AdversarialHead(dense.feature_dim, 3, seed=seed, dtype=np.float64)
        ctx = rng.integers(0, 3, 5)
        _, _, g_head, g_rev = adversarial_gradients(dense, dense.params, head, x, ctx)
        fd_primary = finite_difference_grad(
            lambda p: adversarial_gradients(dense, p, head, x, ctx, reverse=False)[0], dense.params)

        def head_loss(p):
            saved, head.params = head.params, p
            try:
                return adversarial_gradients(dense, dense.params, head, x, ctx)[0]
            finally:
                head.params = saved

        fd_head = finite_difference_grad(head_loss, head.params)
        worst = max(worst, _max_violation(g_rev.values, -fd_primary.values),
                    _max_violation(g_head.values, fd_head.values))
        n_configs += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1.0 and elapsed < 60
    verdict(1, ok, f"{n_configs} configurations, worst tolerance use {worst:.3f}, "
                   f"{redraws} input batches redrawn off the relu kink, {elapsed:.1f}s")
    assert worst <= 1.0
    assert elapsed < 60


# ---------------------------------------------------------------- 2. algebra


def _vec(values):
    values = np.asarray(values, dtype=np.float64)
    return ParameterVector(values, Layout.from_shapes([("w", (len(values),))]))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(0, 1), lam=st.floats(0, 20))
def test_c2_outer_update_formula_exact(seed, alpha, lam):
    rng = np.random.default_rng(seed)
    phi, hat, bar = (rng.normal(size=17) for _ in range(3))
    got = outer_update(_vec(phi), _vec(hat), _vec(bar), alpha=alpha, lam=lam).values
    np.testing.assert_array_equal(got, phi + alpha * (hat - phi) + alpha * lam * (bar - phi))


@settings(max_examples=100, deadline=None)
@given(x=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20))
def test_c2_grl_twice_is_identity(x):
    x = np.asarray(x)
    np.testing.assert_array_equal(grl_forward(x), x)
    np.testing.assert_array_equal(grl_backward(grl_backward(x)), x)


def _toy_source(seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(8), 5)
    ctx = y % 2
    X = rng.normal(0, 2, size=(8, 6))[y] + rng.normal(0, 0.3, size=(40, 6))
    return EpisodeSource(SampleSet(X.astype(np.float32), y, ctx), way=3, shot=2, query_per_class=1)


def test_c2_lambda_zero_matches_base_bitwise(verdict):
    source = _toy_source()
    matches = []
    for base in ("reptile", "fomaml"):
        for seed in range(3):
            finals = []
            for method in (base, "ca-" + base):
                cfg = MetaConfig(method=method, lam=0.0, k=3, l=2)
                state = init_state(mlp((6,), (8,), 3), source, cfg, seed)
                meta_train(state, source, cfg, 25)
                finals.append(state.primary)
            matches.append(finals[0].identical(finals[1]))
    ok = all(matches)
    verdict(2, ok, f"lambda=0 identical in {sum(matches)}/{len(matches)} paired runs; "
                   "formula and GRL checked by property tests")
    assert ok


# ---------------------------------------------------------------- 3. lifetimes


def test_c3_optimizer_lifetimes(verdict):
    source = _toy_source()
    failures = []
    for n, k, l in [(1, 1, 1), (7, 3, 2), (12, 5, 3)]:
        cfg = MetaConfig(method="ca-reptile", k=k, l=l)
        state = init_state(mlp((6,), (8,), 3), source, cfg, 0)
        infos = []
        meta_train(state, source, cfg, n, callback=infos.append)
        if state.adv_head.optimizer.t != n * l:
            failures.append(f"head steps {state.adv_head.optimizer.t} != {n * l}")
        for i, info in enumerate(infos, 1):
            if (info.task_opt_start, info.task_opt_end) != (0, k):
                failures.append(f"task optimizer {info.task_opt_start}->{info.task_opt_end} at {i}")
            if (info.adv_opt_start, info.adv_opt_end) != (0, l):
                failures.append(f"adversarial optimizer {info.adv_opt_start}->{info.adv_opt_end} at {i}")
            if info.head_steps != i * l:
                failures.append(f"head steps {info.head_steps} at iteration {i}")
    verdict(3, not failures, "; ".join(failures[:3]) or "head N*l, inner k / l, fresh every iteration")
    assert not failures


# ---------------------------------------------------------------- 4. label noise


def test_c4_flip_fraction(verdict):
    n, eps = 10_000, 0.2
    # probability that one seed falls outside [0.18, 0.22] under Binomial(n, eps)
    p_out = stats.binom.cdf(int(np.ceil(0.18 * n)) - 1, n, eps) + stats.binom.sf(int(np.floor(0.22 * n)), n, eps)
    fractions = []
    for seed in range(200):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 4, n)
        flipped = flip_context_labels(labels, eps, rng, n_classes=4)
        assert np.all(flipped[flipped != labels] != labels[flipped != labels])
        fractions.append(np.mean(flipped != labels))
    fractions = np.asarray(fractions)
    inside = np.mean((fractions >= 0.18) & (fractions <= 0.22))
    ok = inside >= 0.99 and p_out <= 0.01
    verdict(4, ok, f"{inside:.1%} of 200 seeds inside [0.18, 0.22]; binomial tail {p_out:.1e}; "
                   f"range {fractions.min():.4f}-{fractions.max():.4f}")
    assert p_out <= 0.01
    assert inside >= 0.99


# ---------------------------------------------------------------- 5. regression sanity


@pytest.mark.slow
def test_c5_sinusoid_reptile_beats_random_init(verdict):
    t0 = time.perf_counter()
    plan = ExperimentPlan(dataset=SINE_SPEC, meta=SINE_META, **SINE_PLAN)
    trained = run_cells([plan.cell("reptile", s) for s in plan.seeds])
    scratch = run_cells([plan.cell("reptile", s, n_outer=0) for s in plan.seeds])
    assert all(r.status == "ok" for r in trained + scratch), [r.error for r in trained + scratch]
    meta_mse = np.mean([r.metric_mean for r in trained])
    random_mse = np.mean([r.metric_mean for r in scratch])
    elapsed = time.perf_counter() - t0
    ok = meta_mse <= SINE_RATIO * random_mse and elapsed < 600
    verdict(5, ok, f"meta {meta_mse:.3f} vs random {random_mse:.3f} "
                   f"(ratio {meta_mse / random_mse:.3f}, bound {SINE_RATIO}), {elapsed:.0f}s")
    assert meta_mse <= SINE_RATIO * random_mse
    assert elapsed < 600


# ---------------------------------------------------------------- 6. context-agnostic benefit


@pytest.mark.slow
def test_c6_context_agnostic_benefit_and_trend(verdict):
    t0 = time.perf_counter()
    plan = ExperimentPlan(dataset=GLYPH_SPEC, meta=GLYPH_META, **GLYPH_PLAN)
    records = sweep_context_count(plan, [3, 4])
    assert all(r.status == "ok" for r in records), [r.error for r in records]
    deltas = context_count_deltas(records)
    # n_contexts_used counts the target context: 4 used = 3 training contexts
    margin_all, margin_two = deltas[4], deltas[3]
    elapsed = time.perf_counter() - t0
    ok = margin_all > 0 and margin_two >= margin_all and elapsed < 1800
    verdict(6, ok, f"ca-base with 3 train contexts {margin_all:+.4f} "
                   f"(base {mean_metric(records, 'reptile', n_contexts_used=4):.4f}), "
                   f"with 2 train contexts {margin_two:+.4f}, {elapsed:.0f}s")
    assert margin_all > 0
    assert margin_two >= margin_all
    assert elapsed < 1800


# ---------------------------------------------------------------- 7. lambda ablation


@pytest.mark.slow
def test_c7_high_lambda_lowers_training_accuracy(verdict):
    t0 = time.perf_counter()
    plan = ExperimentPlan(dataset=GLYPH_SPEC, meta=GLYPH_META.replace(method="ca-reptile"),
                          **{**GLYPH_PLAN, "n_episodes": 50, "n_train_episodes": 200})
    records = sweep_lambda(plan, [10.0, 1.0, 0.1])
    assert all(r.status == "ok" for r in records), [r.error for r in records]
    train = {lam: np.mean([r.train_metric_mean for r in records if r.lam == lam]) for lam in (10.0, 1.0, 0.1)}
    elapsed = time.perf_counter() - t0
    ok = train[10.0] < train[1.0] and elapsed < 1800
    verdict(7, ok, "train accuracy " + ", ".join(f"lambda={k:g}: {v:.4f}" for k, v in train.items())
            + f", {elapsed:.0f}s")
    assert train[10.0] < train[1.0]
    assert elapsed < 1800


# ---------------------------------------------------------------- 8. split machinery


@settings(max_examples=100, deadline=None)
@given(n_avail=st.integers(2, 12), data=st.data())
def test_c8_context_split_disjoint(n_avail, data):
    n_used = data.draw(st.integers(2, n_avail))
    seed = data.draw(st.integers(0, 2**31))
    samples = SampleSet(np.zeros((n_avail, 1), np.float32), np.arange(n_avail), np.arange(n_avail) * 3)
    split = make_context_split(samples, n_used, rng=seed)
    train, target = set(split.train_contexts), set(split.target_contexts)
    assert not train & target
    assert len(train) == n_used - 1 and len(target) == 1


def test_c8_five_contexts_give_four_and_one(verdict):
    ds = generate(SyntheticSpec(kind="proc-glyphs", n_contexts=5, n_classes_per_context=2, samples_per_class=1))
    shapes = {(len(s.train_contexts), len(s.target_contexts))
              for s in (make_context_split(ds, 5, rng=seed) for seed in range(50))}
    verdict(8, shapes == {(4, 1)}, f"split shapes over 50 seeds: {sorted(shapes)}")
    assert shapes == {(4, 1)}


def _write_glyph_tree(root, spec):
    # render a procedural alphabet set as a directory of PNGs, black ink on white
    ds = generate(spec)
    s = ds.samples
    for i in range(len(s)):
        ctx, cls = int(s.contexts[i]), int(s.y[i])
        d = root / f"alphabet_{ctx}" / f"character_{cls:03d}"
        d.mkdir(parents=True, exist_ok=True)
        img = np.round((1.0 - s.X[i]) * 255).astype(np.uint8)
        Image.fromarray(img).save(d / f"{i:05d}.png")
    return root


@pytest.mark.slow
def test_c8_context_split_is_sterner_than_class_split(verdict, tmp_path):
    t0 = time.perf_counter()
    spec = SyntheticSpec(kind="proc-glyphs", n_contexts=5, n_classes_per_context=30, samples_per_class=16,
                         noise=0.1, distortion=0.5, seed=1)
    root = _write_glyph_tree(tmp_path / "glyphs", spec)
    plan = ExperimentPlan(dataset=TreeSource(str(root), side=16), meta=GLYPH_META,
                          split_policies=("context", "class"),
                          **{**GLYPH_PLAN, "n_outer": 2000, "n_episodes": 200})
    records = run_cells(plan.cell("reptile", s, p) for p in ("context", "class") for s in plan.seeds)
    assert all(r.status == "ok" for r in records), [r.error for r in records]
    context_acc = mean_metric(records, "reptile", split_policy="context")
    class_acc = mean_metric(records, "reptile", split_policy="class")
    elapsed = time.perf_counter() - t0
    ok = context_acc <= class_acc
    verdict(8, ok, f"base target accuracy: context split {context_acc:.4f}, class split {class_acc:.4f}, "
                   f"{elapsed:.0f}s")
    assert context_acc <= class_acc


# ---------------------------------------------------------------- 9. determinism


def test_c9_determinism_and_resume(verdict, tmp_path):
    spec = SyntheticSpec(kind="proc-glyphs", n_contexts=4, n_classes_per_context=8, samples_per_class=6)
    plan = ExperimentPlan(dataset=spec, meta=GLYPH_META.replace(k=3), methods=("reptile", "ca-reptile"),
                          n_outer=30, hidden=(32, 16), finetune_steps=3, n_episodes=10, n_train_episodes=5,
                          query_per_class=3, record_timing=False, seeds=(0, 1))
    csv_bytes, hashes = [], []
    for name in ("a", "b"):
        p = ExperimentPlan(**{**plan.__dict__, "checkpoint_dir": str(tmp_path / name)})
        records = run_cells(p.cells())
        path, _ = emit_metrics(records, tmp_path / name / "metrics.csv")
        csv_bytes.append(path.read_bytes())
        hashes.append(sorted((r.cell_id, r.checkpoint_hash) for r in records))
    same_csv = csv_bytes[0] == csv_bytes[1]
    same_hashes = hashes[0] == hashes[1]

    # interrupt at 12 iterations, save, reload, continue to 30
    resumed_ok = []
    for method in ("reptile", "ca-reptile"):
        full = run_cell(plan.cell(method, 0), keep_state=True)
        part = run_cell(plan.cell(method, 0, n_outer=12), keep_state=True)
        save_state(tmp_path / f"{method}.ckpt", part.state)
        resumed = run_cell(plan.cell(method, 0), state=load_state(tmp_path / f"{method}.ckpt"), keep_state=True)
        resumed_ok.append(state_digest(resumed.state) == state_digest(full.state)
                          and resumed.state.primary.identical(full.state.primary)
                          and resumed.metric_mean == full.metric_mean)
    ok = same_csv and same_hashes and all(resumed_ok)
    verdict(9, ok, f"csv identical {same_csv}, checkpoint hashes identical {same_hashes}, "
                   f"resume bit-exact {resumed_ok}")
    assert same_csv and same_hashes
    assert all(resumed_ok)
