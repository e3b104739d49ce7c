"""Acceptance gate: one test per shipping criterion, one printed line each.

Lines are written past pytest's capture so they appear in any run:

    [criterion N] pass|FAIL|skip: <measurements>

The heavy criteria (4 and 5) train real models on a seeded synthetic scene;
together they account for a few minutes of the suite's runtime and carry
explicit wall-clock budgets that are asserted, not just reported.
"""

import json
import os
import time

import numpy as np
import pytest

from chmffn.attention import (
    DecoderLayer,
    EncoderLayer,
    causal_mask,
    scaled_dot_product_attention,
)
from chmffn.autodiff import (
    Rng,
    abs_,
    add,
    avg_pool2d,
    clip,
    concat,
    conv2d,
    div,
    exp,
    grad_check,
    log,
    matmul,
    max_pool2d,
    mul,
    neg,
    pow_,
    relu,
    reshape,
    sigmoid,
    slice_axis,
    softmax,
    softplus,
    sqrt,
    sub,
    tanh,
    tensor,
    tmax,
    tmean,
    transpose,
    tsum,
)
from chmffn.data import load_cube, stratified_split, synth_scene, write_cube
from chmffn.layers import BatchNorm
from chmffn.metrics import (
    ConfusionCounts,
    compute_report,
    confusion,
    f1,
    kappa_paper,
    kappa_standard,
    oa,
    precision,
    recall,
    render_change_map,
)
from chmffn.model import (
    Afaf,
    ChmffnModel,
    ClassifierHead,
    Dccsa,
    ModelConfig,
    ResidualBlock,
    Stcfl,
    bce_loss,
)
from chmffn.training import TrainConfig, ablate, evaluate, train

N_SEEDS = 10
OP_TOL = 1e-4
BLOCK_TOL = 1e-3
# deep composite graphs cross relu/max kinks; a 1e-6 probe step keeps the
# central difference inside one linear piece while staying well above noise
BLOCK_STEP = 1e-6

def _overfit_scene():
    # seed 9 places both rectangles away from the border, which keeps the
    # 30% split's test pixels learnable from the training neighborhoods
    return synth_scene(20, 20, 8, 2, 0.01, seed=9)


def _overfit_config(epochs):
    model = ModelConfig(bands=8, patch=5, base_channels=4, heads=2, attention_reduction=4, seed=0)
    return TrainConfig(model=model, lr=5e-3, epochs=epochs, batch=32, ratio=0.3, patch=5, seed=0)


def _line(capsys, num, status, detail):
    with capsys.disabled():
        print(f"\n[criterion {num}] {status}: {detail}")


# ---------------------------------------------------------------------------
# criterion 1: gradient suite


def _w(rng, shape):
    return tensor(rng.uniform(0.5, 1.5, size=shape))


def _off_zero(rng, shape, gap=0.2):
    mag = rng.uniform(gap, 2.0, size=shape)
    sign = np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)
    return mag * sign


def _spread(rng, shape):
    # distinct entries separated by ~0.1 so max/argmax never flips under FD
    n = int(np.prod(shape))
    return (rng.permutation(n).reshape(shape) * 0.1) + rng.uniform(0, 0.005, size=shape)


def _unary(op, sampler):
    def runner(seed):
        rng = np.random.default_rng(seed)
        x = tensor(sampler(rng, (3, 4)), requires_grad=True)
        w = _w(rng, (3, 4))
        return grad_check(lambda t: (op(t) * w).sum(), x).max_rel_err

    return runner


def _binary(op, right_sampler):
    def runner(seed):
        rng = np.random.default_rng(seed)
        a = tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
        b = tensor(right_sampler(rng, (3, 4)), requires_grad=True)
        w = _w(rng, (3, 4))
        e1 = grad_check(lambda t: (op(t, b) * w).sum(), a).max_rel_err
        e2 = grad_check(lambda t: (op(a, t) * w).sum(), b).max_rel_err
        return max(e1, e2)

    return runner


def _std(rng, shape):
    return rng.uniform(-2, 2, shape)


def _pos(rng, shape):
    return rng.uniform(0.1, 3.0, shape)


def _clip_safe(rng, shape):
    x = rng.uniform(-2, 2, shape)
    for edge in (-0.8, 0.9):
        near = np.abs(x - edge) < 0.05
        x = np.where(near, x + 0.2, x)
    return x


def _run_matmul(seed):
    rng = np.random.default_rng(seed)
    a = tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
    b = tensor(rng.uniform(-1, 1, (4, 2)), requires_grad=True)
    w = _w(rng, (3, 2))
    e1 = grad_check(lambda t: (matmul(t, b) * w).sum(), a).max_rel_err
    e2 = grad_check(lambda t: (matmul(a, t) * w).sum(), b).max_rel_err
    return max(e1, e2)


def _run_softmax(seed):
    rng = np.random.default_rng(seed)
    x = tensor(rng.uniform(-2, 2, (3, 5)), requires_grad=True)
    w = _w(rng, (3, 5))
    return grad_check(lambda t: (softmax(t, axis=-1) * w).sum(), x).max_rel_err


def _run_reductions(seed):
    # weights are drawn once, outside the probed functions, which must be
    # deterministic across repeated evaluation
    rng = np.random.default_rng(seed)
    x = tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
    xm = tensor(_spread(rng, (3, 4)), requires_grad=True)
    w1, w2, w3 = _w(rng, (3, 1)), _w(rng, (4,)), _w(rng, (3,))
    errs = [
        grad_check(lambda t: tsum(t), x).max_rel_err,
        grad_check(lambda t: (tsum(t, axis=1, keepdims=True) * w1).sum(), x).max_rel_err,
        grad_check(lambda t: (tmean(t, axis=0) * w2).sum(), x).max_rel_err,
        grad_check(lambda t: (tmax(t, axis=1) * w3).sum(), xm).max_rel_err,
    ]
    return max(errs)


def _run_shape_ops(seed):
    rng = np.random.default_rng(seed)
    x = tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
    y = tensor(rng.uniform(-2, 2, (2, 3, 4)), requires_grad=True)
    z = tensor(rng.uniform(-2, 2, (3, 5)), requires_grad=True)
    other = tensor(rng.uniform(-2, 2, (2, 4)))
    w1, w2, w3, w4 = _w(rng, (2, 6)), _w(rng, (4, 2, 3)), _w(rng, (3, 2)), _w(rng, (5, 4))
    errs = [
        grad_check(lambda t: (reshape(t, (2, 6)) * w1).sum(), x).max_rel_err,
        grad_check(lambda t: (transpose(t, (2, 0, 1)) * w2).sum(), y).max_rel_err,
        grad_check(lambda t: (slice_axis(t, 1, 1, 3) * w3).sum(), z).max_rel_err,
        grad_check(lambda t: (concat([t, other], axis=0) * w4).sum(), x).max_rel_err,
    ]
    return max(errs)


def _run_conv(seed):
    rng = np.random.default_rng(seed)
    x = tensor(rng.uniform(-1, 1, (2, 2, 4, 4)), requires_grad=True)
    w = tensor(rng.uniform(-0.5, 0.5, (3, 2, 3, 3)), requires_grad=True)
    b = tensor(rng.uniform(-0.5, 0.5, (3,)), requires_grad=True)
    ww = _w(rng, (2, 3, 4, 4))
    errs = [
        grad_check(lambda t: (conv2d(t, w, b) * ww).sum(), x).max_rel_err,
        grad_check(lambda t: (conv2d(x, t, b) * ww).sum(), w).max_rel_err,
        grad_check(lambda t: (conv2d(x, w, t) * ww).sum(), b).max_rel_err,
    ]
    return max(errs)


def _run_pools(seed):
    rng = np.random.default_rng(seed)
    x = tensor(_spread(rng, (2, 2, 4, 4)), requires_grad=True)
    w = _w(rng, (2, 2, 2, 2))
    errs = [
        grad_check(lambda t: (max_pool2d(t, 2) * w).sum(), x).max_rel_err,
        grad_check(lambda t: (avg_pool2d(t, 2) * w).sum(), x).max_rel_err,
    ]
    return max(errs)


OP_RUNNERS = [
    ("add", _binary(add, _std)),
    ("sub", _binary(sub, _std)),
    ("mul", _binary(mul, _std)),
    ("div", _binary(div, lambda rng, s: _off_zero(rng, s, gap=0.3))),
    ("neg", _unary(neg, _std)),
    ("pow", _unary(lambda t: pow_(t, 1.7), _pos)),
    ("sqrt", _unary(sqrt, _pos)),
    ("exp", _unary(exp, _std)),
    ("log", _unary(log, _pos)),
    ("abs", _unary(abs_, _off_zero)),
    ("clip", _unary(lambda t: clip(t, -0.8, 0.9), _clip_safe)),
    ("tanh", _unary(tanh, _std)),
    ("sigmoid", _unary(sigmoid, _std)),
    ("relu", _unary(relu, _off_zero)),
    ("softplus", _unary(softplus, _std)),
    ("softmax", _run_softmax),
    ("matmul", _run_matmul),
    ("sum_mean_max", _run_reductions),
    ("reshape_transpose_slice_concat", _run_shape_ops),
    ("conv2d", _run_conv),
    ("pools", _run_pools),
]


def _block_runner(build):
    """FD over every input and every parameter of a composite block."""

    def runner(seed):
        module, inputs = build(seed)
        rng = np.random.default_rng(1000 + seed)
        probe = module(*inputs)
        outs = probe if isinstance(probe, tuple) else (probe,)
        ws = [_w(rng, o.shape) for o in outs]

        def loss(_):
            result = module(*inputs)
            parts = result if isinstance(result, tuple) else (result,)
            total = (parts[0] * ws[0]).sum()
            for part, w in zip(parts[1:], ws[1:]):
                total = total + (part * w).sum()
            return total

        worst = 0.0
        for x in inputs:
            rep = grad_check(loss, x, step=BLOCK_STEP, tol=BLOCK_TOL, max_entries=4, sample_seed=seed)
            worst = max(worst, rep.max_rel_err)
        for _, p in module.named_parameters():
            rep = grad_check(loss, p, step=BLOCK_STEP, tol=BLOCK_TOL, max_entries=2, sample_seed=seed)
            worst = max(worst, rep.max_rel_err)
        return worst

    return runner


def _build_residual(seed):
    rng = np.random.default_rng(seed)
    block = ResidualBlock(2, 2, Rng(seed))
    return block, [tensor(rng.normal(size=(2, 2, 3, 3)), requires_grad=True)]


def _build_encoder(seed):
    rng = np.random.default_rng(seed)
    layer = EncoderLayer(6, 2, 12, Rng(seed))
    return layer, [tensor(rng.normal(size=(2, 9, 6)), requires_grad=True)]


def _build_decoder(seed):
    rng = np.random.default_rng(seed)
    layer = DecoderLayer(6, 2, 12, Rng(seed))
    return layer, [
        tensor(rng.normal(size=(2, 9, 6)), requires_grad=True),
        tensor(rng.normal(size=(2, 9, 6)), requires_grad=True),
    ]


def _build_dccsa(seed):
    rng = np.random.default_rng(seed)
    block = Dccsa(6, 2, Rng(seed))
    return block, [
        tensor(rng.normal(size=(2, 6, 3, 3)), requires_grad=True),
        tensor(rng.normal(size=(2, 6, 3, 3)), requires_grad=True),
    ]


def _build_stcfl(seed):
    rng = np.random.default_rng(seed)
    block = Stcfl(6, Rng(seed))
    return block, [tensor(rng.normal(size=(2, 6, 3, 3)), requires_grad=True) for _ in range(3)]


def _build_afaf(seed):
    rng = np.random.default_rng(seed)
    block = Afaf(6, 2, Rng(seed))
    return block, [
        tensor(rng.normal(size=(2, 6, 3, 3)), requires_grad=True),
        tensor(rng.normal(size=(2, 12, 3, 3)), requires_grad=True),
        tensor(rng.normal(size=(2, 6, 3, 3)), requires_grad=True),
    ]


def _build_head(seed):
    rng = np.random.default_rng(seed)
    block = ClassifierHead(8, 4, Rng(seed))
    return block, [tensor(rng.normal(size=(2, 8, 3, 3)), requires_grad=True)]


def _run_forward_pair(seed):
    # full pipeline with bce loss on the tiny B=2, P=3, C=2, H=2 config;
    # rotating the parameter subset across seeds covers every parameter
    cfg = ModelConfig(bands=2, patch=3, base_channels=2, heads=2, attention_reduction=2, seed=seed)
    model = ChmffnModel(cfg)
    rng = np.random.default_rng(100 + seed)
    shape = (2, cfg.bands, cfg.patch, cfg.patch)
    p1 = tensor(rng.normal(size=shape))
    p2 = tensor(rng.normal(size=shape))
    labels = [seed % 2, (seed + 1) % 2]

    def loss(_):
        return bce_loss(model.forward_pair(p1, p2), labels)

    params = [p for _, p in model.named_parameters()]
    worst = 0.0
    for p in params[seed % 5 :: 5]:
        rep = grad_check(loss, p, step=BLOCK_STEP, tol=BLOCK_TOL, max_entries=2, sample_seed=seed)
        worst = max(worst, rep.max_rel_err)
    return worst


BLOCK_RUNNERS = [
    ("residual_block", _block_runner(_build_residual)),
    ("encoder_layer", _block_runner(_build_encoder)),
    ("decoder_layer", _block_runner(_build_decoder)),
    ("dccsa", _block_runner(_build_dccsa)),
    ("stcfl", _block_runner(_build_stcfl)),
    ("afaf", _block_runner(_build_afaf)),
    ("classifier_head", _block_runner(_build_head)),
    ("forward_pair_bce", _run_forward_pair),
]


def test_criterion_1_gradient_suite(capsys):
    started = time.monotonic()
    worst_op, worst_block = 0.0, 0.0
    failures = []
    for name, runner in OP_RUNNERS:
        for seed in range(N_SEEDS):
            err = runner(seed)
            worst_op = max(worst_op, err)
            if err > OP_TOL:
                failures.append(f"{name}@{seed}={err:.2e}")
    for name, runner in BLOCK_RUNNERS:
        for seed in range(N_SEEDS):
            err = runner(seed)
            worst_block = max(worst_block, err)
            if err > BLOCK_TOL:
                failures.append(f"{name}@{seed}={err:.2e}")
    elapsed = time.monotonic() - started
    ok = not failures and elapsed <= 300.0
    _line(
        capsys,
        1,
        "pass" if ok else "FAIL",
        f"{len(OP_RUNNERS)} op families and {len(BLOCK_RUNNERS)} blocks x {N_SEEDS} seeds; "
        f"worst op err {worst_op:.2e} (tol {OP_TOL}), worst block err {worst_block:.2e} "
        f"(tol {BLOCK_TOL}); {elapsed:.0f}s of 300s budget",
    )
    assert ok, f"failures: {failures[:10]} elapsed={elapsed:.0f}s"


# ---------------------------------------------------------------------------
# criterion 2: normalization invariants


def test_criterion_2_normalization_invariants(capsys):
    worst_softmax = 0.0
    worst_attention = 0.0
    masked_exact = True
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        probs = softmax(tensor(rng.normal(size=(4, 7)) * 3), axis=-1)
        worst_softmax = max(worst_softmax, float(np.abs(probs.data.sum(axis=-1) - 1).max()))

        q = tensor(rng.normal(size=(5, 3)))
        k = tensor(rng.normal(size=(5, 3)))
        v = tensor(rng.normal(size=(5, 3)))
        mask = causal_mask(5)
        _, weights = scaled_dot_product_attention(q, k, v, mask=mask, return_weights=True)
        worst_attention = max(worst_attention, float(np.abs(weights.data.sum(axis=-1) - 1).max()))
        if not np.all(weights.data[~mask] == 0.0):
            masked_exact = False

    bn = BatchNorm(3)
    bn.train()
    rng = np.random.default_rng(99)
    x = tensor(rng.normal(size=(8, 3, 5, 5)) * 10 + 4)
    y = bn(x).data
    mean = np.abs(y.mean(axis=(0, 2, 3))).max()
    var = np.abs(y.var(axis=(0, 2, 3)) - 1).max()

    ok = worst_softmax <= 1e-9 and worst_attention <= 1e-9 and masked_exact and mean <= 1e-8 and var <= 1e-6
    _line(
        capsys,
        2,
        "pass" if ok else "FAIL",
        f"softmax row-sum err {worst_softmax:.1e}, attention row-sum err {worst_attention:.1e}, "
        f"masked weights exactly zero: {masked_exact}; BN mean {mean:.1e} (<=1e-8), "
        f"BN var err {var:.1e} (<=1e-6)",
    )
    assert ok


# ---------------------------------------------------------------------------
# criterion 3: metric oracle


def _brute_force(pred, gt):
    tp = tn = fp = fn = 0
    for p, g in zip(pred.tolist(), gt.tolist()):
        if p == 1 and g == 1:
            tp += 1
        elif p == 0 and g == 0:
            tn += 1
        elif p == 1 and g == 0:
            fp += 1
        else:
            fn += 1
    n = tp + tn + fp + fn
    out = {"oa": (tp + tn) / n}
    pe_std = ((tp + fp) * (tp + fn) + (tn + fn) * (tn + fp)) / n**2
    pe_pap = (tp * fn + tp * fp + tn * fn + tn * fp) / n**2
    if pe_std != 1.0:
        out["kc_standard"] = (out["oa"] - pe_std) / (1.0 - pe_std)
    if pe_pap != 1.0:
        out["kc_paper"] = (out["oa"] - pe_pap) / (1.0 - pe_pap)
    if tp + fp > 0:
        out["pr"] = tp / (tp + fp)
    if tp + fn > 0:
        out["re"] = tp / (tp + fn)
    if "pr" in out and "re" in out and out["pr"] + out["re"] > 0:
        out["f1"] = 2 * out["pr"] * out["re"] / (out["pr"] + out["re"])
    return (tp, tn, fp, fn), out


def test_criterion_3_metric_oracle(capsys):
    # hand-worked example, re-derived from scratch right here
    c = ConfusionCounts(tp=50, tn=30, fp=10, fn=10)
    report = compute_report(c)
    hand = {
        "oa": 80 / 100,
        "pr": 50 / 60,
        "re": 50 / 60,
        "f1": 50 / 60,
        "kc_standard": (0.8 - 0.52) / (1 - 0.52),  # Cohen marginals: 0.6*0.6 + 0.4*0.4
        "kc_paper": (0.8 - 0.16) / (1 - 0.16),     # product form: (50*10+50*10+30*10+30*10)/1e4
    }
    worked_ok = (
        abs(report.oa - hand["oa"]) < 1e-12
        and abs(report.pr - hand["pr"]) < 1e-12
        and abs(report.re - hand["re"]) < 1e-12
        and abs(report.f1 - hand["f1"]) < 1e-12
        and abs(report.kc_standard - hand["kc_standard"]) < 1e-12
        and abs(report.kc_paper - hand["kc_paper"]) < 1e-12
        and abs(report.pr - 0.833333) < 5e-7
        and abs(report.kc_standard - 0.583333) < 5e-7
        and abs(report.kc_paper - 0.761905) < 5e-7
    )

    rng = np.random.default_rng(7)
    worst = 0.0
    n_cases = 0
    fns = {
        "oa": oa,
        "kc_standard": kappa_standard,
        "kc_paper": kappa_paper,
        "pr": precision,
        "re": recall,
        "f1": f1,
    }
    while n_cases < 1000:
        counts = rng.integers(0, 40, size=4)
        if counts.sum() == 0:
            continue
        tp, tn, fp, fn_ = (int(v) for v in counts)
        pred = np.concatenate([np.ones(tp), np.zeros(tn), np.ones(fp), np.zeros(fn_)]).astype(np.uint8)
        gt = np.concatenate([np.ones(tp), np.zeros(tn), np.zeros(fp), np.ones(fn_)]).astype(np.uint8)
        order = rng.permutation(pred.size)
        pred, gt = pred[order], gt[order]
        got = confusion(pred.reshape(1, -1), gt.reshape(1, -1))
        ref_counts, ref = _brute_force(pred, gt)
        assert (got.tp, got.tn, got.fp, got.fn) == ref_counts
        for key, fn in fns.items():
            if key in ref:
                worst = max(worst, abs(fn(got) - ref[key]))
        n_cases += 1

    ok = worked_ok and worst <= 1e-12
    _line(
        capsys,
        3,
        "pass" if ok else "FAIL",
        f"worked example exact to 1e-12 and quoted 6-decimal values: {worked_ok}; "
        f"{n_cases} random confusions vs per-pixel brute force, worst abs diff {worst:.1e} (<=1e-12)",
    )
    assert ok


# ---------------------------------------------------------------------------
# criteria 4 and 5: overfit and ablation on the seeded synthetic scene


def test_criterion_4_synthetic_overfit(capsys):
    started = time.monotonic()
    scene = _overfit_scene()
    cfg = _overfit_config(epochs=200)
    model, history, split = train(scene, cfg)
    report, _ = evaluate(model, scene, split)
    elapsed = time.monotonic() - started
    train_oa = history.epoch_train_oa[-1]
    ok = train_oa >= 0.99 and report.f1 >= 0.95 and elapsed <= 600.0
    _line(
        capsys,
        4,
        "pass" if ok else "FAIL",
        f"20x20x8 scene, 30% split, {cfg.epochs} epochs: train OA {train_oa:.4f} (>=0.99), "
        f"test F1 {report.f1:.4f} (>=0.95), test OA {report.oa:.4f}; {elapsed:.0f}s of 600s budget",
    )
    assert ok


def test_criterion_5_ablation_harness(capsys, tmp_path):
    started = time.monotonic()
    scene = _overfit_scene()
    cfg = _overfit_config(epochs=120)
    out_path = str(tmp_path / "ablation.json")
    table = ablate(scene, cfg, out_path=out_path)
    elapsed = time.monotonic() - started
    oas = {variant: row["metrics"]["oa"] for variant, row in table.items()}
    emitted = os.path.exists(out_path) and set(json.loads(open(out_path).read())) == set(table)
    ok = len(table) == 5 and all(v >= 0.9 for v in oas.values()) and emitted
    summary = " ".join(f"{k}={v:.3f}" for k, v in sorted(oas.items()))
    _line(
        capsys,
        5,
        "pass" if ok else "FAIL",
        f"five variants trained and evaluated, consolidated table emitted: {emitted}; "
        f"test OA (each >=0.9): {summary}; {elapsed:.0f}s",
    )
    assert ok


# ---------------------------------------------------------------------------
# criterion 6: determinism


def test_criterion_6_determinism(capsys, tmp_path):
    scene = synth_scene(12, 12, 3, 2, 0.05, seed=3)
    model_cfg = ModelConfig(bands=3, patch=3, base_channels=2, heads=2, attention_reduction=2, seed=0)
    cfg = TrainConfig(model=model_cfg, lr=5e-2, epochs=3, batch=16, ratio=0.3, patch=3, seed=0)
    from chmffn.training import save_checkpoint

    m1, h1, _ = train(scene, cfg)
    m2, h2, _ = train(scene, cfg)
    pa, pb = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
    save_checkpoint(pa, m1, cfg)
    save_checkpoint(pb, m2, cfg)
    same_bytes = open(pa, "rb").read() == open(pb, "rb").read()
    same_history = h1.deterministic_part() == h2.deterministic_part()
    ok = same_bytes and same_history
    _line(
        capsys,
        6,
        "pass" if ok else "FAIL",
        f"two identically seeded runs: checkpoints byte-identical: {same_bytes}; "
        f"loss/accuracy history identical: {same_history} (wall time excluded by contract)",
    )
    assert ok


# ---------------------------------------------------------------------------
# criterion 7: rendering contract


def test_criterion_7_rendering_contract(capsys):
    pred = np.array([[1, 0], [1, 0]], dtype=np.uint8)
    gt = np.array([[1, 0], [0, 1]], dtype=np.uint8)
    rgb = render_change_map(pred, gt).to_rgb()
    colors_ok = (
        tuple(rgb[0, 0]) == (255, 255, 255)  # TP white
        and tuple(rgb[0, 1]) == (0, 0, 0)    # TN black
        and tuple(rgb[1, 0]) == (0, 255, 0)  # FP green
        and tuple(rgb[1, 1]) == (255, 0, 0)  # FN red
    )

    reconciled = True
    for seed in range(N_SEEDS):
        rng = np.random.default_rng(seed)
        p = (rng.uniform(size=(40, 40)) > 0.4).astype(np.uint8)
        g = (rng.uniform(size=(40, 40)) > 0.6).astype(np.uint8)
        cmap = render_change_map(p, g)
        ref = confusion(p, g)
        img = cmap.to_rgb()
        hist = {
            "tp": int((img == (255, 255, 255)).all(axis=-1).sum()),
            "tn": int((img == (0, 0, 0)).all(axis=-1).sum()),
            "fp": int((img == (0, 255, 0)).all(axis=-1).sum()),
            "fn": int((img == (255, 0, 0)).all(axis=-1).sum()),
        }
        if hist != {"tp": ref.tp, "tn": ref.tn, "fp": ref.fp, "fn": ref.fn}:
            reconciled = False
        c = cmap.counts()
        if (c.tp, c.tn, c.fp, c.fn) != (ref.tp, ref.tn, ref.fp, ref.fn):
            reconciled = False

    ok = colors_ok and reconciled
    _line(
        capsys,
        7,
        "pass" if ok else "FAIL",
        f"TP/TN/FP/FN rendered exactly white/black/green/red: {colors_ok}; "
        f"color histograms reconcile with confusion counts on {N_SEEDS} random rasters: {reconciled}",
    )
    assert ok


# ---------------------------------------------------------------------------
# criterion 8: data contracts


def test_criterion_8_data_contracts(capsys, tmp_path):
    scene = synth_scene(9, 11, 4, 2, 0.1, seed=2)
    h1 = str(tmp_path / "cube.json")
    write_cube(scene.t1, h1)
    loaded = load_cube(h1)
    h2 = str(tmp_path / "cube2.json")
    write_cube(loaded, h2)
    byte_exact = (
        loaded.data.tobytes() == scene.t1.data.tobytes()
        and open(str(tmp_path / "cube.bin"), "rb").read() == open(str(tmp_path / "cube2.bin"), "rb").read()
    )

    # ground truth shaped like the 420x140 farmland raster: 18383 changed px
    gt = np.zeros(420 * 140, dtype=np.uint8)
    gt[:18383] = 1
    np.random.default_rng(0).shuffle(gt)
    gt = gt.reshape(420, 140)
    split = stratified_split(gt, 0.3, 0)
    train_changed = int(gt[split.train[:, 0], split.train[:, 1]].sum())
    train_unchanged = split.train.shape[0] - train_changed
    counts_ok = train_changed == 5514 and train_unchanged == 12125

    ok = byte_exact and counts_ok
    _line(
        capsys,
        8,
        "pass" if ok else "FAIL",
        f"cube write/load/write round trip byte-exact: {byte_exact}; farmland-shaped 0.3 split "
        f"takes {train_changed} changed + {train_unchanged} unchanged training pixels "
        f"(expected 5514 + 12125)",
    )
    assert ok


# ---------------------------------------------------------------------------
# criterion 9: optional real-scene run (dataset-conditional, not a CI gate)


def test_criterion_9_real_scene_if_available(capsys):
    root = os.environ.get("CHMFFN_FARMLAND_DIR")
    if not root:
        _line(
            capsys,
            9,
            "skip",
            "CHMFFN_FARMLAND_DIR not set; supply t1.json/t2.json/gt.json to run the real-scene check",
        )
        pytest.skip("CHMFFN_FARMLAND_DIR not set")
    from chmffn.data import load_scene

    scene = load_scene(
        os.path.join(root, "t1.json"),
        os.path.join(root, "t2.json"),
        os.path.join(root, "gt.json"),
    )
    cfg = TrainConfig(model=ModelConfig(bands=scene.t1.bands))
    started = time.monotonic()
    model, history, split = train(scene, cfg)
    report, _ = evaluate(model, scene, split)
    elapsed = time.monotonic() - started
    ok = report.oa >= 0.90
    _line(
        capsys,
        9,
        "pass" if ok else "FAIL",
        f"real scene {scene.gt.shape[0]}x{scene.gt.shape[1]}x{scene.t1.bands}: "
        f"test OA {report.oa:.4f} (>=0.90), KC {report.kc_standard:.4f}; {elapsed:.0f}s",
    )
    assert ok
