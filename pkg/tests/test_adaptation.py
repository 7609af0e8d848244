import math
from dataclasses import replace

import numpy as np
import pytest

from ecan.adaptation import (
    ABLATIONS,
    GAMMA_GRID,
    LAMBDA_GRID,
    PseudoLabelTable,
    TrainConfig,
    assign_pseudo_labels,
    compute_class_weights,
    evaluate,
    joint_loss,
    train_ecan,
    train_source_only,
    warmup_weight,
)
from ecan.data import Dataset, EvalLabels, shift_a, synth_two_domain
from ecan.errors import ContractError
from ecan.kernels import ladder_spec
from ecan.mmd import ClassWeights, mmd2_unbiased, mmd2_weighted
from ecan.model import ModelParams, forward, init_params, softmax

from oracles import central_diff, rel_err


def zero_model(D, L):
    return ModelParams([np.zeros((D, L))], [np.zeros(L)])


def small_problem(seed=0, n=200, iterations=60):
    cfg = shift_a(seed=seed, n_per_domain=n)
    src, tgt, labels = synth_two_domain(cfg)
    config = TrainConfig(seed=seed, iterations=iterations, batch_source=32, batch_target=32,
                         hidden=(16,), gamma=1.0, lam=0.1, n_p=10)
    return config, src, tgt, labels


# -- pseudo labels ----------------------------------------------------------

def test_zero_model_pseudo_labels():
    t = assign_pseudo_labels(zero_model(3, 5), np.ones((4, 3)), iteration=7)
    np.testing.assert_array_equal(t.confidences, np.full((4, 5), 0.2))
    np.testing.assert_array_equal(t.labels, 0)
    assert t.iteration == 7


def test_confident_pseudo_label():
    p = zero_model(2, 4)
    p.weights[0][0, 3] = 20.0
    t = assign_pseudo_labels(p, [[1.0, 0.0]])
    assert t.labels[0] == 3 and t.confidences[0, 3] > 0.99


def test_pseudo_labels_match_row_by_row(rng):
    p = init_params([5, 7, 4], rng)
    X = rng.normal(size=(9, 5))
    t = assign_pseudo_labels(p, X)
    for i in range(9):
        _, _, pr = forward(p, X[i:i + 1])
        np.testing.assert_allclose(t.confidences[i], pr[0], rtol=0, atol=1e-15)
        assert t.labels[i] == int(np.argmax(pr[0]))
    assert np.all(np.abs(t.confidences.sum(axis=1) - 1) <= 1e-12)


# -- class weights -----------------------------------------------------------

def table(conf):
    conf = np.asarray(conf, dtype=float)
    return PseudoLabelTable(np.argmax(conf, axis=1), conf)


def test_alpha_two_class_example():
    a = compute_class_weights(table([[0.5, 0.5]] * 3), [3, 1])
    np.testing.assert_allclose(a.alpha, [2 / 3, 2.0], rtol=1e-15)


def test_alpha_all_mass_on_class_zero():
    a = compute_class_weights(table([[1.0, 0, 0, 0]] * 5), [2, 2, 2, 2])
    np.testing.assert_array_equal(a.alpha, [4.0, 0, 0, 0])


def test_alpha_matched_is_one():
    a = compute_class_weights(table([[0.5, 0.25, 0.25], [0.5, 0.25, 0.25]]), [4, 2, 2])
    np.testing.assert_allclose(a.alpha, 1.0, rtol=1e-15)


def test_alpha_absent_source_class():
    a = compute_class_weights(table([[0.2, 0.3, 0.5]]), [3, 0, 1])
    assert a.alpha[1] == 0.0 and a.absent == (1,)


def test_alpha_mass_conservation(rng):
    for _ in range(20):
        L = int(rng.integers(2, 8))
        conf = softmax(rng.normal(size=(30, L)) * 3)
        counts = rng.integers(1, 50, L)
        a = compute_class_weights(table(conf), counts)
        assert math.fsum(a.alpha * counts / counts.sum()) == pytest.approx(1.0, abs=1e-9)


def test_alpha_errors():
    with pytest.raises(ContractError):
        compute_class_weights(PseudoLabelTable(np.zeros(0, int), np.zeros((0, 2))), [1, 1])
    with pytest.raises(ContractError):
        compute_class_weights(table([[0.5, 0.5]]), [1, 1, 1])


# -- warm-up -------------------------------------------------------------------

def test_warmup_values():
    assert warmup_weight(0.0) == 0.0
    assert warmup_weight(1.0) == pytest.approx(0.999909, abs=1e-6)
    assert warmup_weight(0.5) == pytest.approx(0.986614, abs=1e-6)
    assert warmup_weight(1.0) == 2 / (1 + math.exp(-10)) - 1


def test_warmup_monotone():
    w = [warmup_weight(p) for p in np.linspace(0, 1, 101)]
    assert all(b > a for a, b in zip(w, w[1:]))
    assert all(0 <= v < 1 for v in w)


@pytest.mark.parametrize("p", [-0.01, 1.01, float("nan")])
def test_warmup_domain(p):
    with pytest.raises(ContractError):
        warmup_weight(p)


# -- joint objective -----------------------------------------------------------

def joint_instance(rng, L=3, hidden=(6,)):
    p = init_params([4, *hidden, L], rng)
    Xs, Xt = rng.normal(size=(9, 4)), rng.normal(size=(8, 4)) + 0.3
    ys = rng.permutation(np.arange(9) % L)
    yt = rng.permutation(np.arange(8) % L)
    alpha = ClassWeights(rng.uniform(0.3, 2.0, L))
    return p, Xs, ys, Xt, yt, alpha, ladder_spec(1.3)


def test_joint_zero_weights_is_source_loss(rng):
    p, Xs, ys, Xt, yt, alpha, spec = joint_instance(rng)
    from ecan.model import softmax_loss_and_grad
    res = joint_loss(p, Xs, ys, Xt, yt, alpha, spec, 0.0, 0.0)
    _, logits, _ = forward(p, Xs)
    assert res.loss == softmax_loss_and_grad(logits, ys)[0]
    # target samples contribute nothing: moving them leaves the gradient unchanged
    res2 = joint_loss(p, Xs, ys, Xt + 5.0, yt, alpha, spec, 0.0, 0.0)
    for a, b in zip(res.grads.arrays(), res2.grads.arrays()):
        np.testing.assert_array_equal(a, b)


def test_joint_weighted_term_composition(rng):
    p, Xs, ys, Xt, yt, alpha, spec = joint_instance(rng)
    res = joint_loss(p, Xs, ys, Xt, yt, alpha, spec, 1.0, 0.0, source_weight=0.0)
    fs, _, _ = forward(p, Xs)
    ft, _, _ = forward(p, Xt)
    assert res.loss == pytest.approx(mmd2_weighted(fs, ys, alpha, ft, spec), abs=1e-12)
    plain = joint_loss(p, Xs, ys, Xt, yt, alpha, spec, 1.0, 0.0, source_weight=0.0, reweight=False)
    assert plain.loss == pytest.approx(mmd2_unbiased(fs, ft, spec), abs=1e-12)


@pytest.mark.parametrize("hidden", [(), (6,), (5, 4)])
def test_joint_gradients_finite_differences(rng, hidden):
    p, Xs, ys, Xt, yt, alpha, spec = joint_instance(rng, hidden=hidden)
    res = joint_loss(p, Xs, ys, Xt, yt, alpha, spec, 0.8, 0.5)

    def f(arr):
        def g(z):
            saved = arr.copy()
            arr[...] = z
            try:
                return joint_loss(p, Xs, ys, Xt, yt, alpha, spec, 0.8, 0.5).loss
            finally:
                arr[...] = saved
        return g

    for arr, an in zip(p.arrays(), res.grads.arrays()):
        fd = central_diff(f(arr), arr.copy())
        assert rel_err(an, fd, floor=1e-3 * np.abs(fd).max()) <= 1e-5


def test_joint_degenerate_conditional_is_flagged(rng):
    p, Xs, ys, Xt, yt, alpha, spec = joint_instance(rng)
    # three target samples, one per class: no class has 2 on the target side
    res = joint_loss(p, Xs, ys, Xt[:3], np.array([0, 1, 2]), alpha, spec, 0.5, 1.0)
    assert res.conditional_degenerate and res.conditional_mmd == 0.0
    off = joint_loss(p, Xs, ys, Xt[:3], np.array([0, 1, 2]), alpha, spec, 0.5, 0.0)
    assert res.loss == off.loss
    assert not joint_loss(p, Xs, ys, Xt, yt, alpha, spec, 0.5, 1.0).conditional_degenerate


# -- training loop ----------------------------------------------------------

def test_config_validation():
    for bad in (dict(gamma=-1), dict(lam=-0.1), dict(lr=0), dict(n_p=0), dict(batch_source=1),
                dict(batch_target=1), dict(momentum=1.0)):
        with pytest.raises(ContractError):
            TrainConfig(**bad)


def test_default_grids():
    assert GAMMA_GRID == (0, 0.01, 0.03, 0.05, 0.1, 0.3, 0.5, 1)
    assert LAMBDA_GRID == (0, 0.001, 0.01, 0.1)
    assert ABLATIONS["reweight+condition"] == (True, True)


def test_zero_weights_match_source_only():
    config, src, tgt, _ = small_problem()
    config = replace(config, gamma=0.0, lam=0.0)
    a = train_ecan(config, src, tgt)
    b = train_source_only(config, src, tgt)
    for ra, rb in zip(a.history, b.history):
        for key in ("iteration", "loss", "source_loss"):
            assert ra[key] == rb[key]
    for x, y in zip(a.params.arrays(), b.params.arrays()):
        assert x.tobytes() == y.tobytes()


def test_unit_alpha_reweight_equals_plain_mmd():
    config, src, tgt, _ = small_problem(iterations=30)
    forced = train_ecan(replace(config, force_unit_alpha=True).variant("reweight"), src, tgt)
    plain = train_ecan(config.variant("mmd"), src, tgt)
    assert [r["loss"] for r in forced.history] == [r["loss"] for r in plain.history]
    for x, y in zip(forced.params.arrays(), plain.params.arrays()):
        assert x.tobytes() == y.tobytes()


def test_training_is_deterministic():
    config, src, tgt, labels = small_problem(iterations=25)
    a = train_ecan(config, src, tgt, labels)
    b = train_ecan(config, src, tgt, labels)
    assert a.history == b.history
    for x, y in zip(a.params.arrays(), b.params.arrays()):
        assert x.tobytes() == y.tobytes()


def test_history_records():
    config, src, tgt, labels = small_problem(iterations=12)
    seen = []
    res = train_ecan(config, src, tgt, labels, on_record=seen.append)
    assert seen == res.history and len(seen) == 12
    first, last = seen[0], seen[-1]
    assert set(first) == {"iteration", "loss", "source_loss", "weighted_mmd", "conditional_mmd",
                          "w", "alpha", "skipped_classes", "target_accuracy"}
    assert first["w"] == 0.0 and last["w"] == pytest.approx(warmup_weight(1.0))
    assert all(0 <= a <= config.alpha_max for r in seen for a in r["alpha"])
    # the target accuracy track must not change training
    blind = train_ecan(config, src, tgt)
    assert [r["loss"] for r in blind.history] == [r["loss"] for r in seen]


def test_alpha_mass_conserved_after_training():
    config, src, tgt, _ = small_problem(iterations=20)
    res = train_ecan(config, src, tgt)
    counts = np.bincount(src.labels, minlength=4)
    assert math.fsum(res.alpha.alpha * counts / counts.sum()) == pytest.approx(1.0, abs=1e-9)


def test_train_rejects_tiny_source_class():
    X = np.zeros((10, 2))
    src = Dataset(X, [0] * 9 + [1])
    with pytest.raises(ContractError, match="fewer than 2"):
        train_ecan(TrainConfig(iterations=1, batch_source=4, batch_target=4), src, Dataset(X))


def test_degradation_safety():
    """No shift, balanced classes: adaptation must not wreck a good solution."""
    gaps = []
    for seed in range(5):
        cfg = shift_a(seed=seed, shift=0.0, source_priors=(0.25,) * 4, n_per_domain=400)
        src, tgt, labels = synth_two_domain(cfg)
        config = TrainConfig(seed=seed, iterations=300, gamma=1.0, lam=0.1)
        base = evaluate(train_source_only(config, src, tgt).params, tgt.X, labels).accuracy
        ecan = evaluate(train_ecan(config, src, tgt).params, tgt.X, labels).accuracy
        gaps.append(ecan - base)
    assert abs(np.mean(gaps)) <= 0.02


# -- evaluation ---------------------------------------------------------------

def test_evaluate_perfect():
    p = ModelParams([np.eye(3) * 10], [np.zeros(3)])
    rep = evaluate(p, np.eye(3), [0, 1, 2])
    assert rep.accuracy == 1.0
    np.testing.assert_array_equal(rep.confusion, np.eye(3, dtype=int))


def test_evaluate_zero_model_predicts_class_zero():
    y = np.repeat(np.arange(7), 5)
    rep = evaluate(zero_model(2, 7), np.ones((35, 2)), y)
    assert rep.accuracy == pytest.approx(1 / 7)
    assert rep.confusion[:, 0].sum() == 35


def test_evaluate_hand_case():
    p = ModelParams([np.eye(2) * 10], [np.zeros(2)])
    X = np.array([[1, 0], [1, 0], [0, 1], [1, 0]], dtype=float)
    rep = evaluate(p, X, EvalLabels([0, 0, 1, 1], 2))
    assert rep.accuracy == 0.75
    np.testing.assert_array_equal(rep.confusion, [[2, 0], [1, 1]])
    np.testing.assert_array_equal(rep.per_class, [1.0, 0.5])
    np.testing.assert_array_equal(rep.confusion.sum(axis=1), [2, 2])


def test_evaluate_empty():
    with pytest.raises(ContractError):
        evaluate(zero_model(2, 2), np.zeros((0, 2)), [])
