import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from helpers import equivariance_instance, gradient_check_instance, random_graph

from dfcgcn.cohort import SplitMasks, split_masks
from dfcgcn.errors import DimensionMismatch, NonFinite, ValidationError
from dfcgcn.featsel import FeatureMatrix
from dfcgcn.gcn import (
    AdamState, GcnParams, TrainConfig, adam_step, backward, forward, init_params, load_params,
    loss, nll_from_logits, normalize_adjacency, predict, predict_labels, save_params, train,
    write_history,
)
from dfcgcn.pipeline import PipelineConfig, run_pipeline
from dfcgcn.popgraph import assemble_graph
from dfcgcn.synth import PlantedScalar, SynthSpec, generate_cohort


def brute_normalize(S):
    n = len(S)
    S_hat = [[float(S[i][j]) + (1.0 if i == j else 0.0) for j in range(n)] for i in range(n)]
    deg = [sum(row) for row in S_hat]
    return np.array([[S_hat[i][j] / math.sqrt(deg[i] * deg[j]) for j in range(n)]
                     for i in range(n)])


def toy_graph(seed=0, n=30, m=4, p=0.2):
    rng = np.random.default_rng(seed)
    labels = np.repeat([1, 0], n // 2)
    X = rng.standard_normal((n, m))
    X[:, 0] += 1.5 * labels
    S = random_graph(rng, n, p)
    fm = FeatureMatrix(X, [f"f{k}" for k in range(m)], [f"s{k}" for k in range(n)])
    return assemble_graph(S, fm, labels, split_masks(labels, (6, 2, 2), seed))


def test_normalize_examples():
    S = np.zeros((3, 3))
    S[0, 1] = S[1, 0] = 1
    A = normalize_adjacency(S)
    assert A[2].tolist() == [0, 0, 1]
    assert np.allclose(normalize_adjacency(np.array([[0, 1], [1, 0]])), 0.5, atol=0)
    ring = np.roll(np.eye(7), 1, axis=1) + np.roll(np.eye(7), -1, axis=1)
    assert np.allclose(normalize_adjacency(ring).sum(1), 1.0, atol=1e-15)
    with pytest.raises(ValidationError):
        normalize_adjacency(np.triu(np.ones((3, 3)), 1))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 25))
def test_normalize_matches_brute(seed, n):
    S = random_graph(np.random.default_rng(seed), n, 0.3)
    assert np.allclose(normalize_adjacency(S), brute_normalize(S.tolist()), atol=1e-12, rtol=0)


def test_forward_eval_is_deterministic():
    g = toy_graph()
    A = normalize_adjacency(g.S)
    p = init_params(4, 16, seed=1)
    a = forward(g.X.values, A, p, dropout=0.5, training=False)
    b = forward(g.X.values, A, p, dropout=0.5, training=False)
    assert np.array_equal(a.probs, b.probs)
    c = forward(g.X.values, A, p, dropout=0.5, training=True, rng=3)
    assert not np.array_equal(a.probs, c.probs)


def test_forward_zero_weights_uniform():
    g = toy_graph()
    p = GcnParams(np.zeros((4, 16)), np.zeros((16, 2)))
    probs = forward(g.X.values, normalize_adjacency(g.S), p).probs
    assert np.all(probs == 0.5)


def test_forward_single_node_hand_reduction():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 3))
    p = init_params(3, 5, seed=2)
    logits = forward(x, normalize_adjacency(np.zeros((1, 1))), p).logits
    z = x @ p.W0
    expected = np.where(z > 0, z, np.expm1(z)) @ p.W1
    assert np.allclose(logits, expected, atol=1e-14)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_forward_shape_errors():
    g = toy_graph()
    with pytest.raises(DimensionMismatch):
        forward(g.X.values, normalize_adjacency(g.S), init_params(5, 16))
    with pytest.raises(NonFinite):
        forward(g.X.values, normalize_adjacency(g.S),
                GcnParams(np.full((4, 16), np.inf), np.ones((16, 2))))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_softmax_rows(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 20))
    X = 5 * rng.standard_normal((n, 3))
    probs = forward(X, normalize_adjacency(random_graph(rng, n)), init_params(3, 8, seed=seed)).probs
    assert np.allclose(probs.sum(1), 1.0, atol=1e-9)
    assert np.all((probs > 0) & (probs < 1))


def test_loss_examples():
    p0 = GcnParams(np.zeros((2, 2)), np.zeros((2, 2)))
    uniform = np.full((4, 2), 0.5)
    assert loss(uniform, [0, 1, 0, 1], np.ones(4, bool), p0) == pytest.approx(math.log(2), abs=1e-12)
    p = GcnParams(np.ones((2, 2)), np.ones((2, 2)))
    onehot = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert loss(onehot, [0, 1], np.ones(2, bool), p, 0.1) == pytest.approx(0.5 * 0.1 * 8)
    assert loss(np.array([[0.9, 0.1]]), [0], [True], p0) == pytest.approx(0.105361, abs=1e-6)
    assert loss(np.array([[0.9, 0.1]]), [0], [True], p, 0.01) == pytest.approx(
        -math.log(0.9) + 0.04, abs=1e-12)
    with pytest.raises(ValidationError):
        loss(uniform, [0, 1, 0, 1], np.zeros(4, bool), p0)


def test_nll_from_logits_saturated():
    z = np.array([[40.0, 0.0], [0.0, 1.0]])
    nll = nll_from_logits(z, np.array([0, 1]))
    assert nll[0] == pytest.approx(math.exp(-40), rel=1e-12)
    assert nll[1] == pytest.approx(math.log1p(math.exp(-1)), rel=1e-14)


def test_gradient_check():
    errs = [gradient_check_instance(seed) for seed in range(20)]
    assert max(errs) < 1e-5


def test_zero_decay_gradient_ignores_weight_norm_term():
    g = toy_graph()
    A = normalize_adjacency(g.S)
    p = init_params(4, 8, seed=0)
    cache = forward(g.X.values, A, p)
    d0 = backward(cache, g.labels, g.masks.train, p, 0.0)
    d1 = backward(cache, g.labels, g.masks.train, p, 0.3)
    assert np.allclose(d1[0] - d0[0], 0.3 * p.W0, atol=1e-15)
    assert np.allclose(d1[1] - d0[1], 0.3 * p.W1, atol=1e-15)


def test_gradient_block_structure():
    # two disconnected components; changing labels in the masked-out one changes nothing
    rng = np.random.default_rng(0)
    S = np.zeros((8, 8), dtype=int)
    S[:4, :4] = random_graph(rng, 4, 0.8)
    S[4:, 4:] = random_graph(rng, 4, 0.8)
    X = rng.standard_normal((8, 3))
    p = init_params(3, 6, seed=1)
    mask = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=bool)
    cache = forward(X, normalize_adjacency(S), p)
    y1 = np.array([0, 1, 0, 1, 0, 0, 0, 0])
    y2 = np.array([0, 1, 0, 1, 1, 1, 1, 1])
    g1 = backward(cache, y1, mask, p)
    g2 = backward(cache, y2, mask, p)
    assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])
    # and the unlabeled component's features do not reach the gradient
    X2 = X.copy()
    X2[4:] = rng.standard_normal((4, 3))
    g3 = backward(forward(X2, normalize_adjacency(S), p), y1, mask, p)
    assert np.allclose(g3[0], g1[0], atol=1e-15) and np.allclose(g3[1], g1[1], atol=1e-15)


def test_adam_first_step_sign():
    cfg = TrainConfig(lr=0.06)
    rng = np.random.default_rng(0)
    p = GcnParams(rng.standard_normal((3, 4)), rng.standard_normal((4, 2)))
    g = (rng.standard_normal((3, 4)), rng.standard_normal((4, 2)))
    new = adam_step(p, g, AdamState(), cfg)
    for w0, w1, gr in ((p.W0, new.W0, g[0]), (p.W1, new.W1, g[1])):
        step = w1 - w0
        assert np.all(np.abs(step) <= cfg.lr * (1 + 1e-12))
        assert np.allclose(step, -cfg.lr * np.sign(gr), atol=1e-6)


def test_adam_zero_gradient_keeps_params():
    p = init_params(3, 4)
    state = AdamState()
    zeros = (np.zeros((3, 4)), np.zeros((4, 2)))
    q = p
    for _ in range(20):
        q = adam_step(q, zeros, state, TrainConfig())
    assert np.array_equal(q.W0, p.W0) and np.array_equal(q.W1, p.W1)


def test_train_deterministic_and_history_length():
    g = toy_graph()
    cfg = TrainConfig(seed=3)
    p1, h1 = train(g, cfg)
    p2, h2 = train(g, cfg)
    assert len(h1) == 150
    assert [r["epoch"] for r in h1] == list(range(1, 151))
    assert np.array_equal(p1.W0, p2.W0) and h1 == h2


def test_train_lr_zero_is_flat():
    g = toy_graph()
    cfg = TrainConfig(lr=0.0, dropout=0.0, epochs=20)
    p, hist = train(g, cfg)
    p0 = init_params(4, 16, seed=0)
    assert np.array_equal(p.W0, p0.W0) and np.array_equal(p.W1, p0.W1)
    assert len({r["train_loss"] for r in hist}) == 1


def test_train_small_lr_decreases_loss():
    g = toy_graph()
    _, hist = train(g, TrainConfig(lr=1e-3, dropout=0.0, epochs=100))
    losses = [r["train_loss"] for r in hist]
    assert losses[-1] < losses[0]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_best_validation_selection():
    g = toy_graph(seed=2)
    best, hist = train(g, TrainConfig(seed=1))
    last, _ = train(g, TrainConfig(seed=1, selection="last"))
    top = max(r["val_acc"] for r in hist)
    epoch = next(r["epoch"] for r in hist if r["val_acc"] == top)
    refit, _ = train(g, TrainConfig(seed=1, epochs=epoch, selection="last"))
    assert np.array_equal(best.W0, refit.W0)
    if epoch < 150:
        assert not np.array_equal(best.W0, last.W0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_history():
    with pytest.raises(NonFinite) as err:
        train(toy_graph(), TrainConfig(lr=1e308, epochs=10))
    assert isinstance(err.value.history, list)


def test_predict_tie_break_and_determinism():
    assert predict_labels(np.array([[0.7, 0.3], [0.5, 0.5], [0.2, 0.8]])).tolist() == [0, 0, 1]
    g = toy_graph()
    p = init_params(4, 16)
    a = predict(g, p)
    b = predict(g, p)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_permutation_equivariance():
    assert all(equivariance_instance(seed) for seed in range(50))


def test_params_and_history_io(tmp_path):
    g = toy_graph()
    p, hist = train(g, TrainConfig(epochs=5))
    save_params(p, tmp_path / "p.json", TrainConfig(epochs=5))
    q = load_params(tmp_path / "p.json")
    assert np.array_equal(p.W0, q.W0) and np.array_equal(p.W1, q.W1)
    write_history(hist, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
    assert len(lines) == 6
    with pytest.raises(ValidationError):
        load_params(tmp_path / "missing.json")


def test_config_validation():
    for bad in (dict(lr=-1.0), dict(dropout=1.0), dict(epochs=0), dict(selection="worst")):
        with pytest.raises(ValidationError):
            TrainConfig(**bad).validate()


def test_no_validation_mask_uses_last_epoch():
    g = toy_graph()
    n = g.n
    masks = SplitMasks(np.arange(n) < 20, np.zeros(n, bool), np.arange(n) >= 20)
    g = dataclasses.replace(g, masks=masks)
    p, hist = train(g, TrainConfig(epochs=10))
    q, _ = train(g, TrainConfig(epochs=10, selection="last"))
    assert np.array_equal(p.W0, q.W0)
    assert all(math.isnan(r["val_acc"]) for r in hist)


def test_separable_cohort_fits_training_set():
    # Monte-Carlo oracle at desk scale, frozen: 10/10 seeds reached >= 0.95 when first run.
    spec = SynthSpec(n_per_group=30, n_rois=20, T=200, rho_base=0.0,
                     planted_edges=[(2 * k, 2 * k + 1, 0.7) for k in range(6)],
                     planted_scalars=[PlantedScalar("alff_1", 3.0), PlantedScalar("reho_1", 3.0)],
                     seed=0)
    cohort, _ = generate_cohort(spec)
    cfg = PipelineConfig.from_dict({"seeds": list(range(10)), "train": {"selection": "last"}})
    run = run_pipeline(cfg, cohort=cohort)
    fits = 0
    for r in run.results:
        pred, _ = predict(r.graph, r.params)
        train_mask = r.graph.masks.train
        fits += np.mean(pred[train_mask] == r.graph.labels[train_mask]) >= 0.95
    assert fits >= 9
