import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tagkit.alignment import train
from tagkit.config import TrainConfig, ViewConfig
from tagkit.datasets import load_toy
from tagkit.embeddings import HashProvider
from tagkit.graph import TextAttributedGraph
from tagkit.inference import (
    FewShotAdapter,
    IncompatibleCheckpointError,
    LabelEmbeddings,
    _ce_and_grad,
    evaluate,
    few_shot_fit,
    few_shot_split,
    label_embeddings,
    node_embedding,
    node_embeddings,
    zero_shot,
)
from tagkit.inference import Prediction


def labels(*rows):
    return LabelEmbeddings(tuple(f"l{i}" for i in range(len(rows))), np.array(rows, dtype=float))


@pytest.fixture(scope="module")
def toy():
    return load_toy()


@pytest.fixture(scope="module")
def trained(toy):
    provider = HashProvider(128)
    ckpt = train(toy, ViewConfig(max_order=2), TrainConfig(steps=500), provider)
    return ckpt, provider


# -- zero-shot -------------------------------------------------------------------

def test_softmax_of_one_zero():
    (pred,) = zero_shot(np.array([[0.0, 1.0]]), labels([1.0, 0.0], [0.0, 1.0]))
    e = math.e
    assert pred.probabilities == pytest.approx((1 / (e + 1), e / (e + 1)), abs=1e-12)
    assert pred.probabilities[1] == pytest.approx(0.7311, abs=1e-4)
    assert pred.predicted == 1


def test_uniform_tie_goes_to_label_zero():
    (pred,) = zero_shot(np.array([[1.0, 1.0]]), labels([1.0, 0.0], [0.0, 1.0]))
    assert pred.probabilities == (0.5, 0.5) and pred.predicted == 0


def test_empty_labels_and_dimension():
    with pytest.raises(ValueError):
        label_embeddings([], HashProvider(4))
    with pytest.raises(ValueError):
        zero_shot(np.ones((1, 3)), labels([1.0, 0.0]))


@settings(max_examples=200)
@given(arrays(np.float64, (3, 5), elements=st.floats(-5, 5)), arrays(np.float64, (4, 5), elements=st.floats(-5, 5)),
       st.floats(1e-2, 1e2), st.floats(1e-2, 1e2))
def test_zero_shot_properties(z, e, alpha, beta):
    lab = LabelEmbeddings(("a", "b", "c", "d"), e)
    preds = zero_shot(z, lab)
    for p in preds:
        assert abs(sum(p.probabilities) - 1.0) < 1e-9
        assert all(x > 0 for x in p.probabilities)
        assert p.predicted == int(np.argmax(p.probabilities))
    scaled = zero_shot(alpha * z, LabelEmbeddings(lab.labels, beta * e))
    for a, b in zip(preds, scaled):
        assert np.allclose(a.probabilities, b.probabilities, atol=1e-12)
        assert a.predicted == b.predicted or np.isclose(max(a.probabilities), sorted(a.probabilities)[-2])


def test_prediction_record():
    rec = Prediction(3, (0.25, 0.75), 1).record(["x", "y"])
    assert rec["node"] == 3 and rec["label"] == "y" and rec["probabilities"] == [0.25, 0.75]


# -- embeddings ------------------------------------------------------------------

def test_tofg0_is_provider_text(toy, trained):
    ckpt, provider = trained
    emb = node_embeddings(ckpt, toy, provider, "tofg-k", order=0, nodes=[0, 5])
    assert np.array_equal(emb, provider.embed([toy.text(0), toy.text(5)]))


def test_untrained_isolated_taga():
    g = TextAttributedGraph.from_edges(["quiet node", "far away"], [])
    provider = HashProvider(8)
    ckpt = train(g, ViewConfig(max_order=2), TrainConfig(steps=0, dtype="float64"), provider)
    x = provider.embed(["quiet node"])[0]
    for w, b in zip(ckpt.params.weights, ckpt.params.biases):
        x = np.tanh(w @ x + b)
    assert np.allclose(node_embedding(ckpt, g, 0, "taga", provider), x)


def test_incompatible_checkpoints(toy, trained):
    ckpt, _ = trained
    with pytest.raises(IncompatibleCheckpointError):
        node_embeddings(ckpt, toy, HashProvider(64), "taga")
    with pytest.raises(IncompatibleCheckpointError):
        node_embeddings(ckpt, toy, HashProvider(128), "glo-goft")
    with pytest.raises(KeyError):
        node_embedding(ckpt, toy, 999, "taga", HashProvider(128))
    with pytest.raises(ValueError):
        node_embeddings(ckpt, toy, HashProvider(128), "bogus")


def own_vs_other_fraction(toy, ckpt, provider):
    """Share of nodes whose taga view is closer to its own tofg_K than to other-class tofg_K on average."""
    y = np.array(toy.labels)
    t = node_embeddings(ckpt, toy, provider, "taga")
    f = node_embeddings(ckpt, toy, provider, "tofg-k", order=ckpt.view.max_order)
    t = t / np.linalg.norm(t, axis=1, keepdims=True)
    f = f / np.linalg.norm(f, axis=1, keepdims=True)
    C = t @ f.T
    hits = [C[v, v] > C[v, y != y[v]].mean() for v in range(toy.num_nodes)]
    return float(np.mean(hits))


@pytest.mark.xfail(
    strict=True,
    reason="with the default batch-scaled negatives the loss is minimized by pointing every view away "
    "from the shared text direction, so own-document alignment stays near chance",
)
def test_taga_closer_to_own_tofg(toy, trained):
    ckpt, provider = trained
    assert own_vs_other_fraction(toy, ckpt, provider) >= 0.8


def test_taga_closer_to_own_tofg_with_pair_averaged_negatives(toy):
    provider = HashProvider(128)
    ckpt = train(toy, ViewConfig(max_order=2), TrainConfig(steps=500, negative_normalization="pairs"), provider)
    assert own_vs_other_fraction(toy, ckpt, provider) >= 0.8


# -- few-shot --------------------------------------------------------------------

def test_adapter_identity_at_init():
    a = FewShotAdapter.identity(6, seed=1)
    z = np.random.default_rng(0).normal(size=(4, 6))
    assert np.array_equal(a(z), z)


def test_zero_epochs_reproduces_zero_shot(toy, trained):
    ckpt, provider = trained
    emb = node_embeddings(ckpt, toy, provider, "taga")
    lab = label_embeddings(list(toy.label_texts), provider)
    split = few_shot_split(toy.labels, 5, seed=0)
    adapter = few_shot_fit(emb, {v: toy.labels[v] for v in split.support}, lab, epochs=0)
    assert adapter.best_epoch == 0
    for a, b in zip(adapter.predict(emb, lab), zero_shot(emb, lab)):
        assert a.probabilities == b.probabilities and a.predicted == b.predicted


def test_few_shot_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    a = FewShotAdapter.identity(4, seed=0)
    a.w2[:] = rng.normal(scale=0.3, size=(4, 4))
    a.b1[:] = rng.normal(size=4)
    z, y, e = rng.normal(size=(5, 4)), np.array([0, 1, 2, 0, 1]), rng.normal(size=(3, 4))
    _, grads = _ce_and_grad(a, z, y, e)
    h = 1e-6
    for p, g in zip(a.params(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = _ce_and_grad(a, z, y, e)[0]
            flat[i] = old - h
            down = _ce_and_grad(a, z, y, e)[0]
            flat[i] = old
            assert abs((up - down) / (2 * h) - gflat[i]) < 1e-6


def test_few_shot_final_loss_not_above_initial(toy, trained):
    ckpt, provider = trained
    emb = node_embeddings(ckpt, toy, provider, "taga")
    lab = label_embeddings(list(toy.label_texts), provider)
    for seed in range(3):
        split = few_shot_split(toy.labels, 3, seed)
        support = {v: toy.labels[v] for v in split.support}
        adapter = few_shot_fit(emb, support, lab, epochs=100, seed=seed)
        idx = sorted(support)
        final = _ce_and_grad(adapter, emb[idx], np.array([support[i] for i in idx]), lab.vectors)[0]
        assert final <= adapter.history[0]
        assert final == pytest.approx(min(adapter.history))


def test_five_shot_support_accuracy(toy, trained):
    ckpt, provider = trained
    emb = node_embeddings(ckpt, toy, provider, "taga")
    lab = label_embeddings(list(toy.label_texts), provider)
    split = few_shot_split(toy.labels, 5, seed=0)
    adapter = few_shot_fit(emb, {v: toy.labels[v] for v in split.support}, lab)
    preds = adapter.predict(emb[list(split.support)], lab, split.support)
    assert evaluate(preds, toy.labels).accuracy == 1.0


def test_few_shot_is_deterministic_and_validates(toy, trained):
    ckpt, provider = trained
    emb = node_embeddings(ckpt, toy, provider, "taga")
    lab = label_embeddings(list(toy.label_texts), provider)
    split = few_shot_split(toy.labels, 5, seed=1)
    support = {v: toy.labels[v] for v in split.support}
    val = {v: toy.labels[v] for v in split.validation}
    a = few_shot_fit(emb, support, lab, seed=4, validation=val)
    b = few_shot_fit(emb, support, lab, seed=4, validation=val)
    assert all(np.array_equal(x, y) for x, y in zip(a.params(), b.params()))
    with pytest.raises(ValueError):
        few_shot_fit(emb, {}, lab)


# -- splits and scoring ----------------------------------------------------------

def test_split_arithmetic():
    y = [i % 2 for i in range(110)]
    s = few_shot_split(y, 5, seed=3)
    assert s.sizes() == {"support": 10, "validation": 10, "test": 90}
    assert len(set(s.support) | set(s.validation) | set(s.test)) == 110
    assert sorted(y[i] for i in s.support) == [0] * 5 + [1] * 5
    assert s == few_shot_split(y, 5, seed=3)
    assert few_shot_split(y, 0, seed=3).test == tuple(range(110))


def test_split_skips_unlabelled():
    s = few_shot_split([0, None, 1, 1, 0, None], 1, seed=0)
    assert 1 not in s.support + s.validation + s.test and 5 not in s.test


def test_evaluate_examples():
    truth = [0, 1, 0, 1]
    right = [Prediction(i, (0.5, 0.5), t) for i, t in enumerate(truth)]
    assert evaluate(right, truth).accuracy == 1.0
    const = [Prediction(i, (0.5, 0.5), 0) for i in range(4)]
    assert evaluate(const, truth).accuracy == 0.5
    assert evaluate(list(reversed(const)), truth, [3, 1, 0]).record() == evaluate(const, truth, [0, 1, 3]).record()
    with pytest.raises(ValueError):
        evaluate(const, [0, None, 0, 1], [1])
    with pytest.raises(KeyError):
        evaluate(const, truth, [7])
