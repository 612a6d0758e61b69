import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from citeintent.dataset_io import LabelSchema, get_schema, load_dataset
from citeintent.errors import ConfigError, DataError
from citeintent.mlm import KeywordMockMLM, MaskDistribution, MaskedLanguageModel, TokenVocabulary
from citeintent.prompt import default_template
from citeintent.refine import (
    PriorEstimate,
    RefinementConfig,
    attach_learnable_weights,
    calibrate,
    calibrate_rows,
    estimate_priors,
    frequency_refine,
    refine_pipeline,
    relevance_refine,
    relevance_refine_from_probabilities,
    relevance_scores,
)
from citeintent.verbalizer import LabelWordEntry, Verbalizer, load_verbalizer, predict

TWO = LabelSchema("toy2", ("alpha", "beta"))
VOCAB = TokenVocabulary(["v", "w", "x", "y", "z"])


class TableMLM(MaskedLanguageModel):
    """Returns a fixed distribution per instance text."""

    identity = "table"

    def __init__(self, table):
        self.table = table
        self.vocab = VOCAB

    def mask_logits(self, prompts, max_length=None):
        return torch.log(torch.tensor([self.table[p.instance] for p in prompts], dtype=torch.float64))


def verb(alpha, beta, anchors=("v", "x")):
    def entries(words, anchor):
        return [LabelWordEntry(w, 1.0, anchor, None if w == anchor else "introduction") for w in words]
    return Verbalizer(TWO, {"alpha": entries(alpha, anchors[0]), "beta": entries(beta, anchors[1])})


def test_config_validation():
    RefinementConfig()
    assert RefinementConfig().to_dict() == {"frequency_quantile": 0.25, "relevance_threshold": 1.0,
                                            "min_words_per_label": 3, "support_size": 200}
    for bad in ({"frequency_quantile": 1.0}, {"frequency_quantile": -0.1}, {"relevance_threshold": -1},
                {"min_words_per_label": 0}, {"support_size": 0}):
        with pytest.raises(ConfigError):
            RefinementConfig(**bad)


def test_estimate_priors_means():
    mlm = TableMLM({"a": [0.1, 0.2, 0.3, 0.2, 0.2], "b": [0.3, 0.4, 0.1, 0.1, 0.1]})
    one = estimate_priors(mlm, default_template(), ["a"], ["v", "x", "oov"])
    assert one.priors == pytest.approx({"v": 0.1, "x": 0.3})
    two = estimate_priors(mlm, default_template(), ["a", "b"], ["v", "w", "x"])
    assert two.priors == pytest.approx({"v": 0.2, "w": 0.3, "x": 0.2})
    assert two.support_size == 2
    assert all(0 <= p <= 1 for p in two.priors.values())
    with pytest.raises(DataError):
        estimate_priors(mlm, default_template(), [], ["v"])


def test_frequency_quantile_example():
    v = verb(["v", "w", "y", "z"], ["x"])
    priors = PriorEstimate({"v": 0.4, "w": 0.3, "y": 0.01, "z": 0.005, "x": 0.1}, 4)
    out = frequency_refine(v, priors, RefinementConfig(frequency_quantile=0.5, min_words_per_label=1))
    assert out.words("alpha") == ["v", "w"]
    assert out.words("beta") == ["x"]
    np.testing.assert_allclose(out.weights("alpha"), [0.5, 0.5])
    assert out.manifest["refinement_steps"][-1]["step"] == "frequency"


def test_frequency_anchor_exempt():
    v = verb(["v", "w", "y", "z"], ["x"], anchors=("z", "x"))
    priors = PriorEstimate({"v": 0.4, "w": 0.3, "y": 0.01, "z": 0.005, "x": 0.1}, 4)
    out = frequency_refine(v, priors, RefinementConfig(frequency_quantile=0.5, min_words_per_label=1))
    assert out.words("alpha") == ["v", "w", "z"]


def test_frequency_quantile_zero_noop():
    v = verb(["v", "w", "y", "z"], ["x"])
    priors = PriorEstimate({"v": 0.4, "w": 0.3, "y": 0.01, "z": 0.005, "x": 0.1}, 4)
    out = frequency_refine(v, priors, RefinementConfig(frequency_quantile=0.0, min_words_per_label=1))
    assert out.entries == v.entries


def test_frequency_floor():
    v = verb(["w", "y", "z"], ["x"], anchors=("v", "x"))
    priors = PriorEstimate({"w": 0.3, "y": 0.01, "z": 0.005}, 4)
    out = frequency_refine(v, priors, RefinementConfig(frequency_quantile=0.9, min_words_per_label=3))
    assert out.words("alpha") == ["w", "y", "z"]
    v4 = verb(["v", "w", "y", "z"], ["x"])
    priors4 = PriorEstimate({"v": 0.4, "w": 0.3, "y": 0.01, "z": 0.005}, 4)
    out4 = frequency_refine(v4, priors4, RefinementConfig(frequency_quantile=0.99, min_words_per_label=3))
    # floor restores the best-prior dropped word
    assert out4.words("alpha") == ["v", "w", "y"]


# rows: r1 -> alpha, r2 -> beta, r3 -> alpha, r4 -> beta under uniform weights
SUPPORT = {
    "r1": [0.5, 0.2, 0.2, 0.1, 0.0],
    "r2": [0.0, 0.1, 0.4, 0.3, 0.2],
    "r3": [0.1, 0.3, 0.1, 0.2, 0.3],
    "r4": [0.2, 0.2, 0.3, 0.2, 0.1],
}


def test_relevance_hand_example():
    v = verb(["v", "w", "z"], ["x", "y"])
    probs = np.array(list(SUPPORT.values()))
    rel = relevance_scores(v, probs, VOCAB)
    # alpha rows r1, r3; beta rows r2, r4; global means v .2, w .2, x .25, y .2, z .15
    np.testing.assert_allclose(rel["alpha"], [0.3 / 0.2, 0.25 / 0.2, 0.15 / 0.15], rtol=1e-12)
    np.testing.assert_allclose(rel["beta"], [0.35 / 0.25, 0.25 / 0.2], rtol=1e-12)
    mlm = TableMLM(SUPPORT)
    out = relevance_refine(v, mlm, default_template(), list(SUPPORT),
                           RefinementConfig(relevance_threshold=1.2, min_words_per_label=1))
    assert out.words("alpha") == ["v", "w"]
    assert out.words("beta") == ["x", "y"]
    same = relevance_refine(v, mlm, default_template(), list(SUPPORT),
                            RefinementConfig(relevance_threshold=0.0, min_words_per_label=1))
    assert same.entries == v.entries


def test_relevance_flat_word_is_one():
    v = verb(["v", "w"], ["x", "z"])
    probs = np.array([[0.5, 0.1, 0.2, 0.0, 0.2], [0.1, 0.1, 0.6, 0.0, 0.2]])
    assert relevance_scores(v, probs, VOCAB)["beta"][1] == pytest.approx(1.0)


def test_relevance_unpredicted_label_skipped(caplog):
    v = verb(["v", "w"], ["x"])
    probs = np.array([[0.5, 0.3, 0.1, 0.05, 0.05]])
    out = relevance_refine_from_probabilities(v, probs, VOCAB, RefinementConfig(min_words_per_label=1))
    assert out.words("beta") == ["x"]
    assert "no support prompt" in caplog.text


def test_calibrate_example():
    vocab = TokenVocabulary(["a", "b", "c"])
    dist = MaskDistribution(np.array([0.2, 0.2, 0.6]), vocab)
    out = calibrate(dist, PriorEstimate({"a": 0.1, "b": 0.4}, 3))
    np.testing.assert_allclose(out.probs, [0.8, 0.2, 0.0], atol=1e-12)
    assert abs(out.probs.sum() - 1.0) <= 1e-9
    with pytest.raises(DataError):
        calibrate(dist, PriorEstimate({"zzz": 0.5}, 1))


def test_calibrate_zero_prior_floored():
    vocab = TokenVocabulary(["a", "b"])
    out = calibrate(MaskDistribution(np.array([0.5, 0.5]), vocab), PriorEstimate({"a": 0.0, "b": 0.5}, 1))
    assert np.all(np.isfinite(out.probs)) and out.probs[0] > 0.999


simplex5 = st.lists(st.floats(0.001, 1.0), min_size=5, max_size=5).map(lambda xs: np.asarray(xs) / sum(xs))


@settings(max_examples=100, deadline=None)
@given(simplex5, st.floats(1e-4, 1.0))
def test_uniform_prior_calibration_preserves_prediction(d, c):
    v = verb(["v", "w"], ["x", "y", "z"])
    dist = MaskDistribution(d, VOCAB)
    uniform = PriorEstimate({w: c for w in v.all_words()}, 10)
    cal = calibrate(dist, uniform)
    np.testing.assert_allclose(cal.probs, d / d.sum(), rtol=1e-12)
    assert predict(cal, v) == predict(dist, v)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(0.0, 1.0), min_size=5, max_size=5),
    st.floats(0.0, 0.99),
    st.integers(1, 4),
    st.lists(simplex5, min_size=1, max_size=6),
    st.floats(0.0, 3.0),
)
def test_refinements_destructive_with_guards(prior_values, q, floor, rows, thr):
    v = verb(["v", "w", "z"], ["x", "y"])
    cfg = RefinementConfig(frequency_quantile=q, min_words_per_label=floor, relevance_threshold=thr)
    priors = PriorEstimate(dict(zip(VOCAB.tokens, prior_values)), 3)
    for out in (frequency_refine(v, priors, cfg),
                relevance_refine_from_probabilities(v, np.array(rows), VOCAB, cfg)):
        for lab in TWO.labels:
            before, after = v.words(lab), out.words(lab)
            assert set(after) <= set(before)
            assert set(v.anchors(lab)) <= set(after)
            assert len(after) >= min(floor, len(before))
            assert out.weights(lab).sum() == pytest.approx(1.0)


def test_attach_learnable_weights():
    v = Verbalizer(TWO, {"alpha": [LabelWordEntry("v", 0.9, "v"), LabelWordEntry("w", 0.1, "v", "results")],
                         "beta": [LabelWordEntry("x", 1.0, "x")]})
    out = attach_learnable_weights(v)
    np.testing.assert_allclose(out.weights("alpha"), [0.5, 0.5])
    assert out.manifest["learnable_weights"] is True
    assert out.words("alpha") == v.words("alpha")


def test_pipeline_idempotent(data_dir):
    v = load_verbalizer(data_dir / "toy_verbalizer.json")
    mlm = KeywordMockMLM(v.all_words())
    support = load_dataset(data_dir / "fixture_train.jsonl", get_schema("scicite"), "train").texts
    cfg = RefinementConfig(frequency_quantile=0.3, relevance_threshold=1.0, min_words_per_label=2)
    once, priors = refine_pipeline(v, mlm, default_template(), support, cfg)
    twice, priors2 = refine_pipeline(once, mlm, default_template(), support, cfg)
    assert twice.digest() == once.digest()
    assert priors2 == priors
    assert set(priors.priors) == set(once.all_words())
    assert [s["step"] for s in once.manifest["refinement_steps"]] == ["frequency", "relevance"]
    assert sum(once.set_sizes().values()) < sum(v.set_sizes().values())
    # a different support set is a new step
    other, _ = refine_pipeline(once, mlm, default_template(), support[:10], cfg)
    assert len(other.manifest["refinement_steps"]) == 4
