import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
import pytest
import torch

from citeintent.classify import classify, classify_batch
from citeintent.errors import ConfigError, ModelError
from citeintent.mlm import BagOfWordsMLM, KeywordMockMLM, MaskedLanguageModel, load_mlm, predict_mask, resolve_word
from citeintent.prompt import PromptTemplate, default_template, render, truncate_front
from citeintent.verbalizer import load_verbalizer

EXAMPLE = "This task has been shown to have the same features as in [10]"


def test_default_template():
    t = default_template()
    assert t.pattern == "[X] It has a citation of type [MASK]."
    assert t.kind == "prefix"
    assert t.pattern.count("[X]") == 1 and t.pattern.count("[MASK]") == 1


def test_render_example():
    r = render(default_template(), EXAMPLE)
    assert r.text == ("This task has been shown to have the same features as in [10] "
                      "It has a citation of type [MASK].")
    assert r.instance == EXAMPLE


@pytest.mark.parametrize("pattern", ["", "no slots", "[X] only input", "[MASK] only", "[X] [X] [MASK]",
                                     "[X] [MASK] [MASK]"])
def test_bad_patterns(pattern):
    with pytest.raises(ConfigError):
        PromptTemplate.from_pattern(pattern)


def test_cloze_template():
    t = PromptTemplate.from_pattern("[X] is a [MASK] citation.")
    assert t.kind == "cloze"
    assert render(t, "Prior work [3]").text == "Prior work [3] is a [MASK] citation."
    assert PromptTemplate.from_pattern("[X] Type: [MASK] !").kind == "prefix"
    with pytest.raises(ConfigError):
        PromptTemplate("[MASK] then [X]", "prefix")
    assert PromptTemplate.from_pattern("[MASK] then [X]").kind == "cloze"


def test_render_empty_instance():
    with pytest.raises(ConfigError):
        render(default_template(), "   ")


def test_truncate_front():
    assert truncate_front(["h"], list("abcdef"), ["t", "m"], 6) == list("def")
    assert truncate_front(["h"], list("ab"), ["t"], 6) == list("ab")
    assert truncate_front(["h"], list("ab"), ["t"], 2) == []
    with pytest.raises(ConfigError):
        truncate_front(["h", "h"], [], ["t"], 2)


@pytest.fixture
def toy_verb(data_dir):
    return load_verbalizer(data_dir / "toy_verbalizer.json")


def test_mock_distribution_contract(toy_verb):
    mlm = KeywordMockMLM(toy_verb.all_words())
    r = render(default_template(), "We use the method and technique of [4].")
    a, b = predict_mask(mlm, r), predict_mask(mlm, r)
    assert abs(a.probs.sum() - 1) <= 1e-6 and a.is_simplex()
    np.testing.assert_array_equal(a.probs, b.probs)
    assert a.prob("method") > a.prob("result")
    assert a.prob("not-a-word") == 0.0


def test_toy_backend_truncation_keeps_tail(toy_verb):
    mlm = KeywordMockMLM(toy_verb.all_words(), max_length=16)
    long_text = " ".join(["result"] * 40 + ["method"] * 5)
    tokens = mlm.prompt_tokens(render(default_template(), long_text))
    assert len(tokens) + 3 == 16
    assert tokens[-6:] == ["it", "has", "a", "citation", "of", "type"]
    assert tokens[:7] == ["result"] * 2 + ["method"] * 5
    with pytest.raises(ConfigError):
        KeywordMockMLM(toy_verb.all_words(), max_length=8)


def test_resolve_word_toy(toy_verb):
    mlm = KeywordMockMLM(toy_verb.all_words())
    assert resolve_word(mlm, "method").token_id == mlm.vocab.tokens.index("method")
    assert resolve_word(mlm, "zzz").token_id is None


def test_classify_with_mock(toy_verb):
    mlm = KeywordMockMLM(toy_verb.all_words())
    label, scores = classify("The result and finding of [2] agree with ours.", default_template(), toy_verb, mlm)
    assert label == "result"
    assert set(scores) == {"background", "method", "result"}
    labels, matrix = classify_batch(["We follow the procedure of [1].", "Prior work [5] gives context."],
                                    default_template(), toy_verb, mlm)
    assert labels == ["method", "background"]
    assert matrix.shape == (2, 3)
    assert classify_batch([], default_template(), toy_verb, mlm)[0] == []


def test_model_failure_wrapped(toy_verb):
    class Broken(KeywordMockMLM):
        def mask_logits(self, prompts, max_length=None):
            raise RuntimeError("boom")

    with pytest.raises(ModelError, match="boom"):
        predict_mask(Broken(toy_verb.all_words()), render(default_template(), "x y z"))


def test_bow_save_load_round_trip(tmp_path, toy_verb):
    mlm = BagOfWordsMLM(toy_verb.all_words(), seed=3)
    mlm.save(tmp_path / "m")
    again = load_mlm(str(tmp_path / "m"))
    assert again.state_hash() == mlm.state_hash()
    r = render(default_template(), "We adopt the method of [1].")
    np.testing.assert_array_equal(predict_mask(mlm, r).probs, predict_mask(again, r).probs)
    mock = KeywordMockMLM(toy_verb.all_words())
    mock.save(tmp_path / "k")
    assert load_mlm(str(tmp_path / "k")).state_hash() == mock.state_hash()
    with pytest.raises(ConfigError):
        load_mlm(str(tmp_path / "nothing"))
    with pytest.raises(ConfigError):
        load_mlm("mock")


WORDS = ["it", "has", "a", "citation", "of", "type", "we", "use", "the", "method", "result", "background",
         "prior", "work", ".", "[", "]", "1", "2", "10", "##s", "run", "##ning"]


@pytest.fixture(scope="module")
def tiny_bert(tmp_path_factory):
    transformers = pytest.importorskip("transformers")
    out = tmp_path_factory.mktemp("tiny_bert")
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + WORDS
    (out / "vocab.txt").write_text("\n".join(vocab) + "\n")
    tok = transformers.BertTokenizer(str(out / "vocab.txt"))
    torch.manual_seed(0)
    cfg = transformers.BertConfig(vocab_size=len(vocab), hidden_size=16, num_hidden_layers=1, num_attention_heads=2,
                                  intermediate_size=32, max_position_embeddings=512)
    transformers.BertForMaskedLM(cfg).save_pretrained(out)
    tok.save_pretrained(out)
    return out


def test_hf_backend_contract(tiny_bert, toy_verb):
    mlm = load_mlm(str(tiny_bert))
    assert mlm.max_length == 512
    r = render(default_template(), "we use the method of [1].")
    a, b = predict_mask(mlm, r), predict_mask(mlm, r)
    assert abs(a.probs.sum() - 1) <= 1e-6
    np.testing.assert_array_equal(a.probs, b.probs)
    assert resolve_word(mlm, "method").multi_piece is False
    assert resolve_word(mlm, "runs").multi_piece is True
    assert resolve_word(mlm, "zebra").token_id is None
    label, _ = classify(r.instance, default_template(), toy_verb, mlm)
    assert label in toy_verb.schema.labels


def test_hf_truncation_keeps_mask(tiny_bert):
    mlm = load_mlm(str(tiny_bert))
    long_text = " ".join(["prior"] * 600 + ["work"] * 3)
    ids, pos = mlm.encode(render(default_template(), long_text))
    toks = mlm.tokenizer.convert_ids_to_tokens(ids)
    assert len(ids) == 512
    assert toks[pos] == "[MASK]"
    assert toks[-11:] == ["work", "work", "it", "has", "a", "citation", "of", "type", "[MASK]", ".", "[SEP]"]
    assert toks[:2] == ["[CLS]", "prior"]
    dist = predict_mask(mlm, render(default_template(), long_text))
    assert dist.is_simplex()


def test_base_class_is_abstract():
    with pytest.raises(NotImplementedError):
        MaskedLanguageModel().mask_logits([])


_WORDS = ["background", "method", "result", "prior", "technique", "finding", "we", "the", "[1]", "é", "42"]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(_WORDS), min_size=1, max_size=80), st.integers(0, 5))
def test_mask_distribution_is_simplex(words, seed):
    vocab = ["background", "method", "result", "prior", "technique", "finding"]
    r = render(default_template(), " ".join(words))
    for mlm in (KeywordMockMLM(vocab, max_length=32), BagOfWordsMLM(vocab, seed=seed, max_length=32)):
        dist = predict_mask(mlm, r)
        assert dist.is_simplex() and np.all(dist.probs >= 0)
