import numpy as np
import pytest

from forumleak.features import (
    CONTEXT_FEATURES, Vocabulary, build_vocabulary, detect_trade_tags, feature_matrix, feature_set_columns,
    featurize, read_sparse, reply_count, vocabulary_from_texts, write_sparse,
)
from forumleak.graphs import build_public_graph
from forumleak.model import HOUR, PostRecord
from forumleak.text import analyze, get_stemmer, naive_stem, tokenize


def test_tokenize_and_stem():
    assert tokenize("Selling DUMPS, cvv_fullz!") == ["selling", "dumps", "cvv", "fullz"]
    assert naive_stem("selling") == "sell"
    assert naive_stem("accounts") == "account"
    assert naive_stem("class") == "class"
    assert naive_stem("is") == "is"
    assert naive_stem("2010") == "2010"
    assert get_stemmer("none")("selling") == "selling"
    with pytest.raises(ValueError):
        get_stemmer("latin")


def test_analyze_drops_stopwords():
    assert analyze("selling the dumps") == ["sell", "dump"]


def test_min_tf_filters_rare_stems():
    v = vocabulary_from_texts(["selling dumps", "selling accounts"], min_tf=2)
    assert v.terms["body"] == {"sell": 0}


def test_all_stopword_corpus_gives_empty_vocabulary():
    v = vocabulary_from_texts(["the and of", "a the"], min_tf=1)
    assert v.is_empty and v.n_features == len(CONTEXT_FEATURES)


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        vocabulary_from_texts([])


@pytest.mark.parametrize("title,tags", [
    ("[S] cvv fresh", (0, 1)), ("[ b ] need", (1, 0)), ("[B][S] swap", (1, 1)), ("sales [x]", (0, 0)),
])
def test_trade_tags(title, tags):
    assert detect_trade_tags(title) == tags


def test_featurize_tiny_forum(forum):
    vocab = build_vocabulary(forum.thread_starts(), forum, min_tf=1)
    graph = build_public_graph(forum, "thread-owner")
    p1 = forum.start_posts["t1"]
    fv = featurize(p1, forum, vocab, graph)
    ctx = dict(zip(CONTEXT_FEATURES, fv.context))
    assert ctx["tagged_sell"] == 1 and ctx["tagged_buy"] == 0
    assert ctx["reply_count"] == 2 and ctx["degree"] == 2
    assert ctx["time_on_forum_days"] == pytest.approx(1.0)
    assert ctx["views"] == 10 and ctx["reputation"] == 5
    row = fv.dense(vocab)
    names = vocab.feature_names()
    assert row[names.index("body:dump")] == 1
    assert row[names.index("title:dump")] == 1


def test_unknown_terms_ignored_and_unknown_creator_raises(forum):
    vocab = vocabulary_from_texts(["zzz zzz zzz"], min_tf=1)
    graph = build_public_graph(forum, "thread-owner")
    assert featurize(forum.start_posts["t1"], forum, vocab, graph).dense(vocab)[:vocab.n_text].sum() == 0
    with pytest.raises(KeyError):
        featurize(PostRecord("x", "t1", "ghost", 0), forum, vocab, graph)


def test_reply_horizon(forum):
    p1 = forum.start_posts["t1"]
    assert reply_count(p1, forum, horizon=HOUR) == 1
    assert reply_count(p1, forum, horizon=HOUR - 1) == 0


def test_feature_sets_partition_columns(forum):
    vocab = build_vocabulary(forum.thread_starts(), forum, min_tf=1)
    nlp, ctx, both = (feature_set_columns(vocab, s) for s in ("nlp", "context", "all"))
    assert np.array_equal(np.concatenate([nlp, ctx]), both)
    assert len(ctx) == len(CONTEXT_FEATURES)
    with pytest.raises(ValueError):
        feature_set_columns(vocab, "some")


def test_sparse_round_trip(tmp_path, forum):
    vocab = build_vocabulary(forum.thread_starts(), forum, min_tf=1)
    X, vectors = feature_matrix(forum.thread_starts(), forum, vocab, build_public_graph(forum, "same-thread"))
    write_sparse(tmp_path / "f.txt", vectors, vocab)
    ids, X2 = read_sparse(tmp_path / "f.txt")
    assert ids == ["p1", "p4"]
    np.testing.assert_array_equal(X, X2)


def test_vocabulary_json_round_trip(forum):
    vocab = build_vocabulary(forum.thread_starts(), forum, min_tf=1)
    again = Vocabulary.from_json(vocab.to_json())
    assert again.terms == vocab.terms and again.feature_names() == vocab.feature_names()
