import math

import pytest
import sacrebleu
from hypothesis import given, settings
from hypothesis import strategies as st

from fusedec.core import DataError
from fusedec.evaluation import (BLEU_SIGNATURE, AnnotatedSentence, AnnotatedTerm, BleuStats, GenderScores,
                                bleu_corpus, brevity_penalty, corpus_stats, dumps_eval_set, evaluate,
                                format_report, harmonic_mean, loads_eval_set, match_tokens, score_gender,
                                score_sentence, tokenize_13a)

T = AnnotatedTerm


def test_tokenize_13a_examples():
    assert tokenize_13a("Hello, world!") == ["Hello", ",", "world", "!"]
    assert tokenize_13a("3.14") == ["3.14"]
    assert tokenize_13a("abc") == ["abc"]


TOKENIZER_CASES = [
    "Hello, world!",
    "3.14 and 2,5 or 1-2",
    "It's a \"quoted\" (test) &amp; more...",
    "e-mail: a@b.com; x/y=z?",
    "Soy nueva en esta zona.",
    "g3F t7 t12",
    "  trailing spaces   ",
    "«¿Qué tal?» — dijo",
]


@pytest.mark.parametrize("text", TOKENIZER_CASES)
def test_tokenize_13a_matches_reference(text):
    from sacrebleu.tokenizers.tokenizer_13a import Tokenizer13a

    assert tokenize_13a(text) == Tokenizer13a()(text.rstrip()).split()


# five hand-curated pairs: exact, partial, no overlap, short, punctuation-heavy
BLEU_PAIRS = [
    ("the cat sat on the mat", "the cat sat on the mat"),
    ("the cat is on the mat", "the cat sat on the mat"),
    ("dogs bark loudly", "a quiet afternoon at home"),
    ("hello", "hello there my friend"),
    ("Well, it's 3.5 km away!", "Well, it is 3.5 km away."),
]


def _ref_bleu(hyps, refs):
    bleu = sacrebleu.metrics.BLEU(tokenize="13a", smooth_method="exp", lowercase=False)
    return bleu.corpus_score(hyps, [refs]).score


def test_bleu_matches_reference_corpus():
    hyps, refs = zip(*BLEU_PAIRS)
    assert abs(bleu_corpus(list(hyps), list(refs)) - _ref_bleu(list(hyps), list(refs))) < 0.01


@pytest.mark.parametrize("hyp, ref", BLEU_PAIRS)
def test_bleu_matches_reference_per_pair(hyp, ref):
    assert abs(bleu_corpus([hyp], [ref]) - _ref_bleu([hyp], [ref])) < 0.01


def test_bleu_signature_matches_reference():
    bleu = sacrebleu.metrics.BLEU(tokenize="13a", smooth_method="exp")
    bleu.corpus_score(["a"], [["a"]])
    sig = bleu.get_signature().format(short=False)
    for part in BLEU_SIGNATURE.split("|"):
        assert part in sig


def test_bleu_identity_and_no_overlap():
    assert bleu_corpus(["a b c d e"], ["a b c d e"]) == pytest.approx(100.0)
    assert bleu_corpus(["x y z w"], ["a b c d"]) == pytest.approx(_ref_bleu(["x y z w"], ["a b c d"]), abs=0.01)
    with pytest.raises(ValueError, match="empty corpus"):
        bleu_corpus([], [])


def test_brevity_penalty_hand_values():
    # 1-token hypothesis against a 4-token reference
    assert brevity_penalty(1, 4) == pytest.approx(math.exp(1 - 4 / 1))
    assert brevity_penalty(4, 4) == 1.0
    assert brevity_penalty(0, 4) == 0.0
    # corpus: all n-grams match, so BLEU is exactly 100 * BP with c = 6, r = 9
    score = bleu_corpus(["the", "a b c d e"], ["the cat sat down", "a b c d e"])
    assert score == pytest.approx(100.0 * math.exp(1 - 9 / 6), abs=1e-9)


@given(st.lists(st.tuples(st.text("abc ,.!", max_size=20), st.text("abc ,.!", min_size=1, max_size=20)),
                min_size=1, max_size=5))
@settings(max_examples=60, deadline=None)
def test_bleu_property_against_reference(pairs):
    hyps, refs = map(list, zip(*pairs))
    assert abs(bleu_corpus(hyps, refs) - _ref_bleu(hyps, refs)) < 0.01


def test_stats_are_additive():
    hyps, refs = zip(*BLEU_PAIRS)
    total = corpus_stats(hyps[:2], refs[:2]) + corpus_stats(hyps[2:], refs[2:])
    assert total == corpus_stats(hyps, refs)
    assert BleuStats() + total == total


def test_harmonic_mean():
    assert harmonic_mean(30, 60) == 40.0
    assert harmonic_mean(7.5, 7.5) == 7.5
    assert harmonic_mean(0, 90) == 0.0
    assert harmonic_mean(0, 0) == 0.0
    with pytest.raises(ValueError):
        harmonic_mean(-1, 3)


def test_match_tokens_normalization():
    assert match_tokens("¡Estoy CANSADA!, «segura»") == ["estoy", "cansada", "segura"]
    assert match_tokens("-- ...") == []


def test_score_gender_spec_examples():
    terms = (T("nueva", "nuevo", "F"), T("cansada", "cansado", "F"))
    s = score_sentence("soy nueva", terms)
    assert s.coverage("F") == 0.5 and s.accuracy("F") == 1.0
    s = score_sentence("soy nuevo", terms[:1])
    assert s.coverage("F") == 1.0 and s.accuracy("F") == 0.0
    dup = (T("nueva", "nuevo", "F"), T("nueva", "nuevo", "F"))
    s = score_sentence("nueva", dup)
    assert (s.total["F"], s.correct["F"], s.wrong["F"]) == (2, 1, 0)


# 10-sentence fixture; expected counts are hand-traced below each line
FIXTURE = [
    (("nueva|nuevo|F",), "soy nueva"),  # F correct
    (("nuevo|nueva|M",), "soy nueva"),  # M wrong
    (("cansada|cansado|F", "contenta|contento|F"), "Estoy cansada, y contento."),  # F correct + F wrong
    (("seguro|segura|M",), "no lo sé"),  # M unmeasured
    (("nueva|nuevo|F", "nueva|nuevo|F"), "nueva"),  # F correct + F unmeasured (consumed)
    (("listo|lista|M",), "LISTO!"),  # M correct
    ((), "sin términos"),
    (("sola|solo|F",), "solo sola"),  # F correct: correct form checked first
    (("cansado|cansada|M",), "cansados"),  # M unmeasured: whole-token match only
    (("contento|contenta|M", "seguro|segura|M"), "«contento» segura"),  # M correct + M wrong
]


def _fixture():
    sents = []
    for i, (terms, _) in enumerate(FIXTURE):
        sents.append(AnnotatedSentence(f"s{i}", "src", "ref", tuple(T(*t.split("|")) for t in terms)))
    return sents, [h for _, h in FIXTURE]


def test_score_gender_fixture_hand_counts():
    sents, hyps = _fixture()
    g = score_gender(hyps, sents)
    assert (g.total["F"], g.correct["F"], g.wrong["F"]) == (6, 4, 1)
    assert (g.total["M"], g.correct["M"], g.wrong["M"]) == (6, 2, 2)
    assert g.coverage("F") == 5 / 6 and g.accuracy("F") == 4 / 5
    assert g.coverage("M") == 4 / 6 and g.accuracy("M") == 2 / 4
    assert g.pooled_accuracy() == 6 / 9


def test_absent_gender_is_none():
    g = score_gender(["nueva"], [AnnotatedSentence("a", "s", "r", (T("nueva", "nuevo", "F"),))])
    assert g.accuracy("M") is None and g.coverage("M") is None
    assert GenderScores().pooled_accuracy() is None


@given(st.lists(st.sampled_from(["a", "b", "c", "d"]), max_size=6),
       st.lists(st.tuples(st.sampled_from(["a", "b", "c", "d"]), st.sampled_from(["a", "b", "c", "d"]),
                          st.sampled_from("FM")).filter(lambda t: t[0] != t[1]), max_size=5))
def test_gender_count_invariants(hyp_tokens, raw_terms):
    terms = tuple(T(*t) for t in raw_terms)
    s = score_sentence(" ".join(hyp_tokens), terms)
    for g in "FM":
        assert s.correct[g] + s.wrong[g] <= s.total[g]
        assert s.total[g] == sum(t.gender == g for t in terms)
    # a token can satisfy at most one term
    assert sum(s.correct.values()) + sum(s.wrong.values()) <= len(hyp_tokens)


def test_eval_set_roundtrip_and_errors():
    sents, _ = _fixture()
    text = dumps_eval_set(sents)
    assert loads_eval_set(text) == sents
    assert dumps_eval_set(loads_eval_set(text)) == text
    assert loads_eval_set(text)[6].terms == ()
    bad = text.replace("listo|lista|M", "listo|lista|X")
    with pytest.raises(DataError, match="line 7"):
        loads_eval_set(bad)
    with pytest.raises(DataError, match="line 1"):
        loads_eval_set("nope\n")
    with pytest.raises(DataError, match="duplicate id"):
        loads_eval_set(text + "s0\ta\tb\t\n")
    with pytest.raises(DataError, match="4 tab-separated"):
        loads_eval_set("MUSTSHE-LIKE v1\nx\ty\n")


def test_term_validation():
    with pytest.raises(DataError):
        T("same", "same", "F")
    with pytest.raises(DataError):
        T("two words", "x", "F")
    assert T("a", "b", "F").swapped() == T("b", "a", "M")
    assert T("a", "b", "F").swapped().swapped() == T("a", "b", "F")


def test_report_format():
    sents, hyps = _fixture()
    report = evaluate(hyps, sents)
    text = format_report(report)
    assert text.splitlines()[0] == f"signature={BLEU_SIGNATURE}"
    assert "accuracy_F=0.8000" in text and "coverage_M=0.6667" in text
    empty = evaluate(["x"], [AnnotatedSentence("a", "s", "x")])
    assert "accuracy_F=absent" in format_report(empty)
    with pytest.raises(ValueError):
        score_gender(["a"], [])
