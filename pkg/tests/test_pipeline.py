import numpy as np
import pytest

from proneval.config import PipelineConfig
from proneval.errors import PipelineError
from proneval.nbest import RawHypothesis, WordTiming
from proneval.pipeline import (
    canonical_expansion,
    load_frame_features,
    nbest_from_record,
    nbest_to_record,
    normalize_utterance,
    one_best_word_cn,
    save_frame_features,
    utterance_feature_matrix,
)


def timed(words, start=0, dur=10):
    stamps = []
    t = start
    for w in words:
        stamps.append(WordTiming(w, t, t + dur))
        t += dur + 2
    return stamps


class TestNormalizeUtterance:
    def test_basic(self):
        config = PipelineConfig()
        nbest = normalize_utterance(
            "u1",
            [
                RawHypothesis("Cat sat.", -0.1),
                RawHypothesis("Cot sat!", -0.9),
            ],
            config,
        )
        assert nbest.hyps[0].tokens == ["cat", "sat"]
        assert sum(h.posterior for h in nbest.hyps) == pytest.approx(1.0)

    def test_timings_must_match_text(self):
        config = PipelineConfig()
        raw = RawHypothesis("Cat sat.", -0.1, timed(["cat", "mat"]))
        with pytest.raises(PipelineError, match="word timings"):
            normalize_utterance("u1", [raw], config)

    def test_timings_survive_when_consistent(self):
        config = PipelineConfig()
        raw = RawHypothesis("Cat sat.", -0.1, timed(["Cat", "sat."]))
        nbest = normalize_utterance("u1", [raw], config)
        assert [w.surface for w in nbest.hyps[0].words] == ["Cat", "sat."]

    def test_dropped_tokens_discard_timings(self):
        config = PipelineConfig()
        raw = RawHypothesis("cat 世界", -0.1, timed(["cat", "世界"]))
        with pytest.warns(UserWarning, match="discarding word timings"):
            nbest = normalize_utterance("u1", [raw], config)
        assert nbest.hyps[0].tokens == ["cat"]
        assert nbest.hyps[0].words is None

    def test_all_rejected_raises(self):
        config = PipelineConfig(script_policy="drop_hypothesis", target_script="tamil")
        with pytest.raises(PipelineError, match="no hypotheses"):
            normalize_utterance("u1", [RawHypothesis("latin text", -0.5)], config)

    def test_record_round_trip(self):
        config = PipelineConfig()
        nbest = normalize_utterance(
            "u1", [RawHypothesis("Cat sat.", -0.1, timed(["cat", "sat"]))], config
        )
        back = nbest_from_record(nbest_to_record(nbest))
        assert back.utt_id == nbest.utt_id
        assert [h.tokens for h in back.hyps] == [h.tokens for h in nbest.hyps]
        assert [h.posterior for h in back.hyps] == [h.posterior for h in nbest.hyps]
        assert back.hyps[0].words[0].t_end == nbest.hyps[0].words[0].t_end


class TestCanonical:
    def test_first_variant_wins(self, tiny_lexicon):
        expansion = canonical_expansion(["tea", "cat"], tiny_lexicon)
        assert expansion == [("tea", ["T", "IY"]), ("cat", ["K", "AE", "T"])]

    def test_oov_transcript_word_errors(self, tiny_lexicon):
        with pytest.raises(PipelineError, match="zebra"):
            canonical_expansion(["zebra"], tiny_lexicon)

    def test_one_best_word_cn(self):
        cn = one_best_word_cn(["a", "b"], "u")
        assert [dict(s.probs) for s in cn.slots] == [{"a": 1.0}, {"b": 1.0}]


class TestFeatureMatrixAssembly:
    def test_mismatched_timing_count_ignored(self, tiny_lexicon):
        from proneval.features import fit_duration_stats
        from proneval.nbest import Hypothesis, NBestList

        # Two tokens but only one timing: tempo features fall back to the
        # deleted-word defaults instead of misaligning.
        hyps = [Hypothesis(["a", "cat"], -0.1, [WordTiming("a", 0, 5)], 1.0)]
        nbest = NBestList("u", hyps)
        stats = fit_duration_stats([4, 8])
        matrix = utterance_feature_matrix(nbest, ["a", "cat"], tiny_lexicon, stats, PipelineConfig())
        assert all(row.word_sr == 0.0 for row in matrix.rows)

    def test_word_spans_follow_alignment(self, tiny_lexicon):
        from proneval.features import fit_duration_stats
        from proneval.nbest import Hypothesis, NBestList

        hyps = [
            Hypothesis(
                ["a", "cat"], -0.1, [WordTiming("a", 0, 5), WordTiming("cat", 7, 19)], 1.0
            )
        ]
        nbest = NBestList("u", hyps)
        stats = fit_duration_stats([4, 8])
        matrix = utterance_feature_matrix(nbest, ["a", "cat"], tiny_lexicon, stats, PipelineConfig())
        assert matrix.word_spans == [[0, 5], [7, 19]]
        assert matrix.canonical == ["AH", "K", "AE", "T"]
        assert [row.word_index for row in matrix.rows] == [0, 1, 1, 1]


class TestFrameFeatureFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(20)
        feats = rng.normal(size=(7, 3))
        path = tmp_path / "u.frames"
        save_frame_features(str(path), feats)
        np.testing.assert_array_equal(load_frame_features(str(path)), feats)

    def test_header_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.frames"
        path.write_text('{"dim": 2, "frames": 3}\n1.0 2.0\n', encoding="utf-8")
        with pytest.raises(PipelineError, match="shape"):
            load_frame_features(str(path))
