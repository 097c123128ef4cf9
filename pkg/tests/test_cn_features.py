import itertools
import json
import math
import random

import pytest

from proneval.cn import EPS, ConfusionNetwork, ConfusionSlot
from proneval.errors import AlignmentError
from proneval.features import (
    DEFAULT_LOG_FLOOR,
    AlignOp,
    CanonicalAlignment,
    WordTempo,
    align_cn_to_canonical,
    broadcast_word_features,
    compute_cn_features,
    compute_cn_wgop,
    fit_duration_stats,
    word_sr_nd,
)
from proneval.nbest import WordTiming

from oracles import enumerate_align_scripts

INV = ["AA", "AE", "B", "K", "SIL", "T"]


def phoneme_cn(slot_dicts):
    return ConfusionNetwork("u", "phoneme", [ConfusionSlot(d) for d in slot_dicts])


def op_tuples(alignment):
    out = []
    for op in alignment.ops:
        if op.kind == "match":
            out.append(("match", op.slot_index, op.canon_index))
        elif op.kind == "delete":
            out.append(("delete", op.canon_index))
        else:
            out.append(("insert", op.slot_index))
    return out


class TestAlign:
    def test_identity(self):
        cn = phoneme_cn([{"K": 1.0}, {"AE": 1.0}, {"T": 1.0}])
        alignment = align_cn_to_canonical(cn, ["K", "AE", "T"])
        assert op_tuples(alignment) == [("match", 0, 0), ("match", 1, 1), ("match", 2, 2)]
        assert alignment.cost == pytest.approx(0.0)

    def test_deletion_in_middle(self):
        cn = phoneme_cn([{"K": 1.0}, {"T": 1.0}])
        alignment = align_cn_to_canonical(cn, ["K", "AE", "T"])
        assert op_tuples(alignment) == [("match", 0, 0), ("delete", 1), ("match", 1, 2)]
        assert alignment.cost == pytest.approx(0.95)

    def test_insert_high_eps_slot(self):
        cn = phoneme_cn([{EPS: 0.9, "B": 0.1}, {"K": 1.0}])
        alignment = align_cn_to_canonical(cn, ["K"])
        assert op_tuples(alignment) == [("insert", 0), ("match", 1, 0)]
        assert alignment.cost == pytest.approx(0.1)

    def test_canonical_outside_inventory_errors(self):
        cn = phoneme_cn([{"K": 1.0}])
        with pytest.raises(AlignmentError, match="ZZ"):
            align_cn_to_canonical(cn, ["ZZ"], inventory={"K", "SIL"})

    def test_empty_canonical_errors(self):
        with pytest.raises(AlignmentError, match="empty"):
            align_cn_to_canonical(phoneme_cn([{"K": 1.0}]), [])

    def test_matches_enumeration_oracle(self):
        # Structured slot catalog times short canonical sequences; compare
        # both cost and the chosen script against DFS-ordered enumeration.
        catalog = [
            {"AA": 1.0},
            {"AE": 0.6, "AA": 0.4},
            {EPS: 0.7, "K": 0.3},
            {"K": 0.5, "T": 0.3, EPS: 0.2},
        ]
        symbols = ["AA", "AE", "K"]
        for n_slots in range(0, 3):
            for combo in itertools.product(range(len(catalog)), repeat=n_slots):
                slots = [dict(catalog[c]) for c in combo]
                cn = phoneme_cn([dict(s) for s in slots])
                for n_canon in range(1, 4):
                    for canon in itertools.product(symbols, repeat=n_canon):
                        got = align_cn_to_canonical(cn, list(canon))
                        cost, script = enumerate_align_scripts(slots, list(canon))
                        assert got.cost == pytest.approx(cost, abs=1e-9)
                        assert op_tuples(got) == script

    def test_alignment_validates_indices(self):
        cn = phoneme_cn([{"K": 0.7, EPS: 0.3}, {"AE": 1.0}, {"T": 0.5, "K": 0.5}])
        alignment = align_cn_to_canonical(cn, ["K", "T"])
        alignment.validate(len(cn.slots), 2)


class TestComputeFeatures:
    def test_matched_slot_reads_posterior(self):
        cn = phoneme_cn([{"AE": 0.7, "AA": 0.2, EPS: 0.1}])
        alignment = align_cn_to_canonical(cn, ["AE"])
        rows = compute_cn_features(cn, ["AE"], alignment, INV)
        assert rows[0].cn_gop == pytest.approx(math.log(0.7))
        assert rows[0].cn_gop_margin == pytest.approx(0.0)

    def test_weaker_canonical_gets_negative_margin(self):
        cn = phoneme_cn([{"AE": 0.7, "AA": 0.2, EPS: 0.1}])
        alignment = CanonicalAlignment(
            [list(align_cn_to_canonical(cn, ["AA"]).ops)[0]], 0.8
        )
        rows = compute_cn_features(cn, ["AA"], alignment, INV)
        assert rows[0].cn_gop == pytest.approx(math.log(0.2))
        assert rows[0].cn_gop_margin == pytest.approx(math.log(0.2) - math.log(0.7))

    def test_deletion_allocates_mass_to_silence(self):
        cn = phoneme_cn([{"K": 1.0}, {"T": 1.0}])
        canonical = ["K", "AE", "T"]
        alignment = align_cn_to_canonical(cn, canonical)
        rows = compute_cn_features(cn, canonical, alignment, INV)
        deleted = rows[1]
        assert deleted.cn_gop == DEFAULT_LOG_FLOOR
        assert deleted.lpp[INV.index("SIL")] == pytest.approx(0.0)
        assert all(
            v == DEFAULT_LOG_FLOOR for i, v in enumerate(deleted.lpp) if INV[i] != "SIL"
        )

    def test_lpr_zero_at_canonical(self):
        cn = phoneme_cn([{"AE": 0.5, "K": 0.3, EPS: 0.2}])
        alignment = align_cn_to_canonical(cn, ["K"])
        rows = compute_cn_features(cn, ["K"], alignment, INV)
        assert rows[0].lpr[INV.index("K")] == 0.0

    def test_randomized_identities(self):
        rng = random.Random(8)
        symbols = [p for p in INV if p != "SIL"]
        for _ in range(200):
            n_slots = rng.randint(1, 5)
            slots = []
            for _ in range(n_slots):
                chosen = rng.sample(symbols, rng.randint(1, 3)) + [EPS]
                raw = [rng.random() for _ in chosen]
                total = sum(raw)
                slots.append({s: v / total for s, v in zip(chosen, raw)})
            cn = phoneme_cn(slots)
            canonical = [rng.choice(symbols) for _ in range(rng.randint(1, 5))]
            alignment = align_cn_to_canonical(cn, canonical)
            rows = compute_cn_features(cn, canonical, alignment, INV)
            for row, sym in zip(rows, canonical):
                assert row.cn_gop_margin <= 1e-15
                assert row.lpr[INV.index(sym)] == 0.0
                assert all(map(math.isfinite, row.lpp))
                assert all(map(math.isfinite, row.lpr))
                assert all(v <= 0.0 for v in row.lpp)
                argmaxes = {
                    INV[i] for i, v in enumerate(row.lpp) if v == max(row.lpp)
                }
                if row.cn_gop_margin == 0.0:
                    assert sym in argmaxes

    def test_floor_applied_before_max(self):
        # All mass on epsilon: every phoneme is floored, so margin is zero.
        cn = phoneme_cn([{EPS: 1.0}])
        alignment = CanonicalAlignment(
            [align_cn_to_canonical(cn, ["K"]).ops[0]], 0.0
        )
        ops = align_cn_to_canonical(cn, ["K"])
        rows = compute_cn_features(cn, ["K"], ops, INV)
        for row in rows:
            assert row.cn_gop_margin <= 0.0


class TestDurationStats:
    def test_hand_case(self):
        stats = fit_duration_stats([1, 2, 3])
        assert stats.mu == pytest.approx(2.0)
        assert stats.sigma == pytest.approx(math.sqrt(2 / 3))

    def test_all_equal_errors(self):
        with pytest.raises(ValueError, match="zero"):
            fit_duration_stats([5, 5, 5])

    def test_two_points(self):
        stats = fit_duration_stats([2, 4])
        assert stats.mu == pytest.approx(3.0)
        assert stats.sigma == pytest.approx(1.0)

    def test_needs_two(self):
        with pytest.raises(ValueError, match="at least 2"):
            fit_duration_stats([3])

    def test_standardization_round_trip(self):
        rng = random.Random(9)
        durations = [rng.randint(2, 30) for _ in range(500)]
        stats = fit_duration_stats(durations)
        nds = [stats.nd(d) for d in durations]
        mean = sum(nds) / len(nds)
        var = sum((v - mean) ** 2 for v in nds) / len(nds)
        assert mean == pytest.approx(0.0, abs=1e-9)
        assert math.sqrt(var) == pytest.approx(1.0, abs=1e-9)


class TestWordTempo:
    def test_simple_span(self):
        stats = fit_duration_stats([6, 10])  # mu 8, sigma 2
        tempo = word_sr_nd([WordTiming("w", 10, 20)], stats)[0]
        assert tempo.sr == pytest.approx(0.1)
        assert tempo.nd == pytest.approx(1.0)

    def test_zero_length_span_clamped(self):
        stats = fit_duration_stats([6, 10])
        tempo = word_sr_nd([WordTiming("w", 7, 7)], stats)[0]
        assert tempo.sr == pytest.approx(1.0)

    def test_mean_duration_zero_nd(self):
        stats = fit_duration_stats([6, 10])
        tempo = word_sr_nd([WordTiming("w", 0, 8)], stats)[0]
        assert tempo.nd == pytest.approx(0.0)


class TestBroadcast:
    def _alignment(self, pairs, n_deleted=()):
        ops = [AlignOp("match", slot_index=s, canon_index=c) for s, c in pairs]
        for c in n_deleted:
            ops.append(AlignOp("delete", canon_index=c))
        return CanonicalAlignment(ops, 0.0)

    def test_word_broadcast_to_phones(self):
        stats = fit_duration_stats([6, 10])
        rows = broadcast_word_features(
            [("cat", ["K", "AE", "T"])],
            [WordTempo(sr=0.1, nd=1.0)],
            self._alignment([(0, 0)]),
            stats,
        )
        assert len(rows) == 3
        assert all(r["sr"] == pytest.approx(0.1) for r in rows)
        assert all(r["word_index"] == 0 for r in rows)

    def test_deleted_word_defaults(self):
        stats = fit_duration_stats([6, 10])  # mu 8, sigma 2
        rows = broadcast_word_features(
            [("cat", ["K", "AE", "T"])], [], self._alignment([], n_deleted=[0]), stats
        )
        assert all(r["sr"] == 0.0 for r in rows)
        assert all(r["nd"] == pytest.approx(-4.0) for r in rows)

    def test_two_words_partition(self):
        stats = fit_duration_stats([6, 10])
        rows = broadcast_word_features(
            [("a", ["AA"]), ("cat", ["K", "AE", "T"])],
            [WordTempo(0.2, 0.5), WordTempo(0.05, -0.5)],
            self._alignment([(0, 0), (1, 1)]),
            stats,
        )
        assert {r["sr"] for r in rows} == {0.2, 0.05}
        assert [r["word_index"] for r in rows] == [0, 1, 1, 1]


class TestWordGop:
    def word_cn(self, slot_dicts):
        return ConfusionNetwork("u", "word", [ConfusionSlot(d) for d in slot_dicts])

    def test_matched_word(self):
        cn = self.word_cn([{"cat": 0.8, "cap": 0.2}])
        gops = compute_cn_wgop(cn, ["cat"])
        assert gops[0].cn_wgop == pytest.approx(math.log(0.8))
        assert gops[0].cn_wgop_margin == pytest.approx(0.0)

    def test_deleted_word_floored(self):
        cn = self.word_cn([{"cat": 1.0}])
        gops = compute_cn_wgop(cn, ["cat", "sat"])
        assert gops[1].cn_wgop == DEFAULT_LOG_FLOOR
        assert gops[1].cn_wgop_margin == pytest.approx(DEFAULT_LOG_FLOOR)

    def test_canonical_absent_from_slot(self):
        cn = self.word_cn([{"cap": 0.9, "cab": 0.1}])
        gops = compute_cn_wgop(cn, ["cat"])
        assert gops[0].cn_wgop == DEFAULT_LOG_FLOOR
        assert gops[0].cn_wgop_margin == pytest.approx(DEFAULT_LOG_FLOOR - math.log(0.9))

    def test_margins_never_positive(self):
        rng = random.Random(10)
        vocab = ["cat", "cap", "cab", "cot"]
        for _ in range(100):
            slots = []
            for _ in range(rng.randint(1, 4)):
                chosen = rng.sample(vocab, rng.randint(1, 3)) + [EPS]
                raw = [rng.random() for _ in chosen]
                total = sum(raw)
                slots.append({s: v / total for s, v in zip(chosen, raw)})
            cn = self.word_cn(slots)
            canonical = [rng.choice(vocab) for _ in range(rng.randint(1, 4))]
            for gop in compute_cn_wgop(cn, canonical):
                assert gop.cn_wgop_margin <= 0.0
                assert math.isfinite(gop.cn_wgop)


class TestDeterminism:
    def test_feature_serialization_bit_identical(self, tiny_lexicon):
        from proneval.cn import build_word_cn, expand_to_phoneme_cn
        from proneval.config import PipelineConfig
        from proneval.nbest import Hypothesis, NBestList
        from proneval.pipeline import utterance_feature_matrix

        hyps = [
            Hypothesis(["a", "cat"], -0.1, [WordTiming("a", 0, 5), WordTiming("cat", 7, 19)], 0.6),
            Hypothesis(["b", "cat"], -0.6, [WordTiming("b", 0, 5), WordTiming("cat", 7, 19)], 0.4),
        ]
        nbest = NBestList("u", hyps)
        stats = fit_duration_stats([5, 12, 9])
        config = PipelineConfig()
        blobs = set()
        for _ in range(3):
            matrix = utterance_feature_matrix(nbest, ["a", "cat"], tiny_lexicon, stats, config)
            blobs.add(json.dumps(matrix.to_record(), sort_keys=True))
        assert len(blobs) == 1
