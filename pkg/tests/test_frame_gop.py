import math
import random

import numpy as np
import pytest

from proneval.errors import AlignmentError
from proneval.features import fit_duration_stats
from proneval.frame_gop import (
    PhoneAlignment,
    PosteriorMatrix,
    Segment,
    frame_features,
    load_phone_alignment,
    load_posterior_matrix,
    phi,
    save_posterior_matrix,
)

from oracles import frame_features_oracle


def random_matrix(rng, n_frames, inventory):
    logits = rng.normal(size=(n_frames, len(inventory)))
    m = logits.max(axis=1, keepdims=True)
    log_probs = logits - (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))
    return PosteriorMatrix(list(inventory), log_probs)


class TestPhi:
    def test_single_frame(self):
        matrix = PosteriorMatrix(["a", "b"], np.log([[0.5, 0.5]]))
        log_probs = np.array([[-2.0, math.log(1 - math.exp(-2.0))]])
        matrix = PosteriorMatrix(["a", "b"], log_probs)
        assert phi(matrix, Segment("a", 0, 0), "a") == pytest.approx(-2.0)

    def test_two_frame_mean(self):
        other = lambda lp: math.log(1 - math.exp(lp))
        log_probs = np.array([[-1.0, other(-1.0)], [-3.0, other(-3.0)]])
        matrix = PosteriorMatrix(["a", "b"], log_probs)
        assert phi(matrix, Segment("a", 0, 1), "a") == pytest.approx(-2.0)

    def test_uniform_inventory(self):
        inv = ["a", "b", "c", "d"]
        log_probs = np.full((3, 4), math.log(0.25))
        matrix = PosteriorMatrix(inv, log_probs)
        for rho in inv:
            assert phi(matrix, Segment("a", 0, 2), rho) == pytest.approx(math.log(0.25))

    def test_out_of_range_segment(self):
        matrix = PosteriorMatrix(["a"], np.zeros((3, 1)))
        with pytest.raises(AlignmentError, match="outside"):
            phi(matrix, Segment("a", 1, 3), "a")

    def test_frame_permutation_invariance(self):
        rng = np.random.default_rng(11)
        matrix = random_matrix(rng, 6, ["a", "b", "c"])
        seg = Segment("b", 1, 4)
        base = phi(matrix, seg, "b")
        perm = matrix.log_probs.copy()
        perm[1:5] = perm[[4, 2, 1, 3]]
        shuffled = PosteriorMatrix(matrix.inventory, perm)
        assert phi(shuffled, seg, "b") == pytest.approx(base, abs=1e-15)


class TestFrameFeatures:
    def test_canonical_argmax_gives_zero_margin(self):
        inv = ["a", "b"]
        log_probs = np.log(np.array([[0.9, 0.1]] * 4))
        matrix = PosteriorMatrix(inv, log_probs)
        align = PhoneAlignment([Segment("a", 0, 1), Segment("a", 2, 3)])
        stats = fit_duration_stats([1, 3])
        rows = frame_features(matrix, align, stats)
        for row in rows:
            assert row.gop_margin == pytest.approx(0.0)

    def test_lpr_zero_at_canonical(self):
        rng = np.random.default_rng(12)
        inv = ["a", "b", "c"]
        matrix = random_matrix(rng, 5, inv)
        align = PhoneAlignment([Segment("b", 0, 2), Segment("c", 3, 4)])
        stats = fit_duration_stats([2, 4])
        rows = frame_features(matrix, align, stats)
        assert rows[0].lpr[inv.index("b")] == 0.0
        assert rows[1].lpr[inv.index("c")] == 0.0

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(13)
        pyrng = random.Random(13)
        for _ in range(100):
            inv = [f"p{i}" for i in range(pyrng.randint(2, 5))]
            n_frames = pyrng.randint(2, 8)
            matrix = random_matrix(rng, n_frames, inv)
            segments = []
            t = 0
            while t < n_frames:
                end = pyrng.randint(t, n_frames - 1)
                segments.append(Segment(pyrng.choice(inv), t, end))
                t = end + 1
            durations = [s.t_end - s.t_start for s in segments]
            if len(durations) < 2 or len(set(durations)) == 1:
                continue
            stats = fit_duration_stats(durations)
            align = PhoneAlignment(segments)
            rows = frame_features(matrix, align, stats)
            oracle_rows = frame_features_oracle(
                [list(map(float, row)) for row in matrix.log_probs],
                inv,
                [(s.phone, s.t_start, s.t_end) for s in segments],
                stats.mu,
                stats.sigma,
            )
            for got, want in zip(rows, oracle_rows):
                assert got.gop == pytest.approx(want["gop"], abs=1e-12)
                assert got.gop_margin == pytest.approx(want["gop_margin"], abs=1e-12)
                assert got.sr == pytest.approx(want["sr"], abs=1e-12)
                assert got.nd == pytest.approx(want["nd"], abs=1e-12)
                for a, b in zip(got.lpp, want["lpp"]):
                    assert a == pytest.approx(b, abs=1e-12)
                for a, b in zip(got.lpr, want["lpr"]):
                    assert a == pytest.approx(b, abs=1e-12)

    def test_hand_computed_fixture(self):
        # Fixed 4-frame, 3-phone matrix with expectations worked out by hand.
        probs = [
            [0.7, 0.2, 0.1],
            [0.6, 0.3, 0.1],
            [0.2, 0.5, 0.3],
            [0.1, 0.8, 0.1],
        ]
        inv = ["A", "B", "C"]
        matrix = PosteriorMatrix(inv, np.log(np.array(probs)))
        align = PhoneAlignment([Segment("A", 0, 0), Segment("B", 1, 3)])
        stats = fit_duration_stats([0, 2])  # mu 1, sigma 1
        rows = frame_features(matrix, align, stats)

        first, second = rows
        assert first.gop == pytest.approx(math.log(0.7), abs=1e-15)
        assert first.gop_margin == pytest.approx(0.0, abs=1e-15)
        assert first.lpp == pytest.approx(
            [math.log(0.7), math.log(0.2), math.log(0.1)], abs=1e-15
        )
        assert first.sr == pytest.approx(1.0)  # zero-length span clamped
        assert first.nd == pytest.approx(-1.0)

        phi_a = (math.log(0.6) + math.log(0.2) + math.log(0.1)) / 3
        phi_b = (math.log(0.3) + math.log(0.5) + math.log(0.8)) / 3
        phi_c = (math.log(0.1) + math.log(0.3) + math.log(0.1)) / 3
        assert second.gop == pytest.approx(phi_b, abs=1e-15)
        assert second.gop_margin == pytest.approx(0.0, abs=1e-15)
        assert second.lpp == pytest.approx([phi_a, phi_b, phi_c], abs=1e-15)
        assert second.lpr == pytest.approx(
            [phi_b - phi_a, 0.0, phi_b - phi_c], abs=1e-15
        )
        assert second.sr == pytest.approx(0.5)
        assert second.nd == pytest.approx(1.0)

    def test_margins_never_positive(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            inv = ["a", "b", "c", "d"]
            matrix = random_matrix(rng, 6, inv)
            align = PhoneAlignment([Segment("a", 0, 2), Segment("d", 3, 5)])
            stats = fit_duration_stats([2, 5])
            for row in frame_features(matrix, align, stats):
                assert row.gop_margin <= 0.0

    def test_strict_mode_rejects_unnormalized(self):
        matrix = PosteriorMatrix(["a", "b"], np.zeros((2, 2)))
        align = PhoneAlignment([Segment("a", 0, 1)])
        stats = fit_duration_stats([1, 2])
        with pytest.raises(AlignmentError, match="frame 0"):
            frame_features(matrix, align, stats, strict=True)
        rows = frame_features(matrix, align, stats, strict=False)
        assert rows[0].gop == pytest.approx(0.0)

    def test_overlapping_alignment_rejected(self):
        align = PhoneAlignment([Segment("a", 0, 3), Segment("a", 2, 5)])
        with pytest.raises(AlignmentError, match="overlap"):
            align.validate()


class TestIo:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(15)
        matrix = random_matrix(rng, 4, ["a", "b", "c"])
        path = tmp_path / "m.post"
        save_posterior_matrix(matrix, str(path))
        back = load_posterior_matrix(str(path))
        assert back.inventory == matrix.inventory
        assert back.frame_rate == matrix.frame_rate
        np.testing.assert_array_equal(back.log_probs, matrix.log_probs)

    def test_alignment_file(self, tmp_path):
        path = tmp_path / "a.ali"
        path.write_text("a 0 3\nb 4 6\n", encoding="utf-8")
        align = load_phone_alignment(str(path))
        assert [(s.phone, s.t_start, s.t_end) for s in align.segments] == [
            ("a", 0, 3),
            ("b", 4, 6),
        ]
