"""Level parsing and per-level outcome statistics."""

import numpy as np
import pytest

from ssff.domain import FounderProfile, Outcome, SegmentLevel
from ssff.llm_gateway import mock_gateway
from ssff.segmentation import (
    DEFAULT_LEVEL_COUNTS,
    DEFAULT_LEVEL_STATS,
    MissingLevel,
    UnparseableLevel,
    compute_level_stats,
    lookup_success_rate,
    parse_level,
    segment_founder,
    stats_from_counts,
)


class TestSegmentFounder:
    def test_bare_level_response(self):
        gateway = mock_gateway(rules=(("segmentation level", "L3"),))
        result = segment_founder(FounderProfile("some engineer"), gateway)
        assert result.level == SegmentLevel(3)
        assert result.raw_response == "L3"

    def test_prose_with_single_level(self):
        gateway = mock_gateway(
            rules=(
                (
                    "Co-Founder & CEO",
                    "Rating: L3 - Moderate likelihood of success. L3 fits the profile.",
                ),
            )
        )
        profile = FounderProfile(
            "Co-Founder & CEO, MBA from Cambridge, featured in business magazines"
        )
        assert segment_founder(profile, gateway).level == SegmentLevel(3)

    def test_ambiguous_response_rejected(self):
        gateway = mock_gateway(rules=(("segmentation level", "maybe L2 or L3"),))
        with pytest.raises(UnparseableLevel):
            segment_founder(FounderProfile("someone"), gateway)

    def test_no_level_rejected(self):
        with pytest.raises(UnparseableLevel):
            parse_level("cannot tell")

    def test_lowercase_or_embedded_tokens_ignored(self):
        with pytest.raises(UnparseableLevel):
            parse_level("totaL3 is not a token")
        assert parse_level("the answer is L4.").level == 4


class TestLevelStats:
    def test_reference_counts_reproduce_reference_rates(self):
        stats = stats_from_counts(DEFAULT_LEVEL_COUNTS)
        expected = {1: 0.2424, 2: 0.2712, 3: 0.3921, 4: 0.6737, 5: 0.9208}
        for level, rate in expected.items():
            assert abs(stats.rows[level].success_rate - rate) <= 5e-5

    def test_reference_multipliers(self):
        stats = DEFAULT_LEVEL_STATS
        assert stats.rows[1].multiplier_vs_l1 == 1.0
        assert abs(stats.rows[2].multiplier_vs_l1 - 1.12) <= 0.01
        assert abs(stats.rows[5].multiplier_vs_l1 - 3.79) <= 0.01

    def test_compute_from_pairs_matches_counts(self):
        pairs = []
        rng = np.random.default_rng(2)
        counts = {level: [0, 0] for level in range(1, 6)}
        for _ in range(500):
            level = int(rng.integers(1, 6))
            outcome = Outcome(int(rng.integers(0, 2)))
            counts[level][int(outcome)] += 1
            pairs.append((SegmentLevel(level), outcome))
        # make sure every level occurs
        for level in range(1, 6):
            pairs.append((SegmentLevel(level), Outcome.SUCCESS))
            pairs.append((SegmentLevel(level), Outcome.FAILURE))
            counts[level][0] += 1
            counts[level][1] += 1
        stats = compute_level_stats(pairs)
        for level in range(1, 6):
            row = stats.rows[level]
            assert row.failure_count == counts[level][0]
            assert row.success_count == counts[level][1]
            assert row.success_count + row.failure_count == sum(counts[level])

    def test_rates_invariant_under_permutation(self):
        rng = np.random.default_rng(3)
        pairs = [
            (SegmentLevel(1 + i % 5), Outcome(int(rng.integers(0, 2)))) for i in range(100)
        ]
        stats_a = compute_level_stats(pairs)
        shuffled = [pairs[i] for i in rng.permutation(len(pairs))]
        stats_b = compute_level_stats(shuffled)
        assert stats_a == stats_b

    def test_missing_level_rejected(self):
        pairs = [(SegmentLevel(1), Outcome.SUCCESS), (SegmentLevel(2), Outcome.FAILURE)]
        with pytest.raises(MissingLevel):
            compute_level_stats(pairs)


class TestLookup:
    def test_reference_rates(self):
        assert abs(lookup_success_rate(DEFAULT_LEVEL_STATS, SegmentLevel(4)) - 0.6737) <= 5e-5
        assert abs(lookup_success_rate(DEFAULT_LEVEL_STATS, SegmentLevel(1)) - 0.2424) <= 5e-5

    def test_uniform_stats_symmetric(self):
        stats = stats_from_counts({level: (5, 5) for level in range(1, 6)})
        assert lookup_success_rate(stats, SegmentLevel(3)) == 0.5
        assert all(stats.rows[level].multiplier_vs_l1 == 1.0 for level in range(1, 6))
