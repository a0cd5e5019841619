"""Founder quality segmentation (L1..L5) and per-level outcome statistics."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping

from ssff import prompts
from ssff.domain import FounderProfile, Outcome, SegmentLevel
from ssff.llm_gateway import ChatRequest, Gateway, render


class UnparseableLevel(ValueError):
    """The model response contained no level token, or several distinct ones."""


class MissingLevel(ValueError):
    def __init__(self, level: int):
        self.level = level
        super().__init__(f"no observations for level L{level}; rate undefined")


@dataclass(frozen=True)
class SegmentationResult:
    level: SegmentLevel
    raw_response: str


@dataclass(frozen=True)
class LevelRow:
    success_count: int
    failure_count: int
    success_rate: float
    multiplier_vs_l1: float


@dataclass(frozen=True)
class LevelStats:
    """Success/failure counts and derived rates for each of the five levels."""

    rows: Mapping[int, LevelRow]

    def __post_init__(self) -> None:
        object.__setattr__(self, "rows", dict(self.rows))
        if sorted(self.rows) != [1, 2, 3, 4, 5]:
            raise ValueError(f"level stats must cover levels 1..5, got {sorted(self.rows)}")


_LEVEL_TOKEN_RE = re.compile(r"\bL([1-5])\b")


def parse_level(text: str) -> SegmentLevel:
    """Extract the single distinct level token from a model response.

    Models asked for a bare level often add prose, so repeated mentions of
    one level are fine; two different levels are ambiguous and rejected.
    """
    tokens = _LEVEL_TOKEN_RE.findall(text)
    distinct = sorted(set(tokens))
    if len(distinct) != 1:
        raise UnparseableLevel(f"expected exactly one level token, found {distinct or 'none'}: {text[:120]!r}")
    return SegmentLevel(int(distinct[0]))


def segment_founder(
    profile: FounderProfile,
    gateway: Gateway,
    model_id: str = "gpt-4o-mini",
) -> SegmentationResult:
    """Classify one founder into L1..L5; the raw response is kept for audit."""
    user_prompt = render(prompts.SEGMENTATION, {"founder_info": profile.describe()})
    response = gateway.complete(
        ChatRequest(
            system_prompt=prompts.DEFAULT_SYSTEM_PROMPT,
            user_prompt=user_prompt,
            model_id=model_id,
        )
    )
    return SegmentationResult(level=parse_level(response), raw_response=response)


def stats_from_counts(counts: Mapping[int, tuple[int, int]]) -> LevelStats:
    """Build LevelStats from {level: (success_count, failure_count)}."""
    for level in range(1, 6):
        if level not in counts:
            raise MissingLevel(level)
        successes, failures = counts[level]
        if successes + failures == 0:
            raise MissingLevel(level)
    rates = {
        level: counts[level][0] / (counts[level][0] + counts[level][1]) for level in range(1, 6)
    }
    base_rate = rates[1]
    rows = {
        level: LevelRow(
            success_count=counts[level][0],
            failure_count=counts[level][1],
            success_rate=rates[level],
            multiplier_vs_l1=rates[level] / base_rate,
        )
        for level in range(1, 6)
    }
    return LevelStats(rows=rows)


def compute_level_stats(pairs: Iterable[tuple[SegmentLevel, Outcome]]) -> LevelStats:
    """Aggregate (level, outcome) observations into per-level statistics.

    Every level 1..5 must occur at least once, otherwise its rate is
    undefined and MissingLevel is raised.
    """
    counts: dict[int, list[int]] = {level: [0, 0] for level in range(1, 6)}
    for level, outcome in pairs:
        if outcome == Outcome.SUCCESS:
            counts[level.level][0] += 1
        else:
            counts[level.level][1] += 1
    return stats_from_counts({level: (s, f) for level, (s, f) in counts.items()})


def lookup_success_rate(stats: LevelStats, level: SegmentLevel) -> float:
    return stats.rows[level.level].success_rate


# Built-in founder-level outcome counts used as the default statistics when
# no training data is supplied; the quantitative decision prompt embeds the
# same table.
DEFAULT_LEVEL_COUNTS: dict[int, tuple[int, int]] = {
    1: (24, 75),
    2: (83, 223),
    3: (287, 445),
    4: (514, 249),
    5: (93, 8),
}

DEFAULT_LEVEL_STATS = stats_from_counts(DEFAULT_LEVEL_COUNTS)
