"""Core value types shared across the pipeline.

Everything here is an immutable record with construction-time validation and
stable JSON serialization. Behavior lives in the stage modules; these types
are the contracts the stages exchange.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, Mapping, Sequence


class ValidationError(ValueError):
    """A record violates one of its declared invariants."""


class EmptyDescription(ValidationError):
    pass


class DescriptionTooLong(ValidationError):
    pass


class NoFounders(ValidationError):
    pass


DEFAULT_MAX_DESCRIPTION = 1000


class Outcome(IntEnum):
    """Binary startup outcome: 1 for success, 0 for failure."""

    FAILURE = 0
    SUCCESS = 1

    @classmethod
    def from_any(cls, value: Any) -> "Outcome":
        """Coerce common encodings (0/1, bools, outcome words) to an Outcome."""
        if isinstance(value, Outcome):
            return value
        if isinstance(value, bool):
            return cls.SUCCESS if value else cls.FAILURE
        if isinstance(value, (int, float)) and value in (0, 1):
            return cls(int(value))
        if isinstance(value, str):
            normalized = value.strip().lower()
            if normalized in ("1", "success", "successful"):
                return cls.SUCCESS
            if normalized in ("0", "failure", "unsuccessful", "fail"):
                return cls.FAILURE
        raise ValidationError(f"cannot interpret outcome value: {value!r}")


class Recommendation(Enum):
    """Final investment advice."""

    INVEST = "Invest"
    HOLD = "Hold"

    @classmethod
    def from_any(cls, value: Any) -> "Recommendation":
        if isinstance(value, Recommendation):
            return value
        if isinstance(value, str):
            normalized = value.strip().lower()
            if normalized == "invest":
                return cls.INVEST
            if normalized == "hold":
                return cls.HOLD
        raise ValidationError(f"cannot interpret recommendation value: {value!r}")


@dataclass(frozen=True, order=True)
class SegmentLevel:
    """Ordinal founder quality tier, 1 (weakest) through 5 (strongest)."""

    level: int

    def __post_init__(self) -> None:
        if not isinstance(self.level, int) or not 1 <= self.level <= 5:
            raise ValidationError(f"segment level must be an integer in 1..5, got {self.level!r}")

    def __str__(self) -> str:
        return f"L{self.level}"

    @classmethod
    def from_token(cls, token: str) -> "SegmentLevel":
        token = token.strip().upper()
        if len(token) == 2 and token[0] == "L" and token[1].isdigit():
            return cls(int(token[1]))
        raise ValidationError(f"not a level token: {token!r}")


@dataclass(frozen=True)
class FounderProfile:
    """Free-text founder background plus optional structured hints.

    ``structured_hints`` carries side-channel fields such as
    founder_backgrounds, track_records, leadership_skills, vision_alignment.
    """

    raw_text: str
    structured_hints: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.raw_text.strip():
            raise ValidationError("founder profile text is empty")
        object.__setattr__(self, "structured_hints", dict(self.structured_hints))

    def describe(self) -> str:
        """Render the profile as prompt-ready text."""
        lines = [self.raw_text.strip()]
        for key in self.structured_hints:
            lines.append(f"{key}: {self.structured_hints[key]}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"raw_text": self.raw_text, "structured_hints": dict(self.structured_hints)}

    @classmethod
    def from_dict(cls, data: Any) -> "FounderProfile":
        if isinstance(data, str):
            return cls(raw_text=data)
        if isinstance(data, Mapping):
            return cls(
                raw_text=str(data.get("raw_text", "")),
                structured_hints={str(k): str(v) for k, v in data.get("structured_hints", {}).items()},
            )
        raise ValidationError(f"cannot build founder profile from {type(data).__name__}")


@dataclass(frozen=True)
class StartupRecord:
    """A startup under evaluation: name, description, founding team, optional label.

    Construction is permissive so records parsed from untrusted files can be
    inspected; ``validate_startup`` enforces the contract.
    """

    name: str
    description: str
    founders: Sequence[FounderProfile]
    label: Outcome | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "founders", tuple(self.founders))

    def founders_text(self) -> str:
        """All founder profiles rendered as one prompt-ready block."""
        if len(self.founders) == 1:
            return self.founders[0].describe()
        parts = []
        for i, founder in enumerate(self.founders, start=1):
            parts.append(f"Founder {i}:\n{founder.describe()}")
        return "\n\n".join(parts)

    def to_dict(self) -> dict:
        data: dict[str, Any] = {
            "name": self.name,
            "description": self.description,
            "founders": [f.to_dict() for f in self.founders],
        }
        data["label"] = int(self.label) if self.label is not None else None
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StartupRecord":
        label = data.get("label")
        return cls(
            name=str(data.get("name", "")),
            description=str(data.get("description", "")),
            founders=tuple(FounderProfile.from_dict(f) for f in data.get("founders", [])),
            label=Outcome.from_any(label) if label is not None else None,
        )


def validate_startup(
    record: StartupRecord, max_description: int = DEFAULT_MAX_DESCRIPTION
) -> StartupRecord:
    """Return ``record`` unchanged iff all invariants hold, else raise."""
    if not record.description.strip():
        raise EmptyDescription(f"startup {record.name!r} has an empty description")
    if len(record.description) > max_description:
        raise DescriptionTooLong(
            f"description of {record.name!r} is {len(record.description)} chars "
            f"(limit {max_description})"
        )
    if not record.founders:
        raise NoFounders(f"startup {record.name!r} has no founders")
    return record


def _require_range(name: str, value: float, lo: float, hi: float) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ValidationError(f"{name} must be numeric, got {value!r}")
    if not lo <= value <= hi:
        raise ValidationError(f"{name} = {value} outside [{lo}, {hi}]")
    return float(value)


@dataclass(frozen=True)
class QuantDecision:
    """Outcome call from the quantitative decision stage."""

    outcome: Outcome
    probability: float
    reasoning: str

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "probability", _require_range("probability", self.probability, 0.0, 1.0)
        )

    def to_dict(self) -> dict:
        return {
            "outcome": int(self.outcome),
            "probability": self.probability,
            "reasoning": self.reasoning,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "QuantDecision":
        return cls(
            outcome=Outcome.from_any(data["outcome"]),
            probability=float(data["probability"]),
            reasoning=str(data.get("reasoning", "")),
        )


@dataclass(frozen=True)
class FinalReport:
    """The assembled end-of-pipeline report.

    All scores are stored as reals even where sources show integers, since
    sub-agents may emit fractional scores.
    """

    startup_name: str
    market_report: str
    market_viability_score: float
    product_report: str
    product_viability_score: float
    product_innovation_score: float
    product_market_fit_score: float
    founder_report: str
    founder_competency_score: float
    segment_level: SegmentLevel
    segmentation_reasoning: str
    fit_score: float
    rf_prediction: Outcome
    quant_decision: QuantDecision
    recommendation: Recommendation
    integration_rationale: str
    overall_score: float
    confidence: float
    degradations: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name in (
            "market_viability_score",
            "product_viability_score",
            "product_innovation_score",
            "product_market_fit_score",
            "founder_competency_score",
            "overall_score",
        ):
            object.__setattr__(self, name, _require_range(name, getattr(self, name), 1.0, 10.0))
        object.__setattr__(self, "confidence", _require_range("confidence", self.confidence, 0.0, 1.0))
        object.__setattr__(self, "fit_score", _require_range("fit_score", self.fit_score, -1.0, 1.0))
        object.__setattr__(self, "degradations", tuple(self.degradations))


def report_to_dict(report: FinalReport) -> dict:
    """FinalReport as a plain dict with stable snake_case keys."""
    return {
        "startup_name": report.startup_name,
        "market_report": report.market_report,
        "market_viability_score": report.market_viability_score,
        "product_report": report.product_report,
        "product_viability_score": report.product_viability_score,
        "product_innovation_score": report.product_innovation_score,
        "product_market_fit_score": report.product_market_fit_score,
        "founder_report": report.founder_report,
        "founder_competency_score": report.founder_competency_score,
        "segment_level": report.segment_level.level,
        "segmentation_reasoning": report.segmentation_reasoning,
        "fit_score": report.fit_score,
        "rf_prediction": int(report.rf_prediction),
        "quant_decision": report.quant_decision.to_dict(),
        "recommendation": report.recommendation.value,
        "integration_rationale": report.integration_rationale,
        "overall_score": report.overall_score,
        "confidence": report.confidence,
        "degradations": list(report.degradations),
    }


def serialize_report(report: FinalReport) -> str:
    """Emit the report as a JSON document; round-trips through deserialize_report."""
    return json.dumps(report_to_dict(report), indent=2) + "\n"


def deserialize_report(text: str) -> FinalReport:
    data = json.loads(text)
    return FinalReport(
        startup_name=data["startup_name"],
        market_report=data["market_report"],
        market_viability_score=data["market_viability_score"],
        product_report=data["product_report"],
        product_viability_score=data["product_viability_score"],
        product_innovation_score=data["product_innovation_score"],
        product_market_fit_score=data["product_market_fit_score"],
        founder_report=data["founder_report"],
        founder_competency_score=data["founder_competency_score"],
        segment_level=SegmentLevel(data["segment_level"]),
        segmentation_reasoning=data["segmentation_reasoning"],
        fit_score=data["fit_score"],
        rf_prediction=Outcome.from_any(data["rf_prediction"]),
        quant_decision=QuantDecision.from_dict(data["quant_decision"]),
        recommendation=Recommendation.from_any(data["recommendation"]),
        integration_rationale=data["integration_rationale"],
        overall_score=data["overall_score"],
        confidence=data["confidence"],
        degradations=tuple(data.get("degradations", ())),
    )
