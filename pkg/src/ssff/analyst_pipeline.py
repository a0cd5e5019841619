"""End-to-end orchestration of a single startup evaluation.

Stages: scout categorization, then external knowledge and founder
segmentation, then the three specialist agents (market / product / founder)
running concurrently on disjoint slices of the scout record, then the
prediction models (categorical forest, fit regressor), and finally the
integration and quantitative decision agents. Every stage's raw inputs and
outputs land in an append-only audit trail.
"""

from __future__ import annotations

import json
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from ssff import prompts
from ssff.domain import (
    FinalReport,
    FounderProfile,
    Outcome,
    QuantDecision,
    Recommendation,
    SegmentLevel,
    StartupRecord,
    validate_startup,
)
from ssff.external_knowledge import (
    KnowledgeConfig,
    MarketResearchReport,
    NO_KNOWLEDGE_MARKER,
    research,
)
from ssff.fit_model import MLPModel, predict_fit
from ssff.llm_gateway import ChatRequest, Gateway, SchemaField, render
from ssff.rf_predictor import (
    CATEGORY_FIELDS,
    CategoricalFeatures,
    Forest,
    ForestConfig,
    encode,
    extract_categories,
    predict,
    train_forest,
)
from ssff.segmentation import segment_founder


class ScoreUnparseable(ValueError):
    def __init__(self, label: str, text: str):
        self.label = label
        super().__init__(f"no usable {label} score (1..10) in response: {text[:120]!r}")


class RecommendationUnparseable(ValueError):
    def __init__(self, missing: str, text: str):
        self.missing = missing
        super().__init__(f"integration response missing {missing}: {text[:120]!r}")


class StageError(RuntimeError):
    """Wraps the first hard failure with the stage where it happened."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


# ---------------------------------------------------------------------------
# Audit trail
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditRecord:
    stage: str
    data: Mapping[str, Any]


class AuditTrail:
    """Append-only record of stage inputs/outputs; safe for concurrent writers."""

    def __init__(self) -> None:
        self._entries: list[AuditRecord] = []
        self._lock = threading.Lock()

    def record(self, stage: str, data: Mapping[str, Any]) -> None:
        with self._lock:
            self._entries.append(AuditRecord(stage=stage, data=dict(data)))

    @property
    def entries(self) -> list[AuditRecord]:
        with self._lock:
            return list(self._entries)

    def for_stage(self, stage: str) -> list[AuditRecord]:
        return [entry for entry in self.entries if entry.stage == stage]

    def write_dir(self, directory: str | Path) -> None:
        path = Path(directory)
        path.mkdir(parents=True, exist_ok=True)
        for entry in sorted(self.entries, key=lambda e: e.stage):
            (path / f"{entry.stage}.json").write_text(
                json.dumps({"stage": entry.stage, **entry.data}, indent=2, sort_keys=True) + "\n"
            )


# ---------------------------------------------------------------------------
# Scout categorization (14 categorical + 4 descriptive fields)
# ---------------------------------------------------------------------------

DESCRIPTIVE_FIELDS = ("name", "description", "regulatory_approvals", "patents")

# Disjoint slices of the categorical record handed to the specialists; the
# founder agent sees founder profiles only.
MARKET_FIELDS = (
    "industry_growth",
    "market_size",
    "development_pace",
    "market_adaptability",
    "timing",
    "funding_amount",
    "valuation_change",
    "investor_backing",
    "sentiment_analysis",
)
PRODUCT_FIELDS = (
    "product_market_fit",
    "innovation_mentions",
    "cutting_edge_technology",
    "reviews_testimonials",
    "execution_capabilities",
)


@dataclass(frozen=True)
class ScoutCategorization:
    """The 18-field scout record: 14 enumerated categories plus descriptions."""

    categories: CategoricalFeatures
    name: str = ""
    description: str = ""
    regulatory_approvals: str = ""
    patents: str = ""

    def market_info(self) -> str:
        lines = [f"{name}: {getattr(self.categories, name)}" for name in MARKET_FIELDS]
        return "\n".join(lines)

    def product_info(self) -> str:
        lines = [f"{name}: {getattr(self.categories, name)}" for name in PRODUCT_FIELDS]
        if self.regulatory_approvals:
            lines.append(f"regulatory_approvals: {self.regulatory_approvals}")
        if self.patents:
            lines.append(f"patents: {self.patents}")
        return "\n".join(lines)


def scout(
    startup: StartupRecord,
    gateway: Gateway,
    model_id: str = "gpt-4o-mini",
    audit: AuditTrail | None = None,
) -> ScoutCategorization:
    """Single LLM call producing the 18-field categorization.

    Categorical fields fall back to Mismatch when invalid; descriptive fields
    are lenient and default to empty text.
    """
    startup_info = (
        f"Name: {startup.name}\nDescription: {startup.description}\n"
        f"Founders:\n{startup.founders_text()}"
    )
    request = ChatRequest(
        system_prompt=prompts.DEFAULT_SYSTEM_PROMPT,
        user_prompt=render(prompts.VC_SCOUT, {"startup_info": startup_info}),
        model_id=model_id,
    )
    from ssff.llm_gateway import extract_first_json

    response = gateway.complete(request)
    data = extract_first_json(response) or {}
    categorization = ScoutCategorization(
        categories=CategoricalFeatures.from_mapping(data, lenient=True),
        name=str(data.get("name", "") or ""),
        description=str(data.get("description", "") or ""),
        regulatory_approvals=str(data.get("regulatory_approvals", "") or ""),
        patents=str(data.get("patents", "") or ""),
    )
    if audit is not None:
        audit.record(
            "scout",
            {
                "prompt": request.user_prompt,
                "response": response,
                "parsed": {**categorization.categories.to_mapping(),
                           **{f: getattr(categorization, f) for f in DESCRIPTIVE_FIELDS}},
            },
        )
    return categorization


# ---------------------------------------------------------------------------
# Specialist agents
# ---------------------------------------------------------------------------


class AgentKind(Enum):
    MARKET = "Market"
    PRODUCT = "Product"
    FOUNDER = "Founder"


@dataclass(frozen=True)
class AgentReport:
    kind: AgentKind
    text: str
    scores: Mapping[str, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "scores", dict(self.scores))
        for label, value in self.scores.items():
            if not 1.0 <= value <= 10.0:
                raise ValueError(f"{self.kind.value} score {label}={value} outside 1..10")


_JSON_NUMBER = (int, float)


def parse_labeled_score(text: str, label: str, allow_generic: bool = True) -> float:
    """First matching 1..10 score for ``label``.

    Accepts, in priority order: a JSON field whose key contains the label,
    'label ... X[/10]' phrasing, and (unless ``allow_generic`` is off because
    several labeled scores share one response) a bare 'score: X' or 'X/10'.
    """
    from ssff.llm_gateway import extract_first_json

    candidates: list[float] = []
    data = extract_first_json(text)
    key = label.lower().replace(" ", "_")
    if isinstance(data, dict):
        for k, v in data.items():
            if key in str(k).lower() and isinstance(v, _JSON_NUMBER) and not isinstance(v, bool):
                candidates.append(float(v))
    label_re = re.compile(re.escape(label) + r"[^0-9]{0,40}?(\d+(?:\.\d+)?)", re.IGNORECASE)
    candidates.extend(float(m) for m in label_re.findall(text))
    if allow_generic:
        candidates.extend(
            float(m) for m in re.findall(r"score[^0-9]{0,10}(\d+(?:\.\d+)?)", text, re.IGNORECASE)
        )
        candidates.extend(float(m) for m in re.findall(r"(\d+(?:\.\d+)?)\s*/\s*10", text))
    for value in candidates:
        if 1.0 <= value <= 10.0:
            return value
    raise ScoreUnparseable(label, text)


def _complete_with_score_retry(
    gateway: Gateway,
    request: ChatRequest,
    labels: Sequence[str],
) -> tuple[str, dict[str, float]]:
    """Run a request and parse all labeled scores, retrying once with a nudge."""
    allow_generic = len(labels) == 1
    text = gateway.complete(request)
    try:
        return text, {
            label: parse_labeled_score(text, label, allow_generic) for label in labels
        }
    except ScoreUnparseable as exc:
        corrective = ChatRequest(
            system_prompt=request.system_prompt,
            user_prompt=request.user_prompt
            + f"\n\nYour previous reply lacked a parseable score. Restate your conclusion "
            f"including a line '{exc.label} score: <number between 1 and 10>/10'.",
            model_id=request.model_id,
        )
        text = gateway.complete(corrective)
        return text, {
            label: parse_labeled_score(text, label, allow_generic) for label in labels
        }


def run_market_agent(
    startup: StartupRecord,
    market_info: str,
    keywords: str,
    external_knowledge: str,
    gateway: Gateway,
    model_id: str = "gpt-4o-mini",
    audit: AuditTrail | None = None,
) -> AgentReport:
    startup_info = f"Name: {startup.name}\nDescription: {startup.description}"
    request = ChatRequest(
        system_prompt=prompts.DEFAULT_SYSTEM_PROMPT,
        user_prompt=render(
            prompts.MARKET_AGENT,
            {
                "startup_info": startup_info,
                "market_info": market_info,
                "keywords": keywords,
                "external_knowledge": external_knowledge,
            },
        ),
        model_id=model_id,
    )
    text, scores = _complete_with_score_retry(gateway, request, ["market viability"])
    report = AgentReport(kind=AgentKind.MARKET, text=text, scores=scores)
    if audit is not None:
        audit.record("market_agent", {"prompt": request.user_prompt, "response": text, "scores": dict(scores)})
    return report


def run_product_agent(
    startup: StartupRecord,
    product_info: str,
    external_knowledge: str,
    gateway: Gateway,
    model_id: str = "gpt-4o-mini",
    audit: AuditTrail | None = None,
) -> AgentReport:
    startup_info = f"Name: {startup.name}\nDescription: {startup.description}"
    request = ChatRequest(
        system_prompt=prompts.DEFAULT_SYSTEM_PROMPT,
        user_prompt=render(
            prompts.PRODUCT_AGENT,
            {
                "startup_info": startup_info,
                "product_info": product_info,
                "external_knowledge": external_knowledge,
            },
        ),
        model_id=model_id,
    )
    text, scores = _complete_with_score_retry(
        gateway, request, ["product potential", "innovation", "market fit"]
    )
    report = AgentReport(kind=AgentKind.PRODUCT, text=text, scores=scores)
    if audit is not None:
        audit.record("product_agent", {"prompt": request.user_prompt, "response": text, "scores": dict(scores)})
    return report


def run_founder_agent(
    founders: Sequence[FounderProfile],
    gateway: Gateway,
    model_id: str = "gpt-4o-mini",
    audit: AuditTrail | None = None,
) -> AgentReport:
    if not founders:
        raise ValueError("founder agent needs at least one founder")
    founder_info = "\n\n".join(
        f"Founder {i}:\n{founder.describe()}" for i, founder in enumerate(founders, start=1)
    )
    request = ChatRequest(
        system_prompt=prompts.DEFAULT_SYSTEM_PROMPT,
        user_prompt=render(prompts.FOUNDER_AGENT, {"founder_info": founder_info}),
        model_id=model_id,
    )
    text, scores = _complete_with_score_retry(gateway, request, ["competency"])
    report = AgentReport(kind=AgentKind.FOUNDER, text=text, scores=scores)
    if audit is not None:
        audit.record("founder_agent", {"prompt": request.user_prompt, "response": text, "scores": dict(scores)})
    return report


# ---------------------------------------------------------------------------
# Integration and quantitative decision
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IntegrationDecision:
    recommendation: Recommendation
    rationale: str
    overall_score: float
    confidence: float

    def __post_init__(self) -> None:
        if not 1.0 <= self.overall_score <= 10.0:
            raise ValueError(f"overall_score {self.overall_score} outside 1..10")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside 0..1")


_RECOMMENDATION_RE = re.compile(r"\b(Invest|Hold)\b", re.IGNORECASE)
_OVERALL_RE = re.compile(r"overall\s+score[^0-9]{0,15}(\d+(?:\.\d+)?)", re.IGNORECASE)
_SLASH10_RE = re.compile(r"(\d+(?:\.\d+)?)\s*/\s*10")
_CONFIDENCE_RE = re.compile(r"confidence[^0-9]{0,15}(\d+(?:\.\d+)?)\s*(%?)", re.IGNORECASE)
_RATIONALE_RE = re.compile(r"rationale\s*:\s*(.+)", re.IGNORECASE | re.DOTALL)


def parse_integration(text: str) -> IntegrationDecision:
    """Pull recommendation, overall score, confidence, rationale from prose.

    The first match of each pattern wins; agents are asked for a fixed
    trailer but the parser tolerates free-form phrasing.
    """
    rec_match = _RECOMMENDATION_RE.search(text)
    if rec_match is None:
        raise RecommendationUnparseable("recommendation", text)
    recommendation = Recommendation.from_any(rec_match.group(1))

    overall_match = _OVERALL_RE.search(text) or _SLASH10_RE.search(text)
    if overall_match is None:
        raise RecommendationUnparseable("overall_score", text)
    overall = float(overall_match.group(1))
    if not 1.0 <= overall <= 10.0:
        raise RecommendationUnparseable("overall_score", text)

    confidence_match = _CONFIDENCE_RE.search(text)
    if confidence_match is None:
        raise RecommendationUnparseable("confidence", text)
    confidence = float(confidence_match.group(1))
    if confidence_match.group(2) == "%":
        confidence /= 100.0
    if not 0.0 <= confidence <= 1.0:
        raise RecommendationUnparseable("confidence", text)

    rationale_match = _RATIONALE_RE.search(text)
    rationale = rationale_match.group(1).strip() if rationale_match else text.strip()
    return IntegrationDecision(
        recommendation=recommendation,
        rationale=rationale,
        overall_score=overall,
        confidence=confidence,
    )


def integrate(
    market: AgentReport,
    product: AgentReport,
    founder: AgentReport,
    fit: float,
    segmentation: SegmentLevel,
    rf_prediction: Outcome,
    gateway: Gateway,
    model_id: str = "gpt-4o-mini",
    audit: AuditTrail | None = None,
) -> IntegrationDecision:
    """Chief-analyst synthesis of the three reports and the model outputs."""
    request = ChatRequest(
        system_prompt=prompts.DEFAULT_SYSTEM_PROMPT,
        user_prompt=render(
            prompts.INTEGRATION,
            {
                "market_info": f"{market.scores['market viability']}/10 - {market.text}",
                "product_info": f"{product.scores['product potential']}/10 - {product.text}",
                "founder_info": f"{founder.scores['competency']}/10 - {founder.text}",
                "founder_idea_fit": f"{fit:.4f}",
                "founder_segmentation": str(segmentation),
                "rf_prediction": "Successful" if rf_prediction == Outcome.SUCCESS else "Unsuccessful",
            },
        ),
        model_id=model_id,
    )
    text = gateway.complete(request)
    decision = parse_integration(text)
    if audit is not None:
        audit.record(
            "integration",
            {
                "prompt": request.user_prompt,
                "response": text,
                "parsed": {
                    "recommendation": decision.recommendation.value,
                    "overall_score": decision.overall_score,
                    "confidence": decision.confidence,
                },
            },
        )
    return decision


QUANT_SCHEMA = (
    SchemaField("outcome", allowed=("Successful", "Unsuccessful")),
    SchemaField("probability", numeric_range=(0.0, 1.0)),
    SchemaField("reasoning"),
)


def quant_decide(
    rf_prediction: Outcome,
    segmentation: SegmentLevel,
    fit: float,
    gateway: Gateway,
    model_id: str = "gpt-4o-mini",
    audit: AuditTrail | None = None,
) -> QuantDecision:
    """Numbers-only decision from (forest prediction, level, fit score)."""
    if not -1.0 <= fit <= 1.0:
        raise ValueError(f"fit score {fit} outside [-1, 1]")
    request = ChatRequest(
        system_prompt=prompts.DEFAULT_SYSTEM_PROMPT,
        user_prompt=render(
            prompts.QUANT_DECISION,
            {
                "rf_prediction": "Successful" if rf_prediction == Outcome.SUCCESS else "Unsuccessful",
                "founder_segmentation": str(segmentation),
                "founder_idea_fit": f"{fit:.4f}",
            },
        ),
        model_id=model_id,
    )
    parsed = gateway.complete_json(request, QUANT_SCHEMA)
    decision = QuantDecision(
        outcome=Outcome.from_any(parsed["outcome"]),
        probability=parsed["probability"],
        reasoning=" ".join(str(parsed["reasoning"]).split()),
    )
    if audit is not None:
        audit.record(
            "quant_decision",
            {"prompt": request.user_prompt, "response": json.dumps(parsed), "parsed": decision.to_dict()},
        )
    return decision


# ---------------------------------------------------------------------------
# Default prediction models
# ---------------------------------------------------------------------------

DEFAULT_EMBED_DIM = 100


def _synthetic_training_rows(seed: int, n_rows: int = 160):
    """Deterministic encoded rows with a learnable label rule.

    Used only as a fallback so the pipeline can run without trained models.
    """
    rng = np.random.default_rng(seed)
    enum_sizes = [len(options) for options in CATEGORY_FIELDS.values()]
    X = []
    y = []
    for _ in range(n_rows):
        row = [int(rng.integers(0, size + 1)) for size in enum_sizes]
        signal = (row[0] == 2) + (row[1] == 2) + (row[9] == 2) + (row[4] == 2)
        label = int(signal + rng.normal(0.0, 0.8) > 1.5)
        X.append(row)
        y.append(label)
    if len(set(y)) < 2:  # force both classes just in case
        y[0], y[1] = 0, 1
    return X, y


def default_forest(seed: int = 0) -> Forest:
    X, y = _synthetic_training_rows(seed)
    return train_forest(X, y, ForestConfig(n_trees=50, max_depth=6, seed=seed))


def default_fit_model(seed: int = 0) -> MLPModel:
    return MLPModel.initialize(input_size=2 * DEFAULT_EMBED_DIM + 1, seed=seed)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass
class PipelineConfig:
    """Everything a single evaluation run needs."""

    gateway: Gateway
    search_client: Any = None  # None disables external knowledge
    knowledge: KnowledgeConfig = field(default_factory=KnowledgeConfig)
    forest: Forest | None = None
    fit_model: MLPModel | None = None
    model_ids: Mapping[str, str] = field(default_factory=dict)
    default_model_id: str = "gpt-4o-mini"
    seed: int = 0
    max_workers: int = 3

    def model_for(self, stage: str) -> str:
        return dict(self.model_ids).get(stage, self.default_model_id)

    def ensure_models(self) -> None:
        """Fill in deterministic fallback models derived from the seed."""
        if self.forest is None:
            self.forest = default_forest(self.seed)
        if self.fit_model is None:
            self.fit_model = default_fit_model(self.seed)


def _merged_founder_profile(startup: StartupRecord) -> FounderProfile:
    if len(startup.founders) == 1:
        return startup.founders[0]
    return FounderProfile(raw_text=startup.founders_text())


def _gather_knowledge(startup: StartupRecord, config: PipelineConfig, audit: AuditTrail):
    """Returns (keywords_text, knowledge_text, report_or_none, degradations)."""
    if config.search_client is None:
        audit.record("external_knowledge", {"status": "disabled", "marker": NO_KNOWLEDGE_MARKER})
        return "(no research keywords)", NO_KNOWLEDGE_MARKER, None, ["no external knowledge"]
    try:
        keywords, results, report = research(
            startup.description,
            config.gateway,
            config.search_client,
            config.knowledge,
            model_id=config.model_for("research"),
        )
    except Exception as exc:  # soft failure: downstream agents get the marker
        audit.record("external_knowledge", {"status": "failed", "error": str(exc)})
        return "(no research keywords)", NO_KNOWLEDGE_MARKER, None, [f"external knowledge failed: {exc}"]
    audit.record(
        "external_knowledge",
        {
            "status": "ok",
            "keywords": list(keywords.keywords),
            "n_results": len(results),
            "report": report.text,
            "citations": list(report.citations),
        },
    )
    return keywords.joined(), report.text, report, []


def run_pipeline(
    startup: StartupRecord,
    config: PipelineConfig,
    audit: AuditTrail | None = None,
) -> FinalReport:
    """Run every stage and assemble the final report.

    Hard failures abort with a stage-tagged error; soft failures (missing
    external knowledge, Mismatch fills) degrade gracefully and are listed in
    the report's ``degradations``.
    """
    audit = audit if audit is not None else AuditTrail()
    config.ensure_models()
    gateway = config.gateway
    degradations: list[str] = []

    def _stage(name: str, call):
        try:
            return call()
        except Exception as exc:
            raise StageError(name, exc) from exc

    record = _stage("validate", lambda: validate_startup(startup))
    audit.record("validate", {"startup": record.name, "n_founders": len(record.founders)})

    scout_record = _stage(
        "scout", lambda: scout(record, gateway, config.model_for("scout"), audit=audit)
    )

    with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
        knowledge_future = pool.submit(_gather_knowledge, record, config, audit)
        segmentation_future = pool.submit(
            segment_founder, _merged_founder_profile(record), gateway, config.model_for("segmentation")
        )
        keywords_text, knowledge_text, _, knowledge_degradations = _stage(
            "external_knowledge", knowledge_future.result
        )
        segmentation_result = _stage("segmentation", segmentation_future.result)
    degradations.extend(knowledge_degradations)
    audit.record(
        "segmentation",
        {"level": str(segmentation_result.level), "response": segmentation_result.raw_response},
    )

    with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
        market_future = pool.submit(
            run_market_agent,
            record,
            scout_record.market_info(),
            keywords_text,
            knowledge_text,
            gateway,
            config.model_for("market"),
            audit,
        )
        product_future = pool.submit(
            run_product_agent,
            record,
            scout_record.product_info(),
            knowledge_text,
            gateway,
            config.model_for("product"),
            audit,
        )
        founder_future = pool.submit(
            run_founder_agent, record.founders, gateway, config.model_for("founder"), audit
        )
        market_report = _stage("market_agent", market_future.result)
        product_report = _stage("product_agent", product_future.result)
        founder_report = _stage("founder_agent", founder_future.result)

    categories = _stage(
        "categorical_features",
        lambda: extract_categories(record, gateway, config.model_for("scout")),
    )
    if all(value == "Mismatch" for value in categories.to_mapping().values()):
        degradations.append("categorical extraction fell back to all-Mismatch")
    encoded = encode(categories)
    rf_outcome, vote_fraction = _stage("rf_prediction", lambda: predict(config.forest, encoded))
    audit.record(
        "rf_prediction",
        {"features": categories.to_mapping(), "encoded": list(encoded),
         "prediction": int(rf_outcome), "vote_fraction": vote_fraction},
    )

    fit_value = _stage(
        "fit_score",
        lambda: predict_fit(
            config.fit_model, record.description, record.founders_text(), gateway
        ),
    )
    audit.record("fit_score", {"fit": fit_value})

    integration = _stage(
        "integration",
        lambda: integrate(
            market_report,
            product_report,
            founder_report,
            fit_value,
            segmentation_result.level,
            rf_outcome,
            gateway,
            config.model_for("integration"),
            audit,
        ),
    )
    quant = _stage(
        "quant_decision",
        lambda: quant_decide(
            rf_outcome,
            segmentation_result.level,
            fit_value,
            gateway,
            config.model_for("quant"),
            audit,
        ),
    )

    report = FinalReport(
        startup_name=record.name,
        market_report=market_report.text,
        market_viability_score=market_report.scores["market viability"],
        product_report=product_report.text,
        product_viability_score=product_report.scores["product potential"],
        product_innovation_score=product_report.scores["innovation"],
        product_market_fit_score=product_report.scores["market fit"],
        founder_report=founder_report.text,
        founder_competency_score=founder_report.scores["competency"],
        segment_level=segmentation_result.level,
        segmentation_reasoning=segmentation_result.raw_response,
        fit_score=fit_value,
        rf_prediction=rf_outcome,
        quant_decision=quant,
        recommendation=integration.recommendation,
        integration_rationale=integration.rationale,
        overall_score=integration.overall_score,
        confidence=integration.confidence,
        degradations=tuple(degradations),
    )
    from ssff.domain import report_to_dict

    audit.record("final_report", {"report": report_to_dict(report)})
    return report
