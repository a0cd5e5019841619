"""Experiment harness: stratified sampling, baseline and full-pipeline runs,
classification and bias metrics, Welch t-tests, and result file emission."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import betainc

from ssff import prompts
from ssff.analyst_pipeline import PipelineConfig, run_pipeline
from ssff.domain import (
    FinalReport,
    Outcome,
    Recommendation,
    SegmentLevel,
    StartupRecord,
    report_to_dict,
)
from ssff.llm_gateway import ChatRequest, FieldInvalid, Gateway, NoJsonFound, render
from ssff.rf_predictor import ClassificationReport, classification_report


class ParseError(ValueError):
    def __init__(self, line: int, reason: str):
        self.line = line
        super().__init__(f"line {line}: {reason}")


class InsufficientClass(ValueError):
    def __init__(self, label: Outcome, available: int, requested: int):
        self.label = label
        super().__init__(
            f"need {requested} entries labeled {label.name}, only {available} available"
        )


class DegenerateInput(ValueError):
    pass


class MetricAlgebraError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetEntry:
    entry_id: str
    record: StartupRecord
    label: Outcome
    precomputed_level: SegmentLevel | None = None


def load_dataset(path: str | Path) -> list[DatasetEntry]:
    """Parse a JSONL dataset; every line must carry a label.

    Malformed lines raise ParseError naming the line; an empty file yields an
    empty list.
    """
    entries: list[DatasetEntry] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                data = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(data, dict):
                raise ParseError(line_no, "entry must be a JSON object")
            if data.get("label") is None:
                raise ParseError(line_no, "missing label")
            try:
                record = StartupRecord.from_dict(data)
                label = Outcome.from_any(data["label"])
                level = SegmentLevel(int(data["level"])) if "level" in data else None
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(line_no, str(exc)) from exc
            entries.append(
                DatasetEntry(
                    entry_id=f"{line_no - 1:04d}",
                    record=record,
                    label=label,
                    precomputed_level=level,
                )
            )
    return entries


@dataclass(frozen=True)
class EvalConfig:
    n_success: int = 10
    n_failure: int = 40
    seed: int = 0
    mode: str = "ssff"  # "baseline" or "ssff"
    model_id: str = "gpt-4o-mini"
    parallelism: int = 4

    def __post_init__(self) -> None:
        if self.n_success + self.n_failure < 2:
            raise ValueError("sample must contain at least 2 entries")
        if self.mode not in ("baseline", "ssff"):
            raise ValueError(f"unknown mode {self.mode!r}")


def stratified_sample(entries: Sequence[DatasetEntry], config: EvalConfig) -> list[DatasetEntry]:
    """Seeded sample of exactly n_success successes and n_failure failures.

    Sampling is uniform without replacement within each class; the combined
    sample is then shuffled.
    """
    successes = [e for e in entries if e.label == Outcome.SUCCESS]
    failures = [e for e in entries if e.label == Outcome.FAILURE]
    if len(successes) < config.n_success:
        raise InsufficientClass(Outcome.SUCCESS, len(successes), config.n_success)
    if len(failures) < config.n_failure:
        raise InsufficientClass(Outcome.FAILURE, len(failures), config.n_failure)
    rng = np.random.default_rng(config.seed)
    picked_success = [successes[i] for i in rng.choice(len(successes), config.n_success, replace=False)]
    picked_failure = [failures[i] for i in rng.choice(len(failures), config.n_failure, replace=False)]
    combined = picked_success + picked_failure
    return [combined[i] for i in rng.permutation(len(combined))]


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EntryPrediction:
    entry_id: str
    name: str
    label: Outcome
    prediction: Outcome | None
    probability: float | None
    flagged: bool = False
    failure: str | None = None


@dataclass
class RunResult:
    mode: str
    model_id: str
    seed: int
    predictions: list[EntryPrediction]
    reports: dict[str, FinalReport] = field(default_factory=dict)

    def completed(self) -> list[EntryPrediction]:
        return [p for p in self.predictions if p.prediction is not None]


BASELINE_SCHEMA = None  # assigned below to avoid import-order noise


def _baseline_one(entry: DatasetEntry, gateway: Gateway, model_id: str) -> EntryPrediction:
    from ssff.analyst_pipeline import QUANT_SCHEMA

    request = ChatRequest(
        system_prompt=prompts.DEFAULT_SYSTEM_PROMPT,
        user_prompt=render(
            prompts.BASELINE_ZERO_SHOT,
            {
                "founder_info": entry.record.founders_text(),
                "startup_description": entry.record.description,
            },
        ),
        model_id=model_id,
    )
    try:
        parsed = gateway.complete_json(request, QUANT_SCHEMA)
    except (NoJsonFound, FieldInvalid):
        # Unparseable output is counted as a predicted success and flagged;
        # this documents the optimistic failure direction instead of hiding it.
        return EntryPrediction(
            entry_id=entry.entry_id,
            name=entry.record.name,
            label=entry.label,
            prediction=Outcome.SUCCESS,
            probability=None,
            flagged=True,
        )
    return EntryPrediction(
        entry_id=entry.entry_id,
        name=entry.record.name,
        label=entry.label,
        prediction=Outcome.from_any(parsed["outcome"]),
        probability=parsed["probability"],
    )


def run_baseline(
    sample: Sequence[DatasetEntry],
    gateway: Gateway,
    config: EvalConfig,
) -> RunResult:
    """Zero-shot outcome prediction per entry from founder info + description."""
    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        predictions = list(
            pool.map(lambda e: _baseline_one(e, gateway, config.model_id), sample)
        )
    predictions.sort(key=lambda p: p.entry_id)
    return RunResult(mode="baseline", model_id=config.model_id, seed=config.seed, predictions=predictions)


def _ssff_one(entry: DatasetEntry, pipeline_config: PipelineConfig) -> tuple[EntryPrediction, FinalReport | None]:
    try:
        report = run_pipeline(entry.record, pipeline_config)
    except Exception as exc:
        return (
            EntryPrediction(
                entry_id=entry.entry_id,
                name=entry.record.name,
                label=entry.label,
                prediction=None,
                probability=None,
                failure=str(exc),
            ),
            None,
        )
    return (
        EntryPrediction(
            entry_id=entry.entry_id,
            name=entry.record.name,
            label=entry.label,
            prediction=report.quant_decision.outcome,
            probability=report.quant_decision.probability,
        ),
        report,
    )


def run_ssff(
    sample: Sequence[DatasetEntry],
    pipeline_config: PipelineConfig,
    config: EvalConfig,
) -> RunResult:
    """Full pipeline per entry; the prediction is the quantitative outcome.

    Per-entry failures are recorded and the run continues.
    """
    pipeline_config.ensure_models()
    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        outcomes = list(pool.map(lambda e: _ssff_one(e, pipeline_config), sample))
    predictions = [p for p, _ in outcomes]
    reports = {p.entry_id: r for p, r in outcomes if r is not None}
    predictions.sort(key=lambda p: p.entry_id)
    return RunResult(
        mode="ssff",
        model_id=config.model_id,
        seed=config.seed,
        predictions=predictions,
        reports=reports,
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BiasMetrics:
    false_positive_rate: float
    predicted_positive_fraction: float
    over_prediction_index: float


def bias_metrics(y_true: Sequence[Outcome | int], y_pred: Sequence[Outcome | int]) -> BiasMetrics:
    """Over-prediction measures: FPR, predicted-positive share, and their excess."""
    truth = [int(v) for v in y_true]
    preds = [int(v) for v in y_pred]
    if len(truth) != len(preds) or not truth:
        raise ValueError("y_true and y_pred must be equal-length and non-empty")
    n = len(truth)
    fp = sum(1 for t, p in zip(truth, preds) if t == 0 and p == 1)
    tn = sum(1 for t, p in zip(truth, preds) if t == 0 and p == 0)
    predicted_positive = sum(preds) / n
    true_positive_fraction = sum(truth) / n
    return BiasMetrics(
        false_positive_rate=fp / (fp + tn) if (fp + tn) else 0.0,
        predicted_positive_fraction=predicted_positive,
        over_prediction_index=predicted_positive - true_positive_fraction,
    )


def welch_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Welch's unequal-variance t statistic with a two-sided p-value.

    The p-value comes from the regularized incomplete beta form of the
    t-distribution CDF evaluated at the Welch-Satterthwaite degrees of
    freedom.
    """
    xs = np.asarray(a, dtype=float)
    ys = np.asarray(b, dtype=float)
    if len(xs) < 2 or len(ys) < 2:
        raise DegenerateInput("each sample needs at least 2 observations")
    var_a = float(np.var(xs, ddof=1))
    var_b = float(np.var(ys, ddof=1))
    if var_a == 0.0 and var_b == 0.0:
        raise DegenerateInput("both samples have zero variance")
    se_a = var_a / len(xs)
    se_b = var_b / len(ys)
    t = (float(xs.mean()) - float(ys.mean())) / math.sqrt(se_a + se_b)
    df = (se_a + se_b) ** 2 / (
        se_a**2 / (len(xs) - 1) + se_b**2 / (len(ys) - 1)
    )
    if t == 0.0:
        return 0.0, 1.0
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return t, p


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    variance: float
    n: int


@dataclass(frozen=True)
class GroupStats:
    """Two-group summary plus the Welch comparison between them."""

    groups: Mapping[str, SummaryStats]
    t_statistic: float | None
    p_value: float | None

    def __post_init__(self) -> None:
        object.__setattr__(self, "groups", dict(self.groups))
        if self.p_value is not None and not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p_value outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "groups": {
                name: {"mean": s.mean, "variance": s.variance, "n": s.n}
                for name, s in sorted(self.groups.items())
            },
            "t_statistic": self.t_statistic,
            "p_value": self.p_value,
        }


def group_stats(values_a: Sequence[float], values_b: Sequence[float], name_a: str, name_b: str) -> GroupStats:
    def _summary(values: Sequence[float]) -> SummaryStats:
        arr = np.asarray(values, dtype=float)
        variance = float(np.var(arr, ddof=1)) if len(arr) >= 2 else 0.0
        return SummaryStats(mean=float(arr.mean()) if len(arr) else float("nan"), variance=variance, n=len(arr))

    try:
        t, p = welch_t_test(values_a, values_b)
    except DegenerateInput:
        t, p = None, None
    return GroupStats(
        groups={name_a: _summary(values_a), name_b: _summary(values_b)},
        t_statistic=t,
        p_value=p,
    )


def confusion_from_metrics(
    recall: float,
    precision: float,
    accuracy: float,
    n_total: int,
    n_positive: int,
    tolerance: float = 0.02,
) -> tuple[int, int, int, int]:
    """Solve integer confusion cells (tp, fp, tn, fn) from reported metrics.

    Raises MetricAlgebraError when no consistent integer matrix exists within
    the tolerance, which makes this usable as a consistency check on
    published metric triples.
    """
    tp_raw = recall * n_positive
    tp = round(tp_raw)
    if abs(tp_raw - tp) > tolerance * n_positive:
        raise MetricAlgebraError(f"recall {recall} does not yield an integer tp for P={n_positive}")
    if precision <= 0.0:
        raise MetricAlgebraError("precision must be positive to invert")
    predicted_positive_raw = tp / precision
    predicted_positive = round(predicted_positive_raw)
    if abs(predicted_positive_raw - predicted_positive) > tolerance * n_total:
        raise MetricAlgebraError(
            f"precision {precision} does not yield an integer predicted-positive count"
        )
    fp = predicted_positive - tp
    tn = n_total - n_positive - fp
    fn = n_positive - tp
    if min(tp, fp, tn, fn) < 0:
        raise MetricAlgebraError("metrics imply a negative confusion cell")
    implied_accuracy = (tp + tn) / n_total
    if abs(implied_accuracy - accuracy) > 0.005:
        raise MetricAlgebraError(
            f"implied accuracy {implied_accuracy:.4f} inconsistent with reported {accuracy:.4f}"
        )
    return tp, fp, tn, fn


# ---------------------------------------------------------------------------
# Result emission
# ---------------------------------------------------------------------------

PREDICTIONS_HEADER = (
    "entry_id,mode,model_id,name,label,prediction,probability,flagged,"
    "overall_score,confidence,recommendation,fit_score,segment_level,founder_competency_score"
)

DIST_HEADER = "entry_id,value,label,recommendation"


def _run_label(result: RunResult) -> str:
    prefix = "Baseline" if result.mode == "baseline" else "SSFF"
    return f"{prefix} ({result.model_id})"


def summarize_run(result: RunResult) -> dict:
    """Metrics dictionary for one run: classification, bias, group statistics."""
    completed = result.completed()
    truth = [p.label for p in completed]
    preds = [p.prediction for p in completed]
    summary: dict[str, Any] = {
        "mode": result.mode,
        "model_id": result.model_id,
        "seed": result.seed,
        "n_entries": len(result.predictions),
        "n_completed": len(completed),
        "n_failures": len(result.predictions) - len(completed),
        "n_flagged": sum(1 for p in result.predictions if p.flagged),
    }
    if truth and len(set(int(t) for t in truth)) == 2:
        report = classification_report(truth, preds)
        summary["classification"] = report.to_dict()
        bias = bias_metrics(truth, preds)
        summary["bias"] = {
            "false_positive_rate": bias.false_positive_rate,
            "predicted_positive_fraction": bias.predicted_positive_fraction,
            "over_prediction_index": bias.over_prediction_index,
        }
    comparisons: dict[str, Any] = {}

    def _by_label(values: dict[str, float]) -> tuple[list[float], list[float]]:
        lookup = {p.entry_id: p.label for p in completed}
        zeros = [v for eid, v in values.items() if lookup.get(eid) == Outcome.FAILURE]
        ones = [v for eid, v in values.items() if lookup.get(eid) == Outcome.SUCCESS]
        return zeros, ones

    probability_values = {
        p.entry_id: p.probability for p in completed if p.probability is not None
    }
    if probability_values:
        zeros, ones = _by_label(probability_values)
        if len(zeros) >= 2 and len(ones) >= 2:
            comparisons["probability_by_label"] = group_stats(zeros, ones, "label_0", "label_1").to_dict()

    if result.reports:
        metric_getters = {
            "overall_score": lambda r: r.overall_score,
            "confidence": lambda r: r.confidence,
            "founder_competency_score": lambda r: r.founder_competency_score,
            "fit_score": lambda r: r.fit_score,
        }
        label_lookup = {p.entry_id: p.label for p in completed}
        for metric, getter in metric_getters.items():
            by_label_0 = [getter(r) for eid, r in result.reports.items() if label_lookup.get(eid) == Outcome.FAILURE]
            by_label_1 = [getter(r) for eid, r in result.reports.items() if label_lookup.get(eid) == Outcome.SUCCESS]
            if len(by_label_0) >= 2 and len(by_label_1) >= 2:
                comparisons[f"{metric}_by_label"] = group_stats(
                    by_label_0, by_label_1, "label_0", "label_1"
                ).to_dict()
            hold = [getter(r) for r in result.reports.values() if r.recommendation == Recommendation.HOLD]
            invest = [getter(r) for r in result.reports.values() if r.recommendation == Recommendation.INVEST]
            if len(hold) >= 2 and len(invest) >= 2:
                comparisons[f"{metric}_by_recommendation"] = group_stats(
                    hold, invest, "Hold", "Invest"
                ).to_dict()
    if comparisons:
        summary["group_stats"] = comparisons
    return summary


def _format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_results(results: Sequence[RunResult], out_dir: str | Path) -> list[Path]:
    """Write metrics.json, predictions.csv, dist_*.csv, and table.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    metrics_path = out / "metrics.json"
    metrics_path.write_text(
        json.dumps({"runs": [summarize_run(r) for r in results]}, indent=2, sort_keys=True) + "\n"
    )
    written.append(metrics_path)

    predictions_path = out / "predictions.csv"
    with open(predictions_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(PREDICTIONS_HEADER.split(","))
        for result in results:
            for p in result.predictions:
                report = result.reports.get(p.entry_id)
                writer.writerow(
                    [
                        p.entry_id,
                        result.mode,
                        result.model_id,
                        p.name,
                        int(p.label),
                        "" if p.prediction is None else int(p.prediction),
                        _format_cell(p.probability),
                        int(p.flagged),
                        _format_cell(report.overall_score if report else None),
                        _format_cell(report.confidence if report else None),
                        report.recommendation.value if report else "",
                        _format_cell(report.fit_score if report else None),
                        report.segment_level.level if report else "",
                        _format_cell(report.founder_competency_score if report else None),
                    ]
                )
    written.append(predictions_path)

    dist_getters = {
        "overall_score": lambda r: r.overall_score,
        "confidence": lambda r: r.confidence,
        "founder_competency_score": lambda r: r.founder_competency_score,
        "fit_score": lambda r: r.fit_score,
    }
    for metric, getter in dist_getters.items():
        rows = []
        for result in results:
            label_lookup = {p.entry_id: p.label for p in result.predictions}
            if result.mode == "baseline" and metric == "confidence":
                for p in result.predictions:
                    if p.probability is not None:
                        rows.append([p.entry_id, repr(p.probability), int(p.label), ""])
            for entry_id in sorted(result.reports):
                report = result.reports[entry_id]
                rows.append(
                    [
                        entry_id,
                        repr(getter(report)),
                        int(label_lookup[entry_id]),
                        report.recommendation.value,
                    ]
                )
        if not rows:
            continue
        dist_path = out / f"dist_{metric}.csv"
        with open(dist_path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(DIST_HEADER.split(","))
            writer.writerows(rows)
        written.append(dist_path)

    table_path = out / "table.txt"
    lines = [f"{'Model':<36} {'Accuracy':>9}", "-" * 46]
    for result in results:
        completed = result.completed()
        if completed:
            accuracy = sum(
                1 for p in completed if int(p.prediction) == int(p.label)
            ) / len(completed)
            lines.append(f"{_run_label(result):<36} {accuracy:>8.2%}")
        else:
            lines.append(f"{_run_label(result):<36} {'n/a':>9}")
    table_path.write_text("\n".join(lines) + "\n")
    written.append(table_path)
    return written
