"""Sampling, runners, bias metrics, Welch tests, and result files.

Oracle: two-sided p-values are checked against direct numeric integration of
the t density (Simpson rule, log-gamma normalization), independent of the
incomplete-beta path used by the implementation.
"""

import json
import math

import numpy as np
import pytest

from ssff.analyst_pipeline import PipelineConfig
from ssff.domain import Outcome
from ssff.eval_harness import (
    DegenerateInput,
    EvalConfig,
    InsufficientClass,
    MetricAlgebraError,
    ParseError,
    bias_metrics,
    confusion_from_metrics,
    emit_results,
    group_stats,
    load_dataset,
    run_baseline,
    run_ssff,
    stratified_sample,
    welch_t_test,
)
from ssff.external_knowledge import MockSearchClient
from ssff.llm_gateway import mock_gateway
from ssff.cli import toy_dataset_path


def t_density_p_value_oracle(t, df, grid=200001, span=400.0):
    """Two-sided tail mass of the t distribution by Simpson integration."""
    log_c = (
        math.lgamma((df + 1) / 2.0)
        - math.lgamma(df / 2.0)
        - 0.5 * math.log(df * math.pi)
    )
    xs = np.linspace(abs(t), abs(t) + span, grid)
    log_pdf = log_c - ((df + 1) / 2.0) * np.log1p(xs**2 / df)
    pdf = np.exp(log_pdf)
    h = xs[1] - xs[0]
    weights = np.ones(grid)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    tail = float((h / 3.0) * np.dot(weights, pdf))
    return 2.0 * tail


def write_jsonl(path, rows):
    with open(path, "w") as handle:
        for row in rows:
            handle.write(json.dumps(row) + "\n")
    return path


VALID_ROW = {
    "name": "A",
    "description": "does things",
    "founders": ["a founder bio"],
    "label": 1,
}


class TestLoadDataset:
    def test_three_valid_lines(self, tmp_path):
        rows = [dict(VALID_ROW, name=f"s{i}", label=i % 2) for i in range(3)]
        entries = load_dataset(write_jsonl(tmp_path / "d.jsonl", rows))
        assert len(entries) == 3
        assert entries[0].entry_id == "0000"

    def test_missing_label_names_line(self, tmp_path):
        rows = [VALID_ROW, {k: v for k, v in VALID_ROW.items() if k != "label"}]
        with pytest.raises(ParseError) as excinfo:
            load_dataset(write_jsonl(tmp_path / "d.jsonl", rows))
        assert excinfo.value.line == 2

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(json.dumps(VALID_ROW) + "\n{broken\n")
        with pytest.raises(ParseError) as excinfo:
            load_dataset(path)
        assert excinfo.value.line == 2

    def test_empty_file_gives_empty_list(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text("")
        assert load_dataset(path) == []

    def test_optional_precomputed_level(self, tmp_path):
        entries = load_dataset(write_jsonl(tmp_path / "d.jsonl", [dict(VALID_ROW, level=4)]))
        assert entries[0].precomputed_level.level == 4

    def test_bundled_toy_dataset_shape(self):
        entries = load_dataset(toy_dataset_path())
        assert len(entries) == 50
        assert sum(int(e.label) for e in entries) == 10


class TestStratifiedSample:
    def make_entries(self, tmp_path, n_success=30, n_failure=70):
        rows = [dict(VALID_ROW, name=f"s{i}", label=1) for i in range(n_success)]
        rows += [dict(VALID_ROW, name=f"f{i}", label=0) for i in range(n_failure)]
        return load_dataset(write_jsonl(tmp_path / "d.jsonl", rows))

    def test_default_stratification_counts(self, tmp_path):
        entries = self.make_entries(tmp_path)
        sample = stratified_sample(entries, EvalConfig(seed=3))
        assert len(sample) == 50
        assert sum(int(e.label) for e in sample) == 10

    def test_same_seed_same_sample(self, tmp_path):
        entries = self.make_entries(tmp_path)
        sample_a = stratified_sample(entries, EvalConfig(seed=5))
        sample_b = stratified_sample(entries, EvalConfig(seed=5))
        assert [e.entry_id for e in sample_a] == [e.entry_id for e in sample_b]

    def test_no_duplicates(self, tmp_path):
        entries = self.make_entries(tmp_path)
        for seed in range(5):
            sample = stratified_sample(entries, EvalConfig(seed=seed))
            ids = [e.entry_id for e in sample]
            assert len(ids) == len(set(ids))

    def test_insufficient_class(self, tmp_path):
        entries = self.make_entries(tmp_path, n_success=5)
        with pytest.raises(InsufficientClass):
            stratified_sample(entries, EvalConfig(n_success=10, n_failure=40))


class TestRunners:
    def sample(self, tmp_path, n=10):
        # trailing "end" keeps descriptions from being substrings of each other
        rows = [
            dict(VALID_ROW, name=f"s{i}", description=f"unique product number {i} end", label=int(i < n // 5))
            for i in range(n)
        ]
        return load_dataset(write_jsonl(tmp_path / "d.jsonl", rows))

    def test_baseline_always_successful_mock(self, tmp_path):
        entries = self.sample(tmp_path, n=50)
        config = EvalConfig(n_success=10, n_failure=40, seed=1, mode="baseline")
        sample = stratified_sample(entries, config)
        gateway = mock_gateway(
            rules=(
                (
                    "predict whether this startup will succeed",
                    '{"outcome": "Successful", "probability": 0.9, "reasoning": "r"}',
                ),
            )
        )
        result = run_baseline(sample, gateway, config)
        truth = [p.label for p in result.predictions]
        preds = [p.prediction for p in result.predictions]
        from ssff.rf_predictor import classification_report

        report = classification_report(truth, preds)
        assert report.per_class[1].recall == 1.0
        assert report.per_class[1].precision == 0.2
        assert report.accuracy == 0.2

    def test_baseline_oracle_mock_scores_perfectly(self, tmp_path):
        entries = self.sample(tmp_path, n=20)
        config = EvalConfig(n_success=4, n_failure=16, seed=0, mode="baseline")
        sample = stratified_sample(entries, config)
        by_description = {e.record.description: e.label for e in sample}

        def oracle(prompt):
            for description, label in by_description.items():
                if description in prompt:
                    outcome = "Successful" if label == Outcome.SUCCESS else "Unsuccessful"
                    return json.dumps({"outcome": outcome, "probability": 0.5, "reasoning": "oracle"})
            raise AssertionError("unknown entry in prompt")

        gateway = mock_gateway(rules=(("predict whether this startup will succeed", oracle),))
        result = run_baseline(sample, gateway, config)
        assert all(p.prediction == p.label for p in result.predictions)

    def test_baseline_unparseable_counts_as_success_and_flagged(self, tmp_path):
        entries = self.sample(tmp_path, n=10)
        config = EvalConfig(n_success=2, n_failure=8, seed=0, mode="baseline")
        sample = stratified_sample(entries, config)
        gateway = mock_gateway(rules=(("predict whether this startup will succeed", "gibberish"),))
        result = run_baseline(sample, gateway, config)
        assert all(p.prediction == Outcome.SUCCESS for p in result.predictions)
        assert all(p.flagged for p in result.predictions)

    def test_ssff_run_produces_reports(self, tmp_path):
        entries = self.sample(tmp_path, n=10)
        config = EvalConfig(n_success=2, n_failure=3, seed=2, mode="ssff")
        sample = stratified_sample(entries, config)
        pipeline_config = PipelineConfig(
            gateway=mock_gateway(seed=2), search_client=MockSearchClient(seed=2), seed=2
        )
        result = run_ssff(sample, pipeline_config, config)
        assert len(result.predictions) == 5
        assert len(result.reports) == 5

    def test_ssff_single_failure_does_not_abort(self, tmp_path):
        entries = self.sample(tmp_path, n=10)
        config = EvalConfig(n_success=2, n_failure=3, seed=2, mode="ssff")
        sample = stratified_sample(entries, config)
        poison = sample[0].record.description

        # Sabotage the market agent for exactly one entry; its description
        # appears in that prompt, so only that pipeline run fails.
        pipeline_config = PipelineConfig(
            gateway=mock_gateway(
                seed=2,
                rules=(
                    (
                        lambda p: "Your focus is on the market side" in p and poison in p,
                        "no numeric conclusion here",
                    ),
                ),
            ),
            search_client=MockSearchClient(seed=2),
            seed=2,
        )
        result = run_ssff(sample, pipeline_config, config)
        failures = [p for p in result.predictions if p.failure is not None]
        assert len(failures) == 1
        assert len(result.completed()) == 4

    def test_runners_consume_identical_samples_for_equal_seeds(self, tmp_path):
        entries = self.sample(tmp_path, n=60)
        config_a = EvalConfig(n_success=5, n_failure=20, seed=9, mode="baseline")
        config_b = EvalConfig(n_success=5, n_failure=20, seed=9, mode="ssff")
        ids_a = [e.entry_id for e in stratified_sample(entries, config_a)]
        ids_b = [e.entry_id for e in stratified_sample(entries, config_b)]
        assert ids_a == ids_b


class TestBiasMetrics:
    def test_all_positive_predictor(self):
        y_true = [1] * 10 + [0] * 40
        metrics = bias_metrics(y_true, [1] * 50)
        assert metrics.false_positive_rate == 1.0
        assert metrics.predicted_positive_fraction == 1.0
        assert metrics.over_prediction_index == 0.8

    def test_perfect_predictor(self):
        y_true = [1] * 10 + [0] * 40
        assert bias_metrics(y_true, y_true).over_prediction_index == 0.0

    def test_reported_metrics_imply_fraction(self):
        # recall 1.0 with precision 0.2128 on a 10/40 sample puts 47 of 50
        # entries in the predicted-positive bucket.
        tp, fp, tn, fn = confusion_from_metrics(1.00, 0.2128, 0.26, 50, 10)
        y_true = [1] * 10 + [0] * 40
        y_pred = [1] * tp + [0] * fn + [1] * fp + [0] * tn
        metrics = bias_metrics(y_true, y_pred)
        assert metrics.predicted_positive_fraction == 47 / 50


class TestConfusionFromMetrics:
    def test_first_reference_triple(self):
        assert confusion_from_metrics(1.00, 0.2128, 0.26, 50, 10) == (10, 37, 3, 0)

    def test_second_reference_triple(self):
        assert confusion_from_metrics(0.90, 0.2727, 0.50, 50, 10) == (9, 24, 16, 1)

    def test_inconsistent_triple_rejected(self):
        with pytest.raises(MetricAlgebraError):
            confusion_from_metrics(1.00, 0.2128, 0.80, 50, 10)


class TestWelch:
    def test_identical_samples(self):
        sample = [1.0, 2.0, 3.5, 4.0]
        t, p = welch_t_test(sample, sample)
        assert t == 0.0
        assert abs(p - 1.0) <= 1e-9

    def test_far_separated_samples(self):
        a = [0.0, 0.1, 0.2, 0.05, 0.15]
        b = [10.0, 10.1, 10.2, 10.05, 10.15]
        t, p = welch_t_test(a, b)
        assert p < 0.001

    def test_against_integration_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            a = rng.normal(0.0, 1.0, size=int(rng.integers(4, 30)))
            b = rng.normal(rng.uniform(-1.5, 1.5), rng.uniform(0.5, 2.0), size=int(rng.integers(4, 30)))
            t, p = welch_t_test(a, b)
            se_a = np.var(a, ddof=1) / len(a)
            se_b = np.var(b, ddof=1) / len(b)
            df = (se_a + se_b) ** 2 / (se_a**2 / (len(a) - 1) + se_b**2 / (len(b) - 1))
            assert p == pytest.approx(t_density_p_value_oracle(t, df), abs=1e-6)

    def test_symmetric_in_sign(self):
        a = [1.0, 2.0, 3.0, 2.5]
        b = [4.0, 5.0, 6.0, 5.5]
        t_ab, p_ab = welch_t_test(a, b)
        t_ba, p_ba = welch_t_test(b, a)
        assert t_ab == -t_ba
        assert p_ab == pytest.approx(p_ba, abs=1e-12)

    def test_degenerate_inputs(self):
        with pytest.raises(DegenerateInput):
            welch_t_test([1.0], [1.0, 2.0])
        with pytest.raises(DegenerateInput):
            welch_t_test([2.0, 2.0], [3.0, 3.0])

    def test_group_stats_handles_degenerate(self):
        stats = group_stats([1.0, 1.0], [1.0, 1.0], "a", "b")
        assert stats.t_statistic is None and stats.p_value is None
        assert stats.groups["a"].n == 2


class TestEmitResults:
    def run_once(self, tmp_path, seed=4):
        rows = [
            dict(VALID_ROW, name=f"s{i}", description=f"unique widget line {i}", label=int(i < 10))
            for i in range(50)
        ]
        entries = load_dataset(write_jsonl(tmp_path / "d.jsonl", rows))
        config = EvalConfig(n_success=6, n_failure=14, seed=seed, mode="ssff")
        sample = stratified_sample(entries, config)
        pipeline_config = PipelineConfig(
            gateway=mock_gateway(seed=seed), search_client=MockSearchClient(seed=seed), seed=seed
        )
        return run_ssff(sample, pipeline_config, config)

    def test_all_declared_files_exist_and_parse(self, tmp_path):
        result = self.run_once(tmp_path)
        out = tmp_path / "out"
        written = emit_results([result], out)
        names = {path.name for path in written}
        assert {"metrics.json", "predictions.csv", "table.txt"} <= names
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["runs"][0]["mode"] == "ssff"
        assert "classification" in metrics["runs"][0]
        assert (out / "dist_overall_score.csv").exists()
        assert (out / "dist_confidence.csv").exists()
        assert (out / "dist_founder_competency_score.csv").exists()
        assert (out / "dist_fit_score.csv").exists()

    def test_csv_headers_stable(self, tmp_path):
        result = self.run_once(tmp_path)
        out = tmp_path / "out"
        emit_results([result], out)
        header = (out / "predictions.csv").read_text().splitlines()[0]
        assert header == (
            "entry_id,mode,model_id,name,label,prediction,probability,flagged,"
            "overall_score,confidence,recommendation,fit_score,segment_level,founder_competency_score"
        )
        dist_header = (out / "dist_overall_score.csv").read_text().splitlines()[0]
        assert dist_header == "entry_id,value,label,recommendation"

    def test_table_mirrors_model_accuracy_rows(self, tmp_path):
        result = self.run_once(tmp_path)
        out = tmp_path / "out"
        emit_results([result], out)
        table = (out / "table.txt").read_text().splitlines()
        assert table[0].split() == ["Model", "Accuracy"]
        assert any("SSFF (gpt-4o-mini)" in line for line in table)

    def test_group_stats_emitted_for_both_groupings(self, tmp_path):
        result = self.run_once(tmp_path)
        summary = json.loads((emit_results([result], tmp_path / "o")[0]).read_text())["runs"][0]
        stats = summary.get("group_stats", {})
        assert any(key.endswith("_by_label") for key in stats)
        assert any(key.endswith("_by_recommendation") for key in stats)
