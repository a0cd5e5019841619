"""Command-line front door.

Commands: analyze, train-rf, train-fit, evaluate, segment, research.
Exit codes: 0 success, 1 input/validation problems, 2 provider failures.
Secrets come only from the environment (LLM_API_KEY, LLM_BASE_URL,
SEARCH_API_KEY); a JSON config file supplies defaults and flags win.
"""

from __future__ import annotations

import json
import os
import sys
from importlib import resources
from pathlib import Path

import click

from ssff.analyst_pipeline import AuditTrail, PipelineConfig, StageError, run_pipeline
from ssff.domain import (
    FounderProfile,
    Outcome,
    StartupRecord,
    ValidationError,
    serialize_report,
)
from ssff.eval_harness import (
    EvalConfig,
    ParseError,
    emit_results,
    load_dataset,
    run_baseline,
    run_ssff,
    stratified_sample,
)
from ssff.external_knowledge import (
    EmptyKeywords,
    EmptyResults,
    HttpSearchClient,
    KnowledgeConfig,
    MockSearchClient,
    QuotaExceeded,
    research,
)
from ssff.fit_model import (
    TrainConfig,
    build_fit_features,
    EmbeddingPair,
    gradient_check,
    mlp_train,
    preliminary_fit_score,
    save_model,
    write_loss_csv,
)
from ssff.llm_gateway import (
    EmbeddingRequest,
    Gateway,
    GatewayError,
    ProviderConfig,
    http_gateway,
    mock_gateway,
)
from ssff.rf_predictor import (
    CategoricalFeatures,
    ForestConfig,
    SingleClass,
    classification_report,
    encode,
    predict_many,
    save_forest,
    stratified_split,
    train_forest,
)
from ssff.segmentation import UnparseableLevel, segment_founder
from ssff.domain import SegmentLevel

EXIT_VALIDATION = 1
EXIT_PROVIDER = 2

_INPUT_ERRORS = (ValidationError, ParseError, ValueError, OSError, json.JSONDecodeError)
_PROVIDER_ERRORS = (GatewayError, QuotaExceeded, EmptyKeywords, EmptyResults, UnparseableLevel)


def toy_dataset_path() -> Path:
    """Path of the bundled 50-entry example dataset (10 successes, 40 failures)."""
    return Path(str(resources.files("ssff").joinpath("data/toy_startups.jsonl")))


def _load_config_file(path: str | None) -> dict:
    if path is None:
        default = Path("ssff.json")
        if default.exists():
            path = str(default)
        else:
            return {}
    return json.loads(Path(path).read_text())


def _build_gateway(cfg: dict, mock: bool, seed: int) -> Gateway:
    if mock:
        return mock_gateway(seed=seed)
    llm_cfg = cfg.get("llm", {})
    api_key = os.environ.get("LLM_API_KEY", "")
    if not api_key:
        raise ValidationError("real mode requires the LLM_API_KEY environment variable (or use --mock)")
    base_url = os.environ.get("LLM_BASE_URL") or llm_cfg.get("base_url") or "https://api.openai.com/v1"
    provider = ProviderConfig(
        base_url=base_url,
        api_key=api_key,
        timeout=float(llm_cfg.get("timeout", 60.0)),
        retry_count=int(llm_cfg.get("retry_count", 2)),
        cache_dir=llm_cfg.get("cache_dir"),
    )
    return http_gateway(provider, embedding_model=llm_cfg.get("embedding_model", "text-embedding-3-large"))


def _build_search_client(cfg: dict, mock: bool, no_search: bool, seed: int):
    if no_search:
        return None
    if mock:
        return MockSearchClient(seed=seed)
    search_cfg = cfg.get("search", {})
    api_key = os.environ.get("SEARCH_API_KEY", "")
    base_url = search_cfg.get("base_url", "https://serpapi.com/search")
    if not api_key:
        return None  # silently degrade; the pipeline marks the report
    return HttpSearchClient(base_url=base_url, api_key=api_key)


def _pipeline_config(cfg: dict, gateway: Gateway, search_client, seed: int, model_id: str | None) -> PipelineConfig:
    knowledge_cfg = cfg.get("search", {})
    return PipelineConfig(
        gateway=gateway,
        search_client=search_client,
        knowledge=KnowledgeConfig(
            n_results=int(knowledge_cfg.get("n_results", 10)),
            blocklist=tuple(knowledge_cfg.get("blocklist", ())),
        ),
        model_ids=dict(cfg.get("models", {})),
        default_model_id=model_id or cfg.get("models", {}).get("default", "gpt-4o-mini"),
        seed=seed,
    )


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main() -> None:
    """Startup evaluation pipeline: analysis, prediction models, experiments."""


@main.command()
@click.argument("input_file", type=click.Path())
@click.option("--config", "config_path", default=None, help="JSON config file (default: ./ssff.json if present).")
@click.option("--mock", is_flag=True, help="Use offline mock providers.")
@click.option("--no-search", is_flag=True, help="Disable external knowledge retrieval.")
@click.option("--seed", default=0, show_default=True, help="Seed for mock providers and fallback models.")
@click.option("--model", "model_id", default=None, help="Default chat model id.")
@click.option("--out", "out_dir", default="runs/analyze", show_default=True, help="Run output directory.")
def analyze(input_file, config_path, mock, no_search, seed, model_id, out_dir):
    """Evaluate one startup (JSON document) and write the final report."""
    try:
        cfg = _load_config_file(config_path)
        record = StartupRecord.from_dict(json.loads(Path(input_file).read_text()))
        gateway = _build_gateway(cfg, mock, seed)
        search_client = _build_search_client(cfg, mock, no_search, seed)
        pipeline_config = _pipeline_config(cfg, gateway, search_client, seed, model_id)
    except _INPUT_ERRORS as exc:
        _fail(str(exc), EXIT_VALIDATION)
        return

    audit = AuditTrail()
    try:
        report = run_pipeline(record, pipeline_config, audit=audit)
    except StageError as exc:
        if isinstance(exc.cause, _PROVIDER_ERRORS):
            _fail(str(exc), EXIT_PROVIDER)
        _fail(str(exc), EXIT_VALIDATION)
        return

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "final_report.json").write_text(serialize_report(report))
    audit.write_dir(out / "audit")

    rows = [
        ("Recommendation", report.recommendation.value),
        ("Overall score", f"{report.overall_score}/10"),
        ("Confidence", f"{report.confidence}"),
        ("Quant outcome", f"{report.quant_decision.outcome.name.title()} (p={report.quant_decision.probability})"),
        ("Market viability", f"{report.market_viability_score}/10"),
        ("Product viability", f"{report.product_viability_score}/10"),
        ("Founder competency", f"{report.founder_competency_score}/10"),
        ("Segmentation", str(report.segment_level)),
        ("Founder-idea fit", f"{report.fit_score:.4f}"),
    ]
    click.echo(f"Analysis of {report.startup_name}")
    for label, value in rows:
        click.echo(f"  {label:<20} {value}")
    if report.degradations:
        click.echo("  Degradations: " + "; ".join(report.degradations))
    click.echo(f"Report written to {out / 'final_report.json'}")


@main.command("train-rf")
@click.argument("data_file", type=click.Path())
@click.option("--n-trees", default=100, show_default=True)
@click.option("--max-depth", default=None, type=int)
@click.option("--features-per-split", default=4, show_default=True)
@click.option("--test-fraction", default=0.2, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", default="runs/train-rf", show_default=True)
def train_rf(data_file, n_trees, max_depth, features_per_split, test_fraction, seed, out_dir):
    """Train the categorical forest from JSONL feature/label rows."""
    try:
        X, y = [], []
        with open(data_file, "r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                data = json.loads(line)
                features = CategoricalFeatures.from_mapping(data, lenient=True)
                X.append(encode(features))
                y.append(Outcome.from_any(data["label"]))
        if not X:
            raise ValidationError("training file contains no rows")
        X_train, X_test, y_train, y_test = stratified_split(X, y, test_fraction=test_fraction, seed=seed)
        config = ForestConfig(
            n_trees=n_trees,
            max_depth=max_depth,
            features_per_split=features_per_split,
            seed=seed,
        )
        forest = train_forest(X_train, y_train, config)
    except (SingleClass, *_INPUT_ERRORS) as exc:
        _fail(str(exc), EXIT_VALIDATION)
        return

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_forest(forest, out / "forest.json")
    predictions, _ = predict_many(forest, X_test)
    if X_test and len({int(v) for v in y_test}) == 2:
        report = classification_report(y_test, predictions)
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        (out / "report.txt").write_text(report.to_text() + "\n")
        click.echo(report.to_text())
    click.echo(f"Model written to {out / 'forest.json'} ({len(X_train)} train / {len(X_test)} test rows)")


@main.command("train-fit")
@click.argument("data_file", type=click.Path())
@click.option("--mock", is_flag=True, help="Use offline mock embeddings for text rows.")
@click.option("--dimension", default=100, show_default=True, help="Embedding dimension for text rows.")
@click.option("--lr", default=1e-2, show_default=True)
@click.option("--epochs", default=200, show_default=True)
@click.option("--batch-size", default=32, show_default=True)
@click.option("--val-fraction", default=0.2, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--grad-check", is_flag=True, help="Verify backprop against finite differences.")
@click.option("--config", "config_path", default=None)
@click.option("--out", "out_dir", default="runs/train-fit", show_default=True)
def train_fit(data_file, mock, dimension, lr, epochs, batch_size, val_fraction, seed, grad_check, config_path, out_dir):
    """Train the fit regressor from (texts or embeddings, level, outcome) rows."""
    try:
        cfg = _load_config_file(config_path)
        rows = []
        with open(data_file, "r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    rows.append(json.loads(line))
        if not rows:
            raise ValidationError("training file contains no rows")
        needs_gateway = any("startup_vec" not in row for row in rows)
        gateway = _build_gateway(cfg, mock, seed) if needs_gateway else None

        data = []
        for row in rows:
            if "startup_vec" in row:
                pair = EmbeddingPair.from_vectors(row["startup_vec"], row["founder_vec"])
            else:
                startup_vec = gateway.embed(EmbeddingRequest(text=row["startup_text"], dimension=dimension))
                founder_vec = gateway.embed(EmbeddingRequest(text=row["founder_text"], dimension=dimension))
                pair = EmbeddingPair.from_vectors(startup_vec, founder_vec)
            target = preliminary_fit_score(
                SegmentLevel(int(row["level"])), Outcome.from_any(row["outcome"])
            ).normalized
            data.append((build_fit_features(pair), target))
        train_config = TrainConfig(
            learning_rate=lr,
            epochs=epochs,
            batch_size=batch_size,
            seed=seed,
            validation_fraction=val_fraction,
        )
        model, trace = mlp_train(data, train_config)
    except GatewayError as exc:
        _fail(str(exc), EXIT_PROVIDER)
        return
    except _INPUT_ERRORS as exc:
        _fail(str(exc), EXIT_VALIDATION)
        return

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "fit_model.json")
    write_loss_csv(trace, out / "loss.csv")
    final = trace[-1]
    click.echo(f"Final train MSE {final.train_mse:.6f}, validation MSE {final.val_mse:.6f}")
    if grad_check:
        features, target = data[0]
        error = gradient_check(model, features, target)
        click.echo(f"Gradient check max relative error: {error:.3e}")
    click.echo(f"Checkpoint written to {out / 'fit_model.json'}")


@main.command()
@click.argument("dataset", type=click.Path(), required=False)
@click.option("--mode", type=click.Choice(["baseline", "ssff"]), default="ssff", show_default=True)
@click.option("--n-success", default=10, show_default=True)
@click.option("--n-failure", default=40, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--mock", is_flag=True, help="Use offline mock providers.")
@click.option("--no-search", is_flag=True)
@click.option("--model", "model_id", default=None)
@click.option("--config", "config_path", default=None)
@click.option("--out", "out_dir", default="runs/evaluate", show_default=True)
def evaluate(dataset, mode, n_success, n_failure, seed, mock, no_search, model_id, config_path, out_dir):
    """Run the experiment harness on a labeled JSONL dataset."""
    try:
        cfg = _load_config_file(config_path)
        dataset_path = Path(dataset) if dataset else toy_dataset_path()
        entries = load_dataset(dataset_path)
        eval_config = EvalConfig(
            n_success=n_success,
            n_failure=n_failure,
            seed=seed,
            mode=mode,
            model_id=model_id or cfg.get("models", {}).get("default", "gpt-4o-mini"),
        )
        sample = stratified_sample(entries, eval_config)
        gateway = _build_gateway(cfg, mock, seed)
    except _INPUT_ERRORS as exc:
        _fail(str(exc), EXIT_VALIDATION)
        return

    try:
        if mode == "baseline":
            result = run_baseline(sample, gateway, eval_config)
        else:
            search_client = _build_search_client(cfg, mock, no_search, seed)
            pipeline_config = _pipeline_config(cfg, gateway, search_client, seed, eval_config.model_id)
            result = run_ssff(sample, pipeline_config, eval_config)
    except GatewayError as exc:
        _fail(str(exc), EXIT_PROVIDER)
        return

    written = emit_results([result], out_dir)
    completed = result.completed()
    if completed:
        accuracy = sum(1 for p in completed if int(p.prediction) == int(p.label)) / len(completed)
        click.echo(f"{mode} accuracy on {len(completed)} entries: {accuracy:.2%}")
    for path in written:
        click.echo(f"wrote {path}")


@main.command()
@click.argument("profile_file", type=click.Path())
@click.option("--mock", is_flag=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--model", "model_id", default="gpt-4o-mini", show_default=True)
@click.option("--config", "config_path", default=None)
def segment(profile_file, mock, seed, model_id, config_path):
    """Classify one founder profile (text file) into L1..L5."""
    try:
        cfg = _load_config_file(config_path)
        text = Path(profile_file).read_text().strip()
        profile = FounderProfile(raw_text=text)
        gateway = _build_gateway(cfg, mock, seed)
    except _INPUT_ERRORS as exc:
        _fail(str(exc), EXIT_VALIDATION)
        return
    try:
        result = segment_founder(profile, gateway, model_id=model_id)
    except _PROVIDER_ERRORS as exc:
        _fail(str(exc), EXIT_PROVIDER)
        return
    click.echo(str(result.level))


@main.command("research")
@click.argument("description_file", type=click.Path())
@click.option("--mock", is_flag=True)
@click.option("--n-results", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--model", "model_id", default="gpt-4o-mini", show_default=True)
@click.option("--config", "config_path", default=None)
def research_cmd(description_file, mock, n_results, seed, model_id, config_path):
    """Run the market research chain on a startup description (text file)."""
    try:
        cfg = _load_config_file(config_path)
        description = Path(description_file).read_text().strip()
        if not description:
            raise ValidationError("description file is empty")
        gateway = _build_gateway(cfg, mock, seed)
        client = _build_search_client(cfg, mock, no_search=False, seed=seed)
        if client is None:
            raise ValidationError("no search provider configured (set SEARCH_API_KEY or use --mock)")
    except _INPUT_ERRORS as exc:
        _fail(str(exc), EXIT_VALIDATION)
        return
    try:
        keywords, results, report = research(
            description, gateway, client, KnowledgeConfig(n_results=n_results), model_id=model_id
        )
    except _PROVIDER_ERRORS as exc:
        _fail(str(exc), EXIT_PROVIDER)
        return
    click.echo(f"Keywords: {keywords.joined()}")
    click.echo(report.text)
    if report.quantitative_points:
        click.echo("Quantitative points:")
        for point in report.quantitative_points:
            click.echo(f"  - {point}")
    click.echo("Citations:")
    for url in report.citations:
        click.echo(f"  - {url}")


if __name__ == "__main__":
    main()
