"""Multi-agent startup evaluation pipeline.

Submodules:
    domain             shared value types and report serialization
    llm_gateway        provider access, templating, parsing, caching, mocks
    prompts            the stage prompt templates
    segmentation       founder quality levels and outcome statistics
    fit_model          founder-idea fit scoring and the MLP regressor
    rf_predictor       categorical extraction and the random forest
    external_knowledge retrieval-augmented market research
    analyst_pipeline   end-to-end orchestration
    eval_harness       experiment harness and metrics
    cli                command-line entry points
"""

__version__ = "0.1.0"
