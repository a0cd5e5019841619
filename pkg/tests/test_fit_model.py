"""Fit scoring, OLS diagnostics, and the MLP regressor.

Oracles: the OLS path is checked against a direct normal-equations solve,
and backprop is checked against central finite differences.
"""

import numpy as np
import pytest

from ssff.domain import Outcome, SegmentLevel
from ssff.fit_model import (
    DegenerateInput,
    EmbeddingPair,
    EmptyData,
    LengthMismatch,
    MLPModel,
    ShapeMismatch,
    TrainConfig,
    ZeroVector,
    build_fit_features,
    cosine_similarity,
    gradient_check,
    load_model,
    mlp_forward,
    mlp_train,
    ols_and_pearson,
    predict_fit,
    preliminary_fit_score,
    save_model,
)
from ssff.llm_gateway import mock_gateway


class TestPreliminaryFitScore:
    def test_optimal_fit(self):
        score = preliminary_fit_score(SegmentLevel(1), Outcome.SUCCESS)
        assert score.pfs == 5 and score.normalized == 1.0

    def test_worst_fit(self):
        score = preliminary_fit_score(SegmentLevel(5), Outcome.FAILURE)
        assert score.pfs == -5 and score.normalized == -1.0

    def test_hand_evaluated_cases(self):
        assert preliminary_fit_score(SegmentLevel(3), Outcome.SUCCESS).pfs == 3
        assert preliminary_fit_score(SegmentLevel(3), Outcome.SUCCESS).normalized == 0.6
        assert preliminary_fit_score(SegmentLevel(2), Outcome.FAILURE).pfs == -2
        assert preliminary_fit_score(SegmentLevel(2), Outcome.FAILURE).normalized == -0.4

    def test_exhaustive_ten_cases(self):
        # pfs ranges over +/-{1..5} and never hits 0; normalized is pfs/5.
        seen = set()
        for level in range(1, 6):
            for outcome in (Outcome.FAILURE, Outcome.SUCCESS):
                score = preliminary_fit_score(SegmentLevel(level), outcome)
                expected = (6 - level) * int(outcome) - level * (1 - int(outcome))
                assert score.pfs == expected
                assert score.normalized == expected / 5
                seen.add(score.pfs)
        assert seen == {-5, -4, -3, -2, -1, 1, 2, 3, 4, 5}


class TestCosine:
    def test_self_similarity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            v = rng.standard_normal(8)
            assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_vectors(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0
        assert cosine_similarity([1.0, 1.0], [1.0, -1.0]) == 0.0

    def test_symmetry_and_scale_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = rng.standard_normal(6)
            b = rng.standard_normal(6)
            scale = float(rng.uniform(0.1, 25.0))
            assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a), abs=1e-12)
            assert cosine_similarity(scale * a, b) == pytest.approx(
                cosine_similarity(a, b), abs=1e-9
            )

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            cosine_similarity([1.0, 2.0], [1.0])
        with pytest.raises(ZeroVector):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])


class TestOLS:
    def test_perfect_linearity(self):
        xs = np.arange(10.0)
        diagnostics = ols_and_pearson(xs, 2 * xs + 1)
        assert diagnostics.pearson_r == pytest.approx(1.0, abs=1e-12)
        assert diagnostics.r_squared == pytest.approx(1.0, abs=1e-12)
        assert diagnostics.slope == pytest.approx(2.0, abs=1e-12)
        assert diagnostics.intercept == pytest.approx(1.0, abs=1e-12)

    def test_reported_correlation_squares_consistently(self):
        # A correlation of 0.173 corresponds to an r-squared of about 0.030.
        assert 0.173**2 == pytest.approx(0.0299, abs=5e-4)
        assert round(0.173**2, 3) == 0.030

    def test_against_normal_equations_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            n = int(rng.integers(5, 60))
            xs = rng.uniform(-10, 10, size=n)
            ys = rng.uniform(-3, 3, size=n) + 0.5 * xs
            diagnostics = ols_and_pearson(xs, ys)
            design = np.column_stack([xs, np.ones(n)])
            slope, intercept = np.linalg.solve(design.T @ design, design.T @ ys)
            assert diagnostics.slope == pytest.approx(slope, abs=1e-9)
            assert diagnostics.intercept == pytest.approx(intercept, abs=1e-9)
            r_oracle = float(np.corrcoef(xs, ys)[0, 1])
            assert diagnostics.pearson_r == pytest.approx(r_oracle, abs=1e-9)

    def test_r_squared_is_r_squared(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            xs = rng.standard_normal(20)
            ys = rng.standard_normal(20)
            diagnostics = ols_and_pearson(xs, ys)
            assert abs(diagnostics.r_squared - diagnostics.pearson_r**2) <= 1e-12

    def test_degenerate_inputs(self):
        with pytest.raises(DegenerateInput):
            ols_and_pearson([1.0, 2.0], [1.0, 2.0])
        with pytest.raises(DegenerateInput):
            ols_and_pearson([3.0, 3.0, 3.0], [1.0, 2.0, 3.0])


class TestFitFeatures:
    def test_concatenation_layout(self):
        pair = EmbeddingPair.from_vectors((1.0, 0.0), (0.0, 1.0))
        np.testing.assert_array_equal(build_fit_features(pair), [1.0, 0.0, 0.0, 1.0, 0.0])

    def test_default_dimension_gives_201_features(self):
        rng = np.random.default_rng(0)
        pair = EmbeddingPair.from_vectors(rng.standard_normal(100), rng.standard_normal(100))
        assert build_fit_features(pair).shape == (201,)

    def test_identical_vectors_cosine_one(self):
        v = (0.3, -0.2, 0.9)
        assert build_fit_features(EmbeddingPair.from_vectors(v, v))[-1] == pytest.approx(1.0, abs=1e-12)

    def test_inconsistent_cosine_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingPair(startup_vec=(1.0, 0.0), founder_vec=(0.0, 1.0), cosine=0.5)


def small_model(seed=0, sizes=(6, 8, 5)):
    rng = np.random.default_rng(seed)
    model = MLPModel.initialize(input_size=sizes[0], hidden=sizes[1:], dropout=(0.0,) * (len(sizes) - 1), seed=seed)
    # Dense random weights keep preactivations away from the ReLU kink.
    for i in range(len(model.weights)):
        model.weights[i] = rng.normal(0.0, 0.6, size=model.weights[i].shape)
        model.biases[i] = rng.normal(0.0, 0.3, size=model.biases[i].shape)
    return model


class TestForward:
    def test_zero_network_outputs_zero(self):
        model = MLPModel.initialize(input_size=5, hidden=(4, 3), seed=0)
        for i in range(len(model.weights)):
            model.weights[i][:] = 0.0
            model.biases[i][:] = 0.0
        rng = np.random.default_rng(1)
        for _ in range(10):
            assert mlp_forward(model, rng.standard_normal(5)) == 0.0

    def test_inference_is_deterministic(self):
        model = MLPModel.initialize(input_size=7, hidden=(8, 4), seed=3)
        x = np.random.default_rng(5).standard_normal(7)
        assert mlp_forward(model, x, training=False) == mlp_forward(model, x, training=False)

    def test_single_neuron_hand_network(self):
        # 1 -> 1 -> 1 network: relu(w1 x + b1) * w2 + b2
        model = MLPModel(
            weights=[np.array([[2.0]]), np.array([[3.0]])],
            biases=[np.array([0.5]), np.array([-1.0])],
            dropout_rates=(0.0,),
        )
        x = np.array([1.25])
        expected = max(0.0, 2.0 * 1.25 + 0.5) * 3.0 - 1.0
        assert mlp_forward(model, x) == pytest.approx(expected, abs=1e-12)

    def test_shape_mismatch(self):
        model = MLPModel.initialize(input_size=4, seed=0)
        with pytest.raises(ShapeMismatch):
            mlp_forward(model, [1.0, 2.0])

    def test_training_mode_applies_dropout(self):
        model = MLPModel.initialize(input_size=6, hidden=(64, 32), dropout=(0.5, 0.5), seed=0)
        x = np.ones(6)
        rng_a = np.random.default_rng(1)
        rng_b = np.random.default_rng(2)
        assert mlp_forward(model, x, training=True, rng=rng_a) != mlp_forward(
            model, x, training=True, rng=rng_b
        )


class TestGradientCheck:
    def test_matches_finite_differences_on_random_models(self):
        rng = np.random.default_rng(9)
        for seed in range(10):
            model = small_model(seed=seed)
            x = rng.normal(0.0, 1.0, size=model.input_size)
            target = float(rng.uniform(-1, 1))
            assert gradient_check(model, x, target) < 1e-4

    def test_zero_model_zero_input_bias_path(self):
        model = MLPModel.initialize(input_size=3, hidden=(4, 2), seed=0)
        for i in range(len(model.weights)):
            model.weights[i][:] = 0.0
            model.biases[i][:] = 0.0
        assert gradient_check(model, np.zeros(3), target=0.7) < 1e-8

    def test_corrupted_gradient_detected(self):
        model = small_model(seed=123)
        x = np.random.default_rng(11).normal(size=model.input_size)
        assert gradient_check(model, x, target=0.3, corruption=0.05) > 1e-2


def synthetic_fit_dataset(n_rows, dim, seed):
    """Rows whose target is recoverable from the cosine feature.

    The founder vector is built as a target-weighted mix of the startup
    vector and orthogonal noise, so cosine tracks the normalized fit target.
    """
    rng = np.random.default_rng(seed)
    data = []
    for _ in range(n_rows):
        startup = rng.standard_normal(dim)
        startup /= np.linalg.norm(startup)
        pfs = int(rng.choice([-5, -4, -3, -2, -1, 1, 2, 3, 4, 5]))
        target = pfs / 5
        noise = rng.standard_normal(dim)
        noise -= noise.dot(startup) * startup
        noise /= np.linalg.norm(noise)
        founder = target * startup + np.sqrt(max(1e-9, 1 - target**2)) * noise
        pair = EmbeddingPair.from_vectors(startup, founder)
        data.append((build_fit_features(pair), target))
    return data


class TestTraining:
    def test_constant_target_fits_via_bias(self):
        rng = np.random.default_rng(21)
        data = [(rng.standard_normal(9), 0.4) for _ in range(64)]
        config = TrainConfig(learning_rate=0.03, epochs=200, batch_size=16, seed=0, validation_fraction=0.0)
        _, trace = mlp_train(data, config)
        assert trace[-1].train_mse < 1e-3

    def test_loss_trend_non_increasing_after_warmup(self):
        data = synthetic_fit_dataset(n_rows=200, dim=8, seed=3)
        _, trace = mlp_train(data, TrainConfig(epochs=120, batch_size=32, seed=1))
        losses = [entry.train_mse for entry in trace]
        warmup = np.mean(losses[10:30])
        late = np.mean(losses[-20:])
        assert late <= warmup
        assert losses[-1] < losses[0]

    def test_deterministic_under_seed(self):
        data = synthetic_fit_dataset(n_rows=80, dim=6, seed=5)
        model_a, trace_a = mlp_train(data, TrainConfig(epochs=10, seed=42))
        model_b, trace_b = mlp_train(data, TrainConfig(epochs=10, seed=42))
        assert [e.train_mse for e in trace_a] == [e.train_mse for e in trace_b]
        for wa, wb in zip(model_a.weights, model_b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_empty_data_rejected(self):
        with pytest.raises(EmptyData):
            mlp_train([], TrainConfig())

    def test_targets_outside_range_rejected(self):
        with pytest.raises(ValueError):
            mlp_train([(np.zeros(4), 1.5)], TrainConfig())


class TestPredictFit:
    def test_zero_model_predicts_zero(self, gateway):
        model = MLPModel.initialize(input_size=2 * 100 + 1, seed=0)
        for i in range(len(model.weights)):
            model.weights[i][:] = 0.0
            model.biases[i][:] = 0.0
        assert predict_fit(model, "a startup", "a founder", gateway) == 0.0

    def test_output_clamped_to_unit_interval(self, gateway):
        rng = np.random.default_rng(2)
        model = MLPModel.initialize(input_size=2 * 16 + 1, seed=1)
        for i in range(len(model.weights)):
            model.weights[i] = rng.normal(0, 4.0, size=model.weights[i].shape)
        for text_seed in range(20):
            value = predict_fit(model, f"startup {text_seed}", f"founder {text_seed}", gateway)
            assert -1.0 <= value <= 1.0


def test_checkpoint_round_trip(tmp_path):
    model = small_model(seed=8)
    path = tmp_path / "fit.json"
    save_model(model, path)
    loaded = load_model(path)
    assert loaded.layer_sizes == model.layer_sizes
    assert loaded.dropout_rates == model.dropout_rates
    for wa, wb in zip(model.weights, loaded.weights):
        np.testing.assert_array_equal(wa, wb)
    x = np.random.default_rng(0).standard_normal(model.input_size)
    assert mlp_forward(loaded, x) == mlp_forward(model, x)
