import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from agilesd.estimators import (
    AACPTTuner,
    FlowSimulator,
    MarkovThroughputModel,
    check_betas,
    check_network_features,
    configs_to_features,
)
from agilesd.markov_model import CcaParams, ModelError, NetworkConfig, average_throughput

X = np.array(
    [
        [80_000, 0.01, 8.0, 4, 1e-6],
        [80_000, 0.01, 8.0, 16, 1e-5],
    ]
)


def test_feature_validation():
    configs = check_network_features(X)
    assert configs[1].buffer_packets == 16
    np.testing.assert_array_equal(configs_to_features(configs), X)
    with pytest.raises(ValueError):
        check_network_features(X[:, :4])
    with pytest.raises(ValueError):
        check_network_features([[80_000, 0.01, 8.0, 4.5, 0.0]])
    with pytest.raises(ModelError):
        check_network_features([[80_000, 0.01, 8.0, 4, -1.0]])


def test_check_betas():
    np.testing.assert_array_equal(check_betas([[0.5], [0.6]]), [0.5, 0.6])
    with pytest.raises(ValueError):
        check_betas([0.5, 1.0])


class TestMarkovThroughputModel:
    def test_params_round_trip(self):
        est = MarkovThroughputModel(lambda_max=3, iterations=500)
        assert est.get_params()["lambda_max"] == 3
        twin = clone(est).set_params(beta=0.7)
        assert twin.beta == 0.7 and est.beta == 0.5

    def test_predict_matches_function(self):
        est = MarkovThroughputModel(iterations=800).fit()
        pred = est.predict(X)
        for row, value in zip(check_network_features(X), pred):
            assert value == average_throughput(row, CcaParams(), 800).normalized_ath

    def test_requires_fit(self):
        with pytest.raises(NotFittedError):
            MarkovThroughputModel().predict(X)

    def test_bad_hyperparameters(self):
        with pytest.raises(ModelError):
            MarkovThroughputModel(beta=1.5).fit()

    def test_score_against_itself(self):
        est = MarkovThroughputModel(iterations=300).fit(X)
        assert est.score(X, est.predict(X)) == pytest.approx(1.0)


class TestFlowSimulator:
    def test_predict_is_seed_mean(self):
        est = FlowSimulator(duration_s=3.0, seeds=(1, 2)).fit()
        config = check_network_features(X[:1])[0]
        expected = np.mean([est.simulate(config, s).normalized for s in (1, 2)])
        assert est.predict(X[:1])[0] == pytest.approx(expected)

    def test_empty_seeds(self):
        with pytest.raises(ValueError):
            FlowSimulator(seeds=()).fit()


@pytest.fixture(scope="module")
def tuner():
    return AACPTTuner(
        lambdas=(1, 2, 4, 8), capacity_kbps=80_000, loss_rate=1e-6, iterations=800
    ).fit([0.5, 0.7, 0.9])


class TestAACPTTuner:
    def test_attributes(self, tuner):
        assert tuner.at_matrix_.shape == (3, 4)
        assert set(tuner.lambda_opt_) <= {1, 2, 4, 8}
        assert list(tuner.formula_lambda_) == [6, 5, 3]

    def test_predict_in_candidate_range(self, tuner):
        pred = tuner.predict(np.array([[0.55], [0.8]]))
        assert np.all((pred >= 1) & (pred <= 8))
        assert np.all(pred == np.ceil(np.round(tuner.intercept_ + tuner.slope_ * np.array([0.55, 0.8]), 9)).clip(1, 8))

    def test_default_betas(self):
        t = AACPTTuner(lambdas=(1,), capacity_kbps=80_000, iterations=50).fit()
        assert len(t.lambda_opt_) == 10 and np.all(t.lambda_opt_ == 1)
        assert np.all(t.predict([0.5, 0.9]) == 1)
