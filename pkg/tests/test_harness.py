import numpy as np
import pytest

from sevo.graph import build_from_sequences, cycle_graph, random_graph
from sevo.harness import benchmark
from sevo.harness.data import EvalSplit, SyntheticSpec, generate_synthetic, leave_one_out
from sevo.harness.evaluation import evaluate, metrics_from_ranks, rank_of_targets
from sevo.harness.model import MfModel, NegativeSampler, SamplingError, bpr_gradient, bpr_loss, smoothness_reg_gradient
from sevo.harness.training import BPRMatrixFactorization, NumericalError, TrainConfig, train
from sevo.graph import InteractionLog
from sevo.optim import OptimizerConfig
from sevo.sparse import ValidationError, to_dense
from sevo.transform import SEvoConfig, smoothness
from sevo.verify import _fd_rel_error

SMALL = SyntheticSpec(n_items=40, n_users=60, n_clusters=4, seq_len=10, seed=3)


# -- model and gradients -------------------------------------------------------

def test_bpr_gradient_finite_differences(rng):
    model = MfModel.init(6, 9, 4, std=0.5, seed=1)
    users, pos, neg = rng.integers(6, size=15), rng.integers(9, size=15), rng.integers(9, size=15)
    item_grad, user_grad, loss = bpr_gradient(model, users, pos, neg)
    assert loss == pytest.approx(bpr_loss(model, users, pos, neg))
    err_items = _fd_rel_error(lambda Q: bpr_loss(MfModel(model.user_embeddings, Q), users, pos, neg),
                              model.item_embeddings, item_grad.gradient, rng)
    err_users = _fd_rel_error(lambda P: bpr_loss(MfModel(P, model.item_embeddings), users, pos, neg),
                              model.user_embeddings, user_grad.gradient, rng)
    assert max(err_items, err_users) <= 1e-5
    item_grad.validate()
    user_grad.validate()


def test_bpr_loss_at_zero_scores():
    model = MfModel(np.zeros((2, 3)), np.zeros((4, 3)))
    assert bpr_loss(model, [0, 1], [0, 1], [2, 3]) == pytest.approx(2 * np.log(2))


def test_smoothness_regularizer(rng):
    g = random_graph(10, rng)
    E = rng.normal(size=(10, 3))
    assert not smoothness_reg_gradient(E, g, 0.0).any()
    assert _fd_rel_error(lambda X: 0.7 * smoothness(X, g), E, smoothness_reg_gradient(E, g, 0.7), rng) <= 1e-6
    null = np.sqrt(g.degrees)[:, None]
    np.testing.assert_allclose(smoothness_reg_gradient(null, g, 1.0), 0.0, atol=1e-12)


def test_negative_sampler_rejects_history(rng):
    seqs = {0: [0, 1, 2], 1: [3]}
    sampler = NegativeSampler(seqs, 5, rng)
    neg = sampler.sample(np.array([0] * 200 + [1] * 200))
    assert set(neg[:200].tolist()) <= {3, 4}
    assert 3 not in set(neg[200:].tolist())
    with pytest.raises(SamplingError):
        NegativeSampler({0: [0, 1]}, 2, rng)


# -- evaluation ----------------------------------------------------------------

class _FixedScores:
    def __init__(self, scores):
        self._scores = np.asarray(scores, dtype=np.float64)

    def scores(self, users):
        return self._scores[users].copy()


def test_rank_ties_prefer_lower_id():
    scores = np.array([[1.0, 1.0, 1.0, 0.0]])
    assert rank_of_targets(scores, [0])[0] == 1
    assert rank_of_targets(scores, [2])[0] == 3


def test_metric_examples():
    assert metrics_from_ranks([1, 1], [1, 10]) == {"HR@1": 1.0, "NDCG@1": 1.0, "HR@10": 1.0, "NDCG@10": 1.0}
    m = metrics_from_ranks([2], [10])
    assert m["NDCG@10"] == pytest.approx(1 / np.log2(3)) and m["HR@10"] == 1.0
    assert metrics_from_ranks([11], [10])["NDCG@10"] == 0.0


def test_random_scores_hit_rate(rng):
    n_users, n_items, N = 4000, 50, 5
    ranks = rank_of_targets(rng.random((n_users, n_items)), rng.integers(n_items, size=n_users))
    hr = metrics_from_ranks(ranks, [N])[f"HR@{N}"]
    p = N / n_items
    assert abs(hr - p) <= 3 * np.sqrt(p * (1 - p) / n_users)


def test_evaluate_skips_and_masks():
    train_log = InteractionLog({0: [0, 1], 1: [2]}, 4)
    split = EvalSplit(train_log, {0: 2}, {0: 3})
    model = _FixedScores([[5.0, 4.0, 3.0, 2.0], [0, 0, 0, 0]])
    plain = evaluate(model, split, [1, 10])
    assert plain["skipped"] == 1 and plain["HR@1"] == 0.0 and plain["NDCG@10"] == pytest.approx(1 / np.log2(5))
    masked = evaluate(model, split, [1], mask_history=True)
    assert masked["HR@1"] == 1.0


def test_evaluate_deterministic():
    log, _ = generate_synthetic(SMALL)
    split = leave_one_out(log)
    model = MfModel.init(SMALL.n_users, SMALL.n_items, 8, seed=0)
    assert evaluate(model, split) == evaluate(model, split)


# -- data ----------------------------------------------------------------------

def test_synthetic_deterministic():
    a, la = generate_synthetic(SMALL)
    b, lb = generate_synthetic(SMALL)
    assert a.user_sequences == b.user_sequences and np.array_equal(la, lb)
    c, _ = generate_synthetic(SyntheticSpec(**{**SMALL.to_dict(), "seed": 4}))
    assert c.user_sequences != a.user_sequences


def test_synthetic_pure_clusters():
    log, labels = generate_synthetic(SyntheticSpec(**{**SMALL.to_dict(), "intra_cluster_prob": 1.0}))
    for seq in log.user_sequences.values():
        assert len(set(labels[seq].tolist())) == 1


def test_within_cluster_weight_dominates():
    log, labels = generate_synthetic(SyntheticSpec(seed=0))
    A = to_dense(build_from_sequences(log).adjacency)
    same = labels[:, None] == labels[None, :]
    assert A[same].sum() > A[~same].sum()


def test_infeasible_spec():
    with pytest.raises(ValidationError):
        SyntheticSpec(n_items=10, n_clusters=3)
    with pytest.raises(ValidationError):
        SyntheticSpec(intra_cluster_prob=0.0)


def test_leave_one_out():
    split = leave_one_out(InteractionLog({0: [1, 2, 3, 4], 1: [5, 6]}, 7))
    assert split.train.user_sequences == {0: [1, 2], 1: [5, 6]}
    assert split.valid == {0: 3} and split.test == {0: 4}


# -- benchmark -----------------------------------------------------------------

def test_beta_zero_matches_plain_gd(rng):
    g = random_graph(12, rng)
    for lr in (0.5, 0.9, 1.0):
        res = benchmark.quadratic_benchmark(g, SEvoConfig(0.0, 3), lr=lr, dense_lr=lr, seed=2)
        assert res.converged
        assert res.iterations == benchmark.plain_gd_iterations(2 * res.trace[0], lr, 1e-6)


def test_rescaled_beats_unscaled(rng):
    g = random_graph(20, rng, density=0.2)
    cfg = SEvoConfig(0.99, 3)
    fast = benchmark.quadratic_benchmark(g, cfg, "rescaled-neumann")
    slow = benchmark.quadratic_benchmark(g, cfg, "neumann")
    assert fast.converged and slow.converged and fast.iterations < slow.iterations


def test_iterative_adversarial_init_diverges():
    g = cycle_graph(2)
    e_star = np.zeros((2, 1))
    res = benchmark.quadratic_benchmark(
        g, SEvoConfig(0.6, 1, "iterative"), e_init=np.array([[1.0], [-1.0]]), e_star=e_star,
    )
    assert res.status == "diverged" or np.all(np.diff(res.trace) >= 0)


# -- training ------------------------------------------------------------------

def _split():
    log, _ = generate_synthetic(SMALL)
    return leave_one_out(log)


def test_training_is_deterministic():
    split = _split()
    g = build_from_sequences(split.train)
    tcfg = TrainConfig(dim=8, epochs=2, seed=5)
    a = train(split, g, tcfg, OptimizerConfig())
    b = train(split, g, tcfg, OptimizerConfig())
    assert np.array_equal(a.model.item_embeddings, b.model.item_embeddings)
    assert a.history == b.history and a.test_metrics == b.test_metrics


def test_beta_zero_equals_no_graph():
    split = _split()
    g = build_from_sequences(split.train)
    tcfg = TrainConfig(dim=8, epochs=2)
    a = train(split, g, tcfg, OptimizerConfig(sevo=SEvoConfig(0.0, 3)))
    b = train(split, None, tcfg, OptimizerConfig())
    assert np.array_equal(a.model.item_embeddings, b.model.item_embeddings)


def test_smoothing_lowers_update_roughness():
    split = _split()
    g = build_from_sequences(split.train)
    res = train(split, g, TrainConfig(dim=8, epochs=2), OptimizerConfig(sevo=SEvoConfig(0.99, 3)))
    for row in res.history:
        assert row["smoothed_delta_smoothness"] <= row["raw_delta_smoothness"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_training_raises():
    split = _split()
    g = build_from_sequences(split.train)
    with pytest.raises(NumericalError) as exc:
        train(split, g, TrainConfig(dim=4, epochs=1, init_std=1e200), OptimizerConfig())
    assert "epoch" in exc.value.diagnostics


def test_select_best_reports_validation_choice():
    split = _split()
    res = train(split, None, TrainConfig(dim=8, epochs=3, eval_every=1, select_best=True), OptimizerConfig())
    scores = [m["NDCG@10"] for _, m in res.evaluations]
    assert res.best_epoch == 1 + int(np.argmax(scores))


def test_estimator_api():
    split = _split()
    est = BPRMatrixFactorization(dim=8, epochs=1, random_state=0)
    assert est.get_params()["beta"] == 0.99
    est.fit(split)
    top = est.predict([0, 1], n=5)
    assert top.shape == (2, 5)
    scores = est.decision_function([0])[0]
    assert np.all(np.diff(scores[top[0]]) <= 0)
    assert 0.0 <= est.score(split) <= 1.0
