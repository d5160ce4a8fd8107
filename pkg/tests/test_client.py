import numpy as np
import pytest

from fedmm.client import (
    ClientReport,
    LocalModel,
    TrainHyper,
    client_update,
    evaluate_client,
    fuse_embeddings,
    local_predict,
)
from fedmm.data import HospitalDataset
from fedmm.errors import ConfigError, DataError, ProtocolError, ShapeError
from fedmm.losses import LossSchedule, PrototypeSet, dynamic_loss
from fedmm.nn import (
    IDENTITY,
    RELU,
    SIGMOID,
    LayerParams,
    MlpParams,
    finite_diff_grad,
    init_params,
)
from helpers import assert_grads_close

D = 4


def make_model(mask=(0, 1), in_dims=(5, 6), seed=0, fusion="concat"):
    extractors = {
        k: init_params([in_dims[i], 6, D], [RELU, IDENTITY], seed + 10 * k)
        for i, k in enumerate(mask)
    }
    width = D * (len(mask) if fusion == "concat" else 1)
    classifier = init_params([width, 5, 1], [RELU, SIGMOID], seed + 99)
    return LocalModel(extractors, classifier)


def make_dataset(n=12, mask=(0, 1), in_dims=(5, 6), seed=0, separation=0.0):
    rng = np.random.default_rng(seed)
    labels = np.array([i % 2 for i in range(n)])
    feats = {
        k: rng.normal(size=(n, in_dims[i])) + separation * labels[:, None]
        for i, k in enumerate(mask)
    }
    return HospitalDataset(1, [f"s{i}" for i in range(n)], labels, feats, tuple(mask))


def make_protos(mask=(0, 1), seed=1, round_produced=1):
    rng = np.random.default_rng(seed)
    return PrototypeSet(
        {(k, c): rng.normal(size=D) for k in mask for c in (0, 1)}, round_produced
    )


def hyper(**kw):
    args = dict(
        local_epochs=1,
        batch_size=4,
        lr=0.05,
        schedule=LossSchedule(0.05, 30, 0.25, D),
        fusion="concat",
    )
    args.update(kw)
    return TrainHyper(**args)


# ------------------------------------------------------------ local_predict


def test_zero_classifier_predicts_half():
    model = make_model()
    model.classifier = MlpParams(
        [LayerParams(np.zeros((1, 2 * D)), np.zeros(1), SIGMOID)]
    )
    sample = {0: np.ones(5), 1: np.ones(6)}
    pred, emb, _ = local_predict(model, sample, "concat")
    assert pred == 0.5
    assert set(emb) == {0, 1}


def test_concat_order_is_ascending_modality():
    model = make_model()
    sample = {0: np.ones(5), 1: -np.ones(6)}
    pred, emb, (_, clf_trace) = local_predict(model, sample, "concat")
    fused = clf_trace.inputs[0]
    assert len(fused) == 2 * D
    assert np.array_equal(fused[:D], emb[0])
    assert np.array_equal(fused[D:], emb[1])


def test_local_predict_matches_straight_line_chain():
    rng = np.random.default_rng(3)
    model = make_model(seed=5)
    sample = {0: rng.normal(size=5), 1: rng.normal(size=6)}
    pred, emb, _ = local_predict(model, sample, "concat")

    def run_mlp(params, x):
        a = x
        for layer in params.layers:
            z = layer.weights @ a + layer.bias
            if layer.activation == "relu":
                a = np.maximum(z, 0.0)
            elif layer.activation == "sigmoid":
                a = 1.0 / (1.0 + np.exp(-z))
            else:
                a = z
        return a

    h0 = run_mlp(model.extractors[0], sample[0])
    h1 = run_mlp(model.extractors[1], sample[1])
    want = run_mlp(model.classifier, np.concatenate([h0, h1]))[0]
    assert abs(pred - want) < 1e-12
    assert np.allclose(emb[0], h0, rtol=0, atol=1e-12)


def test_mean_fusion_averages_embeddings():
    H = {0: np.array([[2.0, 4.0]]), 1: np.array([[0.0, 0.0]])}
    fused = fuse_embeddings(H, "mean")
    assert np.array_equal(fused, np.array([[1.0, 2.0]]))


def test_local_predict_missing_modality_is_shape_error():
    model = make_model()
    with pytest.raises(ShapeError):
        local_predict(model, {0: np.ones(5)}, "concat")


# ------------------------------------------------------------ client_update


def test_lr_zero_is_noop_and_reports_initial_class_means():
    model = make_model()
    data = make_dataset()
    new_model, report = client_update(model, data, None, 1, hyper(lr=0.0), rng_seed=1)
    for k in model.extractors:
        assert new_model.extractors[k].equal(model.extractors[k])
    assert new_model.classifier.equal(model.classifier)
    # report class means computed from the (unchanged) initial extractors
    from fedmm.nn import forward

    emb, _ = forward(model.extractors[0], data.features[0])
    want = emb[data.labels == 0].mean(axis=0)
    assert np.allclose(report.class_means[0][0][0], want, rtol=0, atol=1e-15)


def test_update_is_deterministic():
    model = make_model()
    data = make_dataset()
    protos = make_protos()
    m1, r1 = client_update(model, data, protos, 5, hyper(local_epochs=2), rng_seed=42)
    m2, r2 = client_update(model, data, protos, 5, hyper(local_epochs=2), rng_seed=42)
    for k in m1.extractors:
        assert m1.extractors[k].equal(m2.extractors[k])
    assert m1.classifier.equal(m2.classifier)
    assert r1.loss_stats == r2.loss_stats


def composed_loss(model, data, protos, t, sched, fusion, i=0):
    sample = {k: data.features[k][i] for k in model.mask}
    pred, emb, _ = local_predict(model, sample, fusion)
    breakdown, _, _ = dynamic_loss(t, emb, protos, pred, int(data.labels[i]), sched)
    return breakdown.total


@pytest.mark.parametrize("with_protos", [False, True])
def test_single_sample_update_matches_finite_differences(with_protos):
    # one epoch, one sample: delta = -lr * d(loss)/dw exactly
    model = make_model(seed=7)
    data = make_dataset(n=1, seed=2)
    protos = make_protos(seed=3) if with_protos else None
    t = 30  # lambda = 0.5: both terms active
    h = hyper(batch_size=1, lr=0.25)
    new_model, _ = client_update(model, data, protos, t, h, rng_seed=0)

    def delta_grads(old, new):
        from fedmm.nn import LayerGrads, MlpGrads

        return MlpGrads(
            [
                LayerGrads(
                    (o.weights - n.weights) / h.lr, (o.bias - n.bias) / h.lr
                )
                for o, n in zip(old.layers, new.layers)
            ]
        )

    for k in model.mask:
        def loss_fn(params, k=k):
            trial = LocalModel(dict(model.extractors), model.classifier)
            trial.extractors = dict(model.extractors)
            trial.extractors[k] = params
            return composed_loss(trial, data, protos, t, h.schedule, h.fusion)

        analytic = delta_grads(model.extractors[k], new_model.extractors[k])
        numeric = finite_diff_grad(model.extractors[k], loss_fn)
        assert_grads_close(analytic, numeric)

    def clf_loss(params):
        trial = LocalModel(dict(model.extractors), params)
        return composed_loss(trial, data, protos, t, h.schedule, h.fusion)

    analytic = delta_grads(model.classifier, new_model.classifier)
    numeric = finite_diff_grad(model.classifier, clf_loss)
    assert_grads_close(analytic, numeric)


def test_prox_term_vanishes_at_global_weights():
    model = make_model(seed=9)
    global_extractors = {k: p.copy() for k, p in model.extractors.items()}
    # the update starts at w == w_global, so with a single batch the
    # proximal contribution mu*(w - w_global) is exactly zero
    small = make_dataset(n=4, seed=4)
    base1, _ = client_update(model, small, None, 1, hyper(batch_size=4), rng_seed=5)
    prox1, _ = client_update(
        model, small, None, 1, hyper(batch_size=4, prox_mu=0.1),
        global_extractors=global_extractors, rng_seed=5,
    )
    for k in model.mask:
        assert base1.extractors[k].equal(prox1.extractors[k])


def test_prox_pulls_toward_global():
    model = make_model(seed=9)
    data = make_dataset(n=4, seed=4)
    far = {k: init_params([p.layers[0].weights.shape[1], 6, D], [RELU, IDENTITY], 777 + k)
           for k, p in model.extractors.items()}
    plain, _ = client_update(model, data, None, 1, hyper(batch_size=4, lr=0.0), rng_seed=5)
    pulled, _ = client_update(
        model, data, None, 1, hyper(batch_size=4, lr=0.1, prox_mu=1.0),
        global_extractors=far, rng_seed=5,
    )
    for k in model.mask:
        d_before = np.abs(model.extractors[k].layers[0].weights - far[k].layers[0].weights).sum()
        d_after = np.abs(pulled.extractors[k].layers[0].weights - far[k].layers[0].weights).sum()
        assert d_after < d_before


def test_report_payload_independent_of_sample_count():
    def report_bytes(r: ClientReport):
        total = 0
        for k, p in r.extractors.items():
            total += sum(l.weights.nbytes + l.bias.nbytes for l in p.layers)
        for k, means in r.class_means.items():
            for mean, _count in means.values():
                total += mean.nbytes
        return total

    model = make_model()
    small = make_dataset(n=10)
    big = make_dataset(n=20)
    _, r_small = client_update(model, small, None, 1, hyper(), rng_seed=0)
    _, r_big = client_update(model, big, None, 1, hyper(), rng_seed=0)
    assert report_bytes(r_small) == report_bytes(r_big)
    assert r_small.train_sample_count == 10 and r_big.train_sample_count == 20
    # class-mean vectors are D-sized, never per-sample
    for means in r_big.class_means.values():
        for mean, count in means.values():
            assert mean.shape == (D,)
            assert isinstance(count, int)


def test_update_never_reads_outside_mask():
    # a single-modality model on a single-modality dataset trains fine even
    # though the global system has two modalities
    model = make_model(mask=(1,), in_dims=(6,))
    data = make_dataset(n=8, mask=(1,), in_dims=(6,))
    protos = make_protos(mask=(1,))
    new_model, report = client_update(model, data, protos, 2, hyper(), rng_seed=0)
    assert set(report.extractors) == {1}
    assert set(report.class_means) == {1}


def test_missing_prototype_for_present_modality_is_protocol_error():
    model = make_model()
    data = make_dataset()
    protos = PrototypeSet({(0, 0): np.zeros(D), (0, 1): np.zeros(D)}, 1)
    with pytest.raises(ProtocolError):
        client_update(model, data, protos, 2, hyper(), rng_seed=0)


def test_empty_train_split_is_data_error():
    model = make_model(mask=(0,), in_dims=(5,))
    empty = HospitalDataset(1, [], np.zeros(0, dtype=np.int64), {0: np.zeros((0, 5))}, (0,))
    with pytest.raises(DataError):
        client_update(model, empty, None, 1, hyper(), rng_seed=0)


def test_bce_decreases_on_separable_data():
    from fedmm.losses import bce_loss_batch
    from fedmm.client import predict_batch

    model = make_model(seed=1)
    data = make_dataset(n=40, seed=6, separation=3.0)
    sched = LossSchedule(0.05, 30, 0.25, D, lambda_override=0.0)

    def mean_bce(m):
        preds, _, _ = predict_batch(m, data.features, "concat")
        losses, _ = bce_loss_batch(preds, data.labels)
        return float(losses.mean())

    before = mean_bce(model)
    trained, _ = client_update(
        model, data, None, 1, hyper(local_epochs=10, schedule=sched, lr=0.1), rng_seed=0
    )
    after = mean_bce(trained)
    assert after < before


def test_freeze_classifier_rounds():
    model = make_model()
    data = make_dataset(n=8)
    frozen, _ = client_update(
        model, data, None, 1, hyper(freeze_classifier_rounds=1), rng_seed=0
    )
    assert frozen.classifier.equal(model.classifier)
    assert not frozen.extractors[0].equal(model.extractors[0])
    active, _ = client_update(
        model, data, None, 2, hyper(freeze_classifier_rounds=1), rng_seed=0
    )
    assert not active.classifier.equal(model.classifier)


# ---------------------------------------------------------------- evaluate


def test_evaluate_single_sample():
    model = make_model()
    data = make_dataset(n=2)
    one = data.take(np.array([0]))
    scores, labels = evaluate_client(model, one, "concat")
    assert len(scores) == 1 and len(labels) == 1


def test_evaluate_zero_classifier_scores_half():
    model = make_model()
    model.classifier = MlpParams(
        [LayerParams(np.zeros((1, 2 * D)), np.zeros(1), SIGMOID)]
    )
    data = make_dataset(n=5)
    scores, _ = evaluate_client(model, data, "concat")
    assert scores == [0.5] * 5


def test_evaluate_is_bitwise_deterministic():
    model = make_model(seed=2)
    data = make_dataset(n=9, seed=3)
    s1, _ = evaluate_client(model, data, "concat")
    s2, _ = evaluate_client(model, data, "concat")
    assert s1 == s2


def test_evaluate_empty_split_is_data_error():
    model = make_model(mask=(0,), in_dims=(5,))
    empty = HospitalDataset(1, [], np.zeros(0, dtype=np.int64), {0: np.zeros((0, 5))}, (0,))
    with pytest.raises(DataError):
        evaluate_client(model, empty, "concat")


def test_hyper_validation():
    with pytest.raises(ConfigError):
        hyper(local_epochs=0)
    with pytest.raises(ConfigError):
        hyper(batch_size=0)
    with pytest.raises(ConfigError):
        hyper(lr=-0.1)
    with pytest.raises(ConfigError):
        hyper(fusion="attention")
