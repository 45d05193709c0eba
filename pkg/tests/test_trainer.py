import io

import numpy as np
import pytest

from metrec.dataset import FeatureSpec, feature_vector
from metrec.mlp import MlpParams, NonFiniteError, init_mlp, mlp_backward, mlp_forward
from metrec.sampler import Triplet
from metrec.synthetic import planted_split
from metrec.trainer import (
    MAGIC,
    SGD,
    Adam,
    CheckpointShapeError,
    CheckpointVersionError,
    ConfigError,
    Model,
    NotACheckpointError,
    TrainConfig,
    TruncatedCheckpointError,
    derive_seed,
    init_model,
    load_checkpoint,
    loss_and_grads,
    make_optimizer,
    save_checkpoint,
    step,
    tower_backward,
    tower_forward,
    train,
)

from pipeline_oracle import hinge_margin, reference_grads, reference_loss, relu_kink_distance


def micro_model(rng, n=4, d=2, hidden=(3,), act="relu", margin=1.0, clip=None):
    cfg = TrainConfig(embedding_dim=d, user_hidden=list(hidden), item_hidden=list(hidden), activation=act, margin=margin, clip_radius=clip)
    model = init_model(cfg, n, n, rng)
    for t in (model.user_tower, model.item_tower):
        for _, b in t.layers:
            b[:] = rng.normal(scale=0.3, size=b.shape)
    return model


def random_triplets(rng, n_users, n_items, k):
    out = []
    while len(out) < k:
        p, q = rng.choice(n_items, size=2, replace=False)
        out.append(Triplet(int(rng.integers(n_users)), int(p), int(q)))
    return out


def test_init_shapes():
    cfg = TrainConfig(embedding_dim=2, user_hidden=[], item_hidden=[])
    m = init_model(cfg, 3, 4, np.random.default_rng(0))
    assert [w.shape for w, _ in m.user_tower.layers] == [(2, 3)]
    assert [w.shape for w, _ in m.item_tower.layers] == [(2, 4)]
    assert m.feature_spec == FeatureSpec(3, 4)


def test_init_deterministic():
    cfg = TrainConfig(embedding_dim=5)
    a = init_model(cfg, 7, 9, np.random.default_rng(11))
    b = init_model(cfg, 7, 9, np.random.default_rng(11))
    assert save_checkpoint(a) == save_checkpoint(b)


def test_init_rejects_empty():
    with pytest.raises(ValueError):
        init_model(TrainConfig(), 0, 3, np.random.default_rng(0))


@pytest.mark.parametrize("act", ["relu", "tanh", "identity"])
def test_batched_tower_matches_per_example(rng, act):
    p = init_mlp([9, 6, 5, 4], rng, act)
    ids = np.array([0, 3, 3, 8, 1])
    h, cache = tower_forward(p, ids)
    g = rng.normal(size=h.shape)
    total = p.zeros_like()
    for row, i in enumerate(ids):
        x = feature_vector(FeatureSpec(9, 9), int(i), "user")
        want, c = mlp_forward(p, x)
        np.testing.assert_allclose(h[row], want, rtol=1e-12, atol=1e-14)
        gp, _ = mlp_backward(p, c, g[row])
        for acc, part in zip(total.arrays(), gp.arrays()):
            acc += part
    got = tower_backward(p, cache, g)
    for a, b in zip(got.arrays(), total.arrays()):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


def test_tower_forward_rejects_bad_id(rng):
    with pytest.raises(IndexError):
        tower_forward(init_mlp([3, 2], rng), np.array([3]))


def test_end_to_end_gradient_matches_finite_differences(rng):
    checked = 0
    while checked < 20:
        model = micro_model(rng)
        trip = random_triplets(rng, 4, 4, 3)
        if hinge_margin(model, trip) < 1e-4 or relu_kink_distance(model, trip) < 1e-4:
            continue
        loss, _, gu, gi = loss_and_grads(model, *map(np.array, zip(*trip)))
        if loss == 0.0:
            continue
        assert loss == pytest.approx(reference_loss(model, trip), rel=1e-12)
        fu, fi = reference_grads(model, trip)
        for a, f in zip(gu.arrays() + gi.arrays(), fu.arrays() + fi.arrays()):
            np.testing.assert_allclose(a, f, rtol=1e-5, atol=1e-8)
        checked += 1


def test_clip_gradient_matches_finite_differences(rng):
    checked = 0
    while checked < 5:
        model = micro_model(rng, clip=0.3)
        trip = random_triplets(rng, 4, 4, 3)
        if hinge_margin(model, trip) < 1e-4 or relu_kink_distance(model, trip) < 1e-4:
            continue
        _, _, gu, gi = loss_and_grads(model, *map(np.array, zip(*trip)))
        fu, fi = reference_grads(model, trip)
        for a, f in zip(gu.arrays() + gi.arrays(), fu.arrays() + fi.arrays()):
            np.testing.assert_allclose(a, f, rtol=1e-5, atol=1e-8)
        checked += 1


def _satisfied_model():
    # user 0 and item 0 sit at the origin, item 1 at distance 10
    user = MlpParams([(np.zeros((2, 1)), np.zeros(2))], "identity")
    item = MlpParams([(np.array([[0.0, 10.0], [0.0, 0.0]]), np.zeros(2))], "identity")
    return Model(user, item, 1.0, FeatureSpec(1, 2))


@pytest.mark.parametrize("opt", ["sgd", "adam"])
def test_inactive_batch_is_noop(opt):
    model = _satisfied_model()
    before = save_checkpoint(model)
    cfg = TrainConfig(optimizer=opt, learning_rate=0.5)
    optimizer = make_optimizer(cfg, model)
    _, loss, active = step(model, [Triplet(0, 0, 1)] * 4, optimizer)
    assert loss == 0.0 and active == 0.0
    assert save_checkpoint(model) == before


def test_single_sgd_step_moves_by_lr_times_grad(rng):
    while True:
        model = micro_model(rng)
        trip = random_triplets(rng, 4, 4, 1)
        if hinge_margin(model, trip) > 1e-3 and relu_kink_distance(model, trip) > 1e-3:
            if reference_loss(model, trip) > 0:
                break
    fu, fi = reference_grads(model, trip)
    before = [a.copy() for a in model.user_tower.arrays() + model.item_tower.arrays()]
    _, _, gu, gi = loss_and_grads(model, *map(np.array, zip(*trip)))
    step(model, trip, SGD(0.05))
    after = model.user_tower.arrays() + model.item_tower.arrays()
    for b, a, g, f in zip(before, after, gu.arrays() + gi.arrays(), fu.arrays() + fi.arrays()):
        np.testing.assert_array_equal(a, b - 0.05 * g)
        np.testing.assert_allclose(g, f, rtol=1e-5, atol=1e-8)


def test_clip_postcondition(rng):
    model = micro_model(rng, n=6, d=3, clip=0.5)
    for t in (model.user_tower, model.item_tower):
        t.layers[-1][0][:] *= 50.0
    opt = make_optimizer(TrainConfig(learning_rate=0.01), model)
    step(model, random_triplets(rng, 6, 6, 8), opt)
    for emb in (model.user_embeddings(), model.item_embeddings()):
        assert (np.linalg.norm(emb, axis=1) <= 0.5 + 1e-9).all()


def test_non_finite_loss_names_triplet(rng):
    model = micro_model(rng)
    model.item_tower.layers[-1][1][:] = np.nan
    with pytest.raises(NonFiniteError, match="Triplet"):
        step(model, [Triplet(0, 1, 2)], SGD(0.1))


def test_adam_state_progresses(rng):
    model = micro_model(rng)
    opt = make_optimizer(TrainConfig(), model)
    assert isinstance(opt, Adam)
    step(model, random_triplets(rng, 4, 4, 4), opt)
    assert opt.t == 1


def test_train_zero_epochs_returns_initial_model():
    split = planted_split()
    cfg = TrainConfig(embedding_dim=4, epochs=0, seed=3)
    model, report = train(cfg, split)
    init = init_model(cfg, 40, 40, np.random.default_rng(derive_seed(3, "init")))
    assert save_checkpoint(model) == save_checkpoint(init)
    assert report.epoch_losses == []


def test_train_deterministic_and_decreasing():
    split = planted_split()
    cfg = TrainConfig(embedding_dim=8, epochs=10, seed=5)
    _, r1 = train(cfg, split)
    _, r2 = train(cfg, split)
    assert r1.epoch_losses == r2.epoch_losses
    assert r1.epoch_losses[9] < r1.epoch_losses[0]
    assert all(x >= 0 for x in r1.epoch_losses)
    assert len(r1.log_rows()) == 10


def test_planted_loss_floor():
    # the held-out in-cluster items are sampled as negatives, so the loss needs
    # longer than the default budget to clear them by the margin
    cfg = TrainConfig(embedding_dim=8, epochs=200, seed=0)
    _, report = train(cfg, planted_split())
    assert report.epoch_losses[-1] < 0.05 * cfg.margin


def test_config_validation():
    with pytest.raises(ConfigError, match="learning_rate must be positive"):
        TrainConfig(learning_rate=-1).validate()
    with pytest.raises(ConfigError, match="embedding_dim"):
        TrainConfig(embedding_dim=0).validate()
    with pytest.raises(ConfigError, match="optimizer"):
        TrainConfig(optimizer="rmsprop").validate()
    with pytest.raises(ConfigError, match="bogus"):
        TrainConfig.from_dict({"bogus": 1})
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()


# -- checkpoints -------------------------------------------------------------


@pytest.mark.parametrize("clip", [None, 0.75])
def test_checkpoint_round_trip(rng, clip):
    model = micro_model(rng, n=5, d=3, hidden=(4, 2), act="tanh", margin=0.3, clip=clip)
    blob = save_checkpoint(model)
    back = load_checkpoint(blob)
    assert save_checkpoint(back) == blob
    for a, b in zip(model.user_tower.arrays() + model.item_tower.arrays(), back.user_tower.arrays() + back.item_tower.arrays()):
        assert a.tobytes() == b.tobytes()
    assert (back.margin, back.clip_radius) == (0.3, clip)
    assert back.user_tower.activation == model.user_tower.activation
    buf = io.BytesIO()
    save_checkpoint(model, buf)
    assert load_checkpoint(io.BytesIO(buf.getvalue())).feature_spec == model.feature_spec


def test_checkpoint_layout(rng):
    model = micro_model(rng, n=3, d=2, hidden=())
    blob = save_checkpoint(model)
    assert blob.startswith(MAGIC)
    # magic + 2 towers * (layers, act, 2 dims) + 2*(2*3+2) weights + 3 trailing floats
    assert len(blob) == 6 + 2 * 4 * 4 + 8 * 2 * 8 + 24
    assert np.frombuffer(blob[-24:], "<f8")[0] == 2.0


def test_checkpoint_errors(rng):
    blob = save_checkpoint(micro_model(rng))
    with pytest.raises(TruncatedCheckpointError, match="truncated checkpoint"):
        load_checkpoint(blob[:-5])
    with pytest.raises(TruncatedCheckpointError):
        load_checkpoint(blob[:20])
    with pytest.raises(NotACheckpointError, match="not a checkpoint"):
        load_checkpoint(b"XXXXv1" + blob[6:])
    with pytest.raises(NotACheckpointError):
        load_checkpoint(b"")
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(b"MRECv9" + blob[6:])
    with pytest.raises(CheckpointShapeError):
        load_checkpoint(blob + b"\0" * 8)
