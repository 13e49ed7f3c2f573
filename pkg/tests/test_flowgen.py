import numpy as np
import pytest

from mcflow.chunking import ChunkPlan, KeyframeRequest
from mcflow.codec import LatentChunk, decode_chunk, encode_frame, encode_video
from mcflow.dit import ModelConfig, init_params
from mcflow.flowgen import (
    FlowSample,
    euler_sample,
    fm_loss,
    generate,
    interpolate,
    make_flow_sample,
    train_gen,
    train_step,
    velocity_target,
)
from mcflow.tensor import Tensor
from mcflow.video import Video

TINY = ModelConfig(model_dim=16, n_layers=1, n_heads=2, n_scenarios=3)
PLAN = ChunkPlan(10, (0, 5), (0, 0))  # two 5-frame chunks -> latent lengths (2, 2)
MASK = np.array([True, False, True, False])


def tiny_sample(rng, t=0.5, scenario_id=0):
    z0 = rng.standard_normal((4, 1, 4, 4))
    z1 = rng.standard_normal((4, 1, 4, 4))
    return FlowSample(
        z0=z0,
        z1=z1,
        t=t,
        zt=interpolate(z0, z1, t, MASK),
        mask=MASK,
        target=velocity_target(z0, z1, MASK),
        scenario_id=scenario_id,
        latent_lengths=(2, 2),
    )


def test_interpolate_endpoints(rng):
    z0 = rng.standard_normal((4, 1, 4, 4))
    z1 = rng.standard_normal((4, 1, 4, 4))
    assert np.array_equal(interpolate(z0, z1, 0.0, MASK), z0)
    at_one = interpolate(z0, z1, 1.0, MASK)
    assert np.array_equal(at_one[~MASK], z1[~MASK])
    assert np.array_equal(at_one[MASK], z0[MASK])


def test_interpolate_midpoint():
    z0 = np.zeros((2, 1, 2, 2))
    z1 = np.full((2, 1, 2, 2), 2.0)
    mid = interpolate(z0, z1, 0.5, np.array([True, False]))
    assert np.all(mid[1] == 1.0)
    assert np.all(mid[0] == 0.0)


def test_interpolate_masked_constant_over_draws(rng):
    for _ in range(100):
        z0 = rng.standard_normal((4, 1, 4, 4))
        z1 = rng.standard_normal((4, 1, 4, 4))
        for t in rng.uniform(0, 1, 3):
            assert np.array_equal(interpolate(z0, z1, float(t), MASK)[MASK], z0[MASK])


def test_interpolate_validation(rng):
    z0 = rng.standard_normal((4, 1, 4, 4))
    with pytest.raises(ValueError, match="shape"):
        interpolate(z0, z0[:2], 0.5, MASK)
    with pytest.raises(ValueError, match="\\[0, 1\\]"):
        interpolate(z0, z0, 1.5, MASK)
    with pytest.raises(ValueError, match="mask"):
        interpolate(z0, z0, 0.5, MASK[:2])


def test_velocity_target_masked_zero(rng):
    z0 = rng.standard_normal((4, 1, 4, 4))
    z1 = rng.standard_normal((4, 1, 4, 4))
    tgt = velocity_target(z0, z1, MASK)
    assert np.array_equal(tgt[~MASK], (z1 - z0)[~MASK])
    assert np.all(tgt[MASK] == 0.0)


def test_make_flow_sample_invariants(rng):
    video = Video(rng.uniform(0, 1, (10, 1, 8, 8)))
    latent = encode_video(video, PLAN)
    s = make_flow_sample(latent, 0.3, rng, 1)
    assert np.array_equal(s.zt[s.mask], s.z0[s.mask])
    assert np.array_equal(s.target[~s.mask], (s.z1 - s.z0)[~s.mask])
    assert np.all(s.target[s.mask] == 0.0)
    assert s.latent_lengths == (2, 2)


def test_fm_loss_examples(rng):
    tgt = rng.standard_normal((4, 1, 4, 4))
    assert fm_loss(tgt.copy(), tgt, MASK).item() == 0.0
    assert fm_loss(tgt + 1.0, tgt, MASK).item() == pytest.approx(1.0, abs=1e-15)
    off = tgt.copy()
    off[MASK] += 7.0
    assert fm_loss(off, tgt, MASK).item() == 0.0
    with pytest.raises(ValueError, match="masked"):
        fm_loss(tgt, tgt, np.ones(4, dtype=bool))
    with pytest.raises(ValueError, match="shape"):
        fm_loss(tgt[:2], tgt, MASK)


def test_fm_loss_gradient_closed_form(rng):
    pred = Tensor(rng.standard_normal((4, 1, 4, 4)), requires_grad=True)
    tgt = rng.standard_normal((4, 1, 4, 4))
    loss = fm_loss(pred, tgt, MASK)
    loss.backward()
    w = np.where(MASK[:, None, None, None], 0.0, 1.0)
    n_unmasked = int(w.sum() * 16)
    closed = 2.0 * w * (pred.data - tgt) / n_unmasked
    assert np.max(np.abs(pred.grad - closed)) < 1e-10
    assert np.all(pred.grad[MASK] == 0.0)


def test_train_step_lr_zero_keeps_params(rng):
    store = init_params(TINY, seed=1, ada_zero=False)
    before = {name: t.data.copy() for name, t in store.items()}
    train_step(store, [tiny_sample(rng)], TINY, lr=0.0)
    for name, t in store.items():
        assert np.array_equal(t.data, before[name])
    with pytest.raises(ValueError, match="batch"):
        train_step(store, [], TINY, lr=0.1)


def test_train_step_overfits_single_sample(rng):
    store = init_params(TINY, seed=2, ada_zero=True)
    sample = tiny_sample(rng)
    losses = [train_step(store, [sample], TINY, lr=1e-2) for _ in range(200)]
    assert losses[-1] < losses[0]
    assert losses[-1] < 0.2 * losses[0]


def test_train_gen_deterministic(rng):
    video = Video(rng.uniform(0, 1, (10, 1, 8, 8)))
    latents = [encode_video(video, PLAN)]
    runs = [train_gen(latents, [0], TINY, steps=5, batch=2, lr=1e-3, seed=11) for _ in range(2)]
    assert runs[0][1] == runs[1][1]
    for name in runs[0][0].names():
        assert np.array_equal(runs[0][0][name].data, runs[1][0][name].data)


def test_train_gen_validation(rng):
    with pytest.raises(ValueError, match="non-empty"):
        train_gen([], [], TINY, steps=1, batch=1, lr=1e-3, seed=0)
    video = Video(rng.uniform(0, 1, (10, 1, 8, 8)))
    with pytest.raises(ValueError, match=">= 1"):
        train_gen([encode_video(video, PLAN)], [0], TINY, steps=0, batch=1, lr=1e-3, seed=0)


def kf_latents_from(z0):
    return [z0[0:1].copy(), z0[2:3].copy()]


def test_euler_sample_clamps_keyframes(rng):
    store = init_params(TINY, seed=3, ada_zero=False)
    z0 = rng.standard_normal((4, 1, 4, 4))
    kf = kf_latents_from(z0)
    out = euler_sample(store, TINY, kf, PLAN, 5, 0, seed=2)
    assert np.array_equal(out[0], kf[0][0])
    assert np.array_equal(out[2], kf[1][0])


def test_euler_sample_seeded(rng):
    store = init_params(TINY, seed=3, ada_zero=False)
    kf = kf_latents_from(rng.standard_normal((4, 1, 4, 4)))
    a = euler_sample(store, TINY, kf, PLAN, 4, 0, seed=9)
    b = euler_sample(store, TINY, kf, PLAN, 4, 0, seed=9)
    c = euler_sample(store, TINY, kf, PLAN, 4, 0, seed=10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_euler_sample_oracle_one_step(rng):
    # v = z - z0 makes a single full step land exactly on z0
    z0 = rng.standard_normal((4, 1, 4, 4))
    out = euler_sample(
        None, None, kf_latents_from(z0), PLAN, 1, 0, seed=5,
        velocity_fn=lambda z, t: z - z0,
    )
    assert np.max(np.abs(out - z0)) < 1e-12 * np.max(np.abs(z0))
    assert np.array_equal(out[0], z0[0])


def test_euler_sample_validation(rng):
    z0 = rng.standard_normal((4, 1, 4, 4))
    kf = kf_latents_from(z0)
    with pytest.raises(ValueError, match="n_steps"):
        euler_sample(None, None, kf, PLAN, 0, 0, seed=1, velocity_fn=lambda z, t: z)
    with pytest.raises(ValueError, match="keyframe latents"):
        euler_sample(None, None, kf[:1], PLAN, 1, 0, seed=1, velocity_fn=lambda z, t: z)
    with pytest.raises(ValueError, match="velocity_fn"):
        euler_sample(None, None, kf, PLAN, 1, 0, seed=1)
    with pytest.raises(FloatingPointError, match="step 0"):
        euler_sample(
            None, None, kf, PLAN, 2, 0, seed=1,
            velocity_fn=lambda z, t: np.full_like(z, np.nan),
        )


def test_generate_untrained_hits_keyframes(rng):
    store = init_params(TINY, seed=4, ada_zero=True)
    img = rng.uniform(0, 1, (1, 8, 8))
    req = KeyframeRequest(49, (0,))
    out = generate(store, TINY, [img], req, n_steps=3, scenario_id=0, seed=6)
    assert out.frames == 49
    expect = decode_chunk(LatentChunk(encode_frame(img)))[0]
    assert np.array_equal(out.data[0], expect)


def test_generate_validation(rng):
    store = init_params(TINY, seed=4)
    img = rng.uniform(0, 1, (1, 8, 8))
    req = KeyframeRequest(49, (0,))
    with pytest.raises(ValueError, match="keyframe images"):
        generate(store, TINY, [img, img], req, 3, 0, seed=1)
    with pytest.raises(ValueError, match="channels"):
        generate(store, TINY, [rng.uniform(0, 1, (2, 8, 8))], req, 3, 0, seed=1)
