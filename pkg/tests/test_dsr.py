import numpy as np
import pytest

from mcflow.chunking import ChunkPlan, keyframe_latent_positions
from mcflow.codec import encode_video
from mcflow.dsr import (
    DegradeParams,
    build_sr_pair,
    degrade,
    inject_hr_keyframes,
    sr_flow_sample,
    sr_interpolate,
    upsample_latent,
)
from mcflow.video import Video

PLAN = ChunkPlan(10, (0, 5), (0, 0))


def test_degrade_params_validation():
    with pytest.raises(ValueError, match="blur_sigma"):
        DegradeParams(blur_sigma=1.5)
    with pytest.raises(ValueError, match="noise_sigma"):
        DegradeParams(noise_sigma=0.1)
    with pytest.raises(ValueError, match="scale"):
        DegradeParams(scale=4)


def test_degrade_halves_dims(rng):
    hr = Video(rng.uniform(0, 1, (3, 1, 16, 16)))
    lr = degrade(hr, DegradeParams(), seed=1)
    assert lr.data.shape == (3, 1, 8, 8)
    with pytest.raises(ValueError, match="even"):
        degrade(Video(rng.uniform(0, 1, (2, 1, 7, 8))), DegradeParams(), seed=1)


def test_degrade_checkerboard_averages_to_half():
    board = np.indices((8, 8)).sum(axis=0) % 2
    hr = Video(np.broadcast_to(board, (2, 1, 8, 8)).astype(np.float64).copy())
    lr = degrade(hr, DegradeParams(blur_sigma=0.0, noise_sigma=0.0), seed=0)
    assert np.all(lr.data == 0.5)


def test_degrade_constant_is_exact():
    # blur is written as center + side corrections, so constants pass bitwise
    hr = Video(np.full((2, 1, 8, 8), 0.37))
    lr = degrade(hr, DegradeParams(blur_sigma=0.8, noise_sigma=0.0), seed=0)
    assert np.all(lr.data == 0.37)


def test_degrade_noise_seeded(rng):
    hr = Video(rng.uniform(0.2, 0.8, (2, 1, 8, 8)))
    a = degrade(hr, DegradeParams(), seed=5)
    b = degrade(hr, DegradeParams(), seed=5)
    c = degrade(hr, DegradeParams(), seed=6)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_upsample_latent_nearest(rng):
    z = rng.standard_normal((2, 1, 3, 3))
    up = upsample_latent(z)
    assert up.shape == (2, 1, 6, 6)
    assert np.array_equal(up[:, :, ::2, ::2], z)
    assert np.array_equal(up[:, :, 1::2, 1::2], z)


def test_inject_idempotent_and_bitwise(rng):
    z = rng.standard_normal((4, 1, 4, 4))
    hr = [rng.standard_normal((1, 1, 4, 4)) for _ in range(2)]
    once = inject_hr_keyframes(z, hr, (0, 2))
    twice = inject_hr_keyframes(once, hr, (0, 2))
    assert np.array_equal(once, twice)
    assert np.array_equal(once[0], hr[0][0])
    assert np.array_equal(once[2], hr[1][0])
    assert np.array_equal(once[1], z[1])
    assert np.array_equal(z[0], z[0])  # input untouched
    assert once is not z


def test_inject_validation(rng):
    z = rng.standard_normal((4, 1, 4, 4))
    hr = [rng.standard_normal((1, 1, 4, 4))]
    with pytest.raises(ValueError, match="positions"):
        inject_hr_keyframes(z, hr, (0, 2))
    with pytest.raises(ValueError, match="outside"):
        inject_hr_keyframes(z, hr, (4,))
    with pytest.raises(ValueError, match="shape"):
        inject_hr_keyframes(z, [rng.standard_normal((1, 1, 2, 2))], (0,))


def test_sr_interpolate_endpoints(rng):
    z_hr = rng.standard_normal((4, 1, 4, 4))
    z_lr = rng.standard_normal((4, 1, 4, 4))
    z_lr[0] = z_hr[0]  # injected positions agree bitwise
    assert np.array_equal(sr_interpolate(z_hr, z_lr, 0.0), z_hr)
    assert np.array_equal(sr_interpolate(z_hr, z_lr, 1.0), z_lr)
    mid = sr_interpolate(z_hr, z_lr, 0.5)
    assert np.array_equal(mid[0], z_hr[0])
    with pytest.raises(ValueError, match="shape"):
        sr_interpolate(z_hr, z_lr[:2], 0.5)
    with pytest.raises(ValueError, match="\\[0, 1\\]"):
        sr_interpolate(z_hr, z_lr, -0.1)


def test_sr_interpolate_agreeing_positions_exact_any_t(rng):
    z_hr = rng.standard_normal((4, 1, 4, 4))
    z_lr = z_hr.copy()
    z_lr[1:] += rng.standard_normal((3, 1, 4, 4))
    for t in (0.1, 0.5, 0.9):
        assert np.array_equal(sr_interpolate(z_hr, z_lr, t)[0], z_hr[0])


def test_identity_degradation_target_zero_on_block_constant(rng):
    # 4x4-constant blocks survive blur-free down/up sampling and pooling
    blocks = rng.uniform(0.1, 0.9, (10, 1, 4, 4))
    hr = Video(np.repeat(np.repeat(blocks, 4, axis=2), 4, axis=3))
    pair = build_sr_pair(hr, PLAN, DegradeParams(blur_sigma=0.0, noise_sigma=0.0), seed=3)
    sample = sr_flow_sample(pair, 0.5)
    assert np.all(sample.target == 0.0)
    assert np.array_equal(sample.zt, pair.z_hr.data)


def test_build_sr_pair_injects_hr_at_keyframes(rng):
    hr = Video(rng.uniform(0, 1, (10, 1, 16, 16)))
    pair = build_sr_pair(hr, PLAN, DegradeParams(), seed=7)
    assert pair.positions == keyframe_latent_positions(PLAN)
    z_hr = encode_video(hr, PLAN).data
    for pos in pair.positions:
        assert np.array_equal(pair.z_lr_up[pos], z_hr[pos])
    assert pair.z_lr_up.shape == z_hr.shape


def test_sr_flow_sample_mask_and_target(rng):
    hr = Video(rng.uniform(0, 1, (10, 1, 16, 16)))
    pair = build_sr_pair(hr, PLAN, DegradeParams(), seed=7)
    s = sr_flow_sample(pair, 0.3)
    assert np.all(s.target[s.mask] == 0.0)
    assert np.array_equal(s.target[~s.mask], (pair.z_lr_up - pair.z_hr.data)[~s.mask])
    assert s.scenario_id == 0
    # keyframe latents agree on both ends, so the interpolant is exact there
    assert np.array_equal(s.zt[s.mask], pair.z_hr.data[s.mask])
