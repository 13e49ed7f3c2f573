import numpy as np
import pytest

from mcflow import tensor as T
from mcflow.params import (
    CheckpointError,
    ParamStore,
    adam_step,
    backward,
    grad_check,
    load_checkpoint,
    save_checkpoint,
)
from mcflow.tensor import Tensor


def small_store(rng):
    store = ParamStore()
    store.add("w", rng.standard_normal((3, 4)))
    store.add("b", rng.standard_normal(4))
    return store


def test_add_rejects_duplicates(rng):
    store = small_store(rng)
    with pytest.raises(ValueError, match="duplicate"):
        store.add("w", np.zeros(2))


def test_backward_fills_zeros_for_unreached(rng):
    store = small_store(rng)
    grads = backward(T.tsum(store["w"] * 2.0), store)
    np.testing.assert_array_equal(grads["w"], np.full((3, 4), 2.0))
    np.testing.assert_array_equal(grads["b"], np.zeros(4))


def test_adam_first_step_moves_by_about_lr():
    store = ParamStore()
    store.add("p", np.array([1.0]))
    adam_step(store, {"p": np.array([0.5])}, lr=0.1)
    # bias-corrected first step is lr * g / (|g| + eps), about lr
    np.testing.assert_allclose(store["p"].data, [0.9], atol=1e-8)
    assert store.step == 1


def test_adam_zero_grad_leaves_params():
    store = ParamStore()
    store.add("p", np.arange(4.0))
    adam_step(store, {"p": np.zeros(4)}, lr=0.1)
    np.testing.assert_array_equal(store["p"].data, np.arange(4.0))


def test_adam_is_deterministic(rng):
    def run():
        store = ParamStore()
        store.add("p", np.linspace(-1, 1, 8))
        g = np.linspace(0.5, -0.5, 8)
        for _ in range(5):
            adam_step(store, {"p": g}, lr=3e-3)
        return store["p"].data

    np.testing.assert_array_equal(run(), run())


def test_adam_missing_grad_rejected(rng):
    store = small_store(rng)
    with pytest.raises(ValueError, match="missing"):
        adam_step(store, {"w": np.zeros((3, 4))}, lr=0.1)


def test_adam_nonfinite_grad_rejected(rng):
    store = small_store(rng)
    grads = {"w": np.full((3, 4), np.nan), "b": np.zeros(4)}
    with pytest.raises(FloatingPointError, match="'w'"):
        adam_step(store, grads, lr=0.1)


def test_load_state_roundtrip_and_mismatch(rng):
    store = small_store(rng)
    snap = store.state()
    adam_step(store, backward(T.tsum(store["w"] @ Tensor(np.ones((4, 1)))), store), lr=0.5)
    store.load_state(snap)
    np.testing.assert_array_equal(store["w"].data, snap["w"])
    with pytest.raises(ValueError, match="state mismatch"):
        store.load_state({"w": snap["w"]})


def test_grad_check_passes_on_smooth_graph(rng):
    store = ParamStore()
    store.add("w", 0.3 * rng.standard_normal((4, 3)))
    store.add("b", 0.3 * rng.standard_normal(3))
    x = rng.standard_normal((5, 4))

    def loss():
        h = T.gelu(Tensor(x) @ store["w"] + store["b"])
        return T.tmean(T.layernorm(h) * h)

    assert grad_check(loss, store, eps=1e-3) < 1e-6


def test_grad_check_catches_inconsistent_gradient(rng):
    store = ParamStore()
    store.add("w", rng.standard_normal(3))
    calls = [0]

    def loss():
        calls[0] += 1
        scale = 2.0 if calls[0] > 1 else 1.0  # numeric passes see a different loss
        return T.tsum(store["w"] * store["w"]) * scale

    assert grad_check(loss, store, eps=1e-3) > 1e-2


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_roundtrip_bit_exact(tmp_path, rng):
    tensors = {
        "a": rng.standard_normal((2, 3, 4)),
        "b": np.array(3.5),
        "empty": np.zeros((0, 7)),
    }
    p = tmp_path / "ck.mckp"
    save_checkpoint(p, tensors)
    out = load_checkpoint(p)
    assert list(out) == ["a", "b", "empty"]
    for name in tensors:
        assert out[name].shape == tensors[name].shape
        np.testing.assert_array_equal(out[name], tensors[name])


def test_checkpoint_same_bytes_for_same_tensors(tmp_path, rng):
    tensors = {"a": rng.standard_normal(16)}
    p1, p2 = tmp_path / "1.mckp", tmp_path / "2.mckp"
    save_checkpoint(p1, tensors)
    save_checkpoint(p2, tensors)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "bad.mckp"
    p.write_bytes(b"NOPE" + b"\x00" * 8)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)


def test_checkpoint_truncation_names_offset(tmp_path, rng):
    p = tmp_path / "ck.mckp"
    save_checkpoint(p, {"a": rng.standard_normal(8)})
    whole = p.read_bytes()
    p.write_bytes(whole[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(p)


def test_checkpoint_trailing_bytes_rejected(tmp_path, rng):
    p = tmp_path / "ck.mckp"
    save_checkpoint(p, {"a": rng.standard_normal(8)})
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(p)
