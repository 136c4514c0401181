"""Adam optimizer and checkpoint round-trip tests."""

import numpy as np
import pytest

from alignnet.optim import ParamStore, adam_step, load_checkpoint, save_checkpoint


def make_store(values):
    store = ParamStore()
    for name, v in values.items():
        store.add(name, v)
    return store


def test_first_step_matches_bias_corrected_update():
    store = make_store({"w": np.array([0.0])})
    store["w"].grad = np.array([1.0])
    adam_step(store, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8)
    # bias-corrected m_hat = v_hat = 1, so the update is -lr / (1 + eps)
    np.testing.assert_allclose(store["w"].data, [-3e-4 / (1 + 1e-8)], rtol=1e-12)
    assert store.step_count == 1


def test_zero_grad_leaves_params_unchanged():
    rng = np.random.default_rng(0)
    vals = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}
    store = make_store(vals)
    for t in store.params.values():
        t.grad = np.zeros_like(t.data)
    adam_step(store)
    for name, v in vals.items():
        np.testing.assert_array_equal(store[name].data, v)


def test_determinism():
    rng = np.random.default_rng(1)
    vals = {"a": rng.normal(size=5)}
    grads = [rng.normal(size=5) for _ in range(10)]
    results = []
    for _ in range(2):
        store = make_store({k: v.copy() for k, v in vals.items()})
        for g in grads:
            store["a"].grad = g.copy()
            adam_step(store, lr=1e-2)
        results.append(store["a"].data.copy())
    np.testing.assert_array_equal(results[0], results[1])


def test_missing_grad_names_parameter():
    store = make_store({"conv.weight": np.zeros(3)})
    with pytest.raises(ValueError, match="conv.weight"):
        adam_step(store)


def test_converges_on_quadratic():
    store = make_store({"x": np.array([5.0, -3.0])})
    for _ in range(2000):
        x = store["x"]
        x.grad = 2.0 * x.data
        adam_step(store, lr=0.05)
    np.testing.assert_allclose(store["x"].data, 0.0, atol=1e-3)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(2)
    store = make_store({
        "video.pyr1.weight": rng.normal(size=(4, 3, 3)),
        "video.pyr1.bias": rng.normal(size=4),
        "attn.keypoint": rng.normal(size=11),
    })
    stem = tmp_path / "ckpt"
    save_checkpoint(store, stem)
    loaded = load_checkpoint(stem)
    assert set(loaded) == set(store.params)
    for name, t in store.params.items():
        assert loaded[name].shape == t.data.shape
        assert loaded[name].tobytes() == t.data.tobytes()


def test_checkpoint_rewrite_identical_bytes(tmp_path):
    rng = np.random.default_rng(3)
    store = make_store({"w": rng.normal(size=(2, 2))})
    save_checkpoint(store, tmp_path / "a")
    save_checkpoint(store, tmp_path / "b")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()


def test_load_values_shape_check(tmp_path):
    store = make_store({"w": np.zeros((2, 2))})
    with pytest.raises(ValueError, match="shape"):
        store.load_values({"w": np.zeros(3)})
