import numpy as np
import pytest

from latentdiff.autodiff import parameter
from latentdiff.checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from latentdiff.denoiser import DenoiserConfig, DenoiserModel
from latentdiff.optim import OptimizerState, adamw_step


def test_round_trip_params_meta_and_optimizer(tmp_path):
    params = {"w": parameter(np.arange(6.0).reshape(2, 3)),
              "b": parameter(np.zeros(3))}
    state = OptimizerState(lr=0.01, warmup_steps=3).init(params)
    params["w"].grad = np.ones((2, 3))
    params["b"].grad = np.ones(3)
    adamw_step(params, state)
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, params, {"kind": "test", "note": "hello"}, opt=state)
    arrays, meta, opt, ema = load_checkpoint(path)
    assert meta["format_version"] == FORMAT_VERSION
    assert meta["kind"] == "test" and meta["note"] == "hello"
    np.testing.assert_array_equal(arrays["w"], params["w"].data)
    assert opt.step == 1 and opt.warmup_steps == 3
    np.testing.assert_array_equal(opt.m["w"], state.m["w"])
    np.testing.assert_array_equal(ema["b"], state.ema["b"])


def test_model_load_arrays_round_trip(tmp_path):
    cfg = DenoiserConfig(layers=1, dim=8, heads=2, max_len=4)
    model = DenoiserModel(cfg, seed=5)
    path = tmp_path / "model.npz"
    save_checkpoint(path, model.params(), {"kind": "diffusion"})
    arrays, _, _, _ = load_checkpoint(path)
    fresh = DenoiserModel(cfg, seed=99)
    fresh.load_arrays(arrays)
    for (_, a), (_, b) in zip(sorted(model.params().items()),
                              sorted(fresh.params().items())):
        np.testing.assert_array_equal(a.data, b.data)


def test_load_arrays_rejects_name_mismatch(tmp_path):
    cfg = DenoiserConfig(layers=1, dim=8, heads=2, max_len=4)
    model = DenoiserModel(cfg, seed=5)
    arrays = {k: v.data for k, v in model.params().items()}
    arrays.pop("pos")
    with pytest.raises(KeyError):
        DenoiserModel(cfg, seed=0).load_arrays(arrays)


def test_unknown_format_version_rejected(tmp_path):
    import json
    path = tmp_path / "bad.npz"
    meta = np.frombuffer(json.dumps({"format_version": 99}).encode(), dtype=np.uint8)
    np.savez(path, __meta__=meta)
    with pytest.raises(ValueError, match="format"):
        load_checkpoint(path)
