import json

import numpy as np
import pytest

import rtgformer


def test_catch_episode_with_expert_catches():
    env = rtgformer.Catch()
    grid = env.reset(seed=3)
    assert grid.shape == (7, 7)
    assert grid.dtype == np.uint8
    assert grid.sum() == 2
    total, steps = 0.0, 0
    while not env.done:
        grid, reward, done = env.step(env.expert_action())
        total += reward
        steps += 1
    assert steps == 6
    assert total == 1.0


def test_step_before_reset_raises():
    with pytest.raises(RuntimeError):
        rtgformer.Catch().step(0)


def test_returns_to_go_and_normalized_score():
    assert rtgformer.returns_to_go([1.0, 0.0, 2.0]) == [3.0, 2.0, 2.0]
    assert rtgformer.normalized_score(1.0, -0.7, 1.0) == pytest.approx(100.0)
    assert rtgformer.normalized_score(-0.7, -0.7, 1.0) == pytest.approx(0.0)
    assert rtgformer.normalized_score(0.15, -0.7, 1.0) == pytest.approx(50.0)


def test_config_merging():
    cfg = json.loads(rtgformer.config(model={"d_model": 32}))
    assert cfg["model"]["d_model"] == 32
    assert cfg["rollout"]["first_step"] == "consistency"
    with pytest.raises(KeyError):
        rtgformer.config(colour={})


def test_train_and_evaluate_round_trip(tmp_path):
    data = tmp_path / "expert.json"
    meta = rtgformer.generate_dataset("expert", 100, 0, str(data))
    assert meta["mean_return"] == 1.0
    assert meta["random_return"] < 0

    cfg = rtgformer.config(model={"d_model": 16, "n_layers": 1}, train={"steps": 20, "warmup_steps": 2})
    ckpt = tmp_path / "model.ckpt"
    out = rtgformer.train(cfg, str(data), str(ckpt))
    assert out["steps"] == 20
    assert len(out["loss"]) == 20
    assert out["loss"][-1] < out["loss"][0]
    assert len(out["encoder_sha256"]) == 64
    assert ckpt.exists()

    oracle = rtgformer.evaluate(str(ckpt), episodes=5, oracle=True)
    assert oracle["normalized_score"] == pytest.approx(100.0)
    a = rtgformer.evaluate(str(ckpt), episodes=5, seed=2)
    b = rtgformer.evaluate(str(ckpt), episodes=5, seed=2)
    assert a == b
    assert len(a["episodes"]) == 5


def test_gradcheck_passes():
    rep = rtgformer.gradcheck()
    assert rep["passed"]
    assert max(rep["worst"].values()) < rep["threshold"]
    assert "model/condition_memory" in rep["worst"]
