import json
import math

import pytest

import nfwpo_roi as nr


def test_qstep_and_encoding():
    assert nr.qstep(22) == 8.0
    c = nr.CtuModel()
    c.variance = 1e9
    c.rate_scale = 1000.0
    c.rate_exponent = 1.0
    c.distortion_scale = 1.2
    r = nr.encode_ctu(c, 10.0)
    assert r.mse == pytest.approx(0.4)
    assert r.bits == pytest.approx(500.0)
    with pytest.raises(nr.NumericError):
        nr.encode_ctu(c, math.nan)


def test_frames_and_fixed_qp_episode():
    frames = nr.generate_frames(seed=3, count=2, n_ctus=12, roi_policy="small", qp_l=32)
    assert len(frames) == 2 and len(frames[0]) == 12
    assert 1 <= frames[0].roi_count() <= 5
    out = nr.run_episode(frames[0], lambda s: frames[0].qp_l)
    assert out.total_bits == pytest.approx(out.budget, rel=1e-12)
    assert nr.rate_deviation(out.total_bits, out.budget) == 0.0
    back = nr.frames_from_json(nr.frames_to_json(frames))
    assert [c.variance for c in back[1].ctus] == [c.variance for c in frames[1].ctus]


def test_oracle_beats_fixed_qp():
    frame = nr.generate_frames(seed=5, count=1, n_ctus=4, roi_policy="regular", qp_l=27)[0]
    best = nr.oracle_allocate(frame, [25, 26, 27, 28, 29], -0.05)
    fixed = nr.evaluate_fixed_qp(frame).outcome
    assert best.feasible
    assert best.weighted_distortion <= fixed.weighted_distortion()


def test_frank_wolfe_kernel():
    values = [-1.0] * 5 + [0.0] * 11 + [-1.0] * 5
    fs = nr.feasible_set(30.0, values, -0.05, -100, 100, 10)
    assert fs.qps() == [25.0 + k for k in range(11)]
    p = nr.project(21.0, fs)
    assert p == 25.0 and nr.project(p, fs) == p
    assert nr.project(30.5, fs) == 30.0
    assert nr.fw_direction(1.0, fs, p) == 35.0
    assert nr.fw_direction(-1.0, fs, p) == 25.0
    assert nr.fw_direction(0.0, fs, p) == p
    assert nr.reference_action(25.0, 35.0, 0.05) == pytest.approx(25.5)


def test_metrics():
    assert nr.roi_weighted_mse(4.0, 2, 6.0, 2, 10.0) == pytest.approx(46.0 / 22.0)
    assert nr.rate_deviation(1100.0, 1000.0) == pytest.approx(10.0)
    curve = [(1000.0, 30.0), (1800.0, 33.0), (3100.0, 36.5), (5600.0, 39.0)]
    assert nr.bd_rate(curve, curve) == 0.0
    assert nr.bd_rate(curve, [(b * 0.9, q) for b, q in curve], "pchip") == pytest.approx(-10.0)
    with pytest.raises(nr.NoOverlapError):
        nr.bd_rate(curve, [(b, q + 20.0) for b, q in curve])


def test_trainer_checkpoint_round_trip():
    cfg = json.loads(nr.default_config_json())
    cfg.update(episodes=6, batch_size=8, hidden=[8, 8], n_ctus=6)
    t = nr.Trainer(json.dumps(cfg), 3)
    t.run(3)
    r = nr.Trainer.restore(t.checkpoint())
    t.run(None)
    r.run(None)
    assert t.episodes_done == 6
    assert t.checkpoint() == r.checkpoint()
    frame = nr.generate_frames(seed=1, count=1, n_ctus=6)[0]
    ep = nr.evaluate(t, frame)
    assert len(ep.outcome.qps) == 6


def test_cli_requires_seed(tmp_path):
    code, _, err = nr.cli(["gen-frames", "--out", str(tmp_path)])
    assert code == 2
    code, _, _ = nr.cli(["gen-frames", "--seed", "1", "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "frames.json").exists()
