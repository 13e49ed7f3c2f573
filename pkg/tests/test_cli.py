import json
import math

import numpy as np
import pytest

from mcflow.cli import RunConfig, dispatch, load_run_config
from mcflow.video import Video, load_video, save_video


def run_cli(capsys, *argv):
    rc = dispatch(list(argv))
    cap = capsys.readouterr()
    return rc, cap.out, cap.err


def write_config(path, **overrides):
    cfg = {"seed": 1, "model_dim": 16, "n_heads": 2, "n_layers": 1,
           "steps": 3, "batch": 1, "height": 8, "width": 8}
    cfg.update(overrides)
    path.write_text(json.dumps(cfg))
    return path


def test_chunk_plan_json(capsys):
    rc, out, _ = run_cli(capsys, "chunk-plan", "--total", "98", "--keyframes", "0,50")
    assert rc == 0
    plan = json.loads(out)
    assert plan["keyframes"] == [0, 49]
    assert plan["offsets"] == [0, -1]
    assert plan["lengths"] == [49, 49]
    assert plan["latent_lengths"] == [13, 13]
    assert plan["keyframe_latent_positions"] == [0, 13]


def test_chunk_plan_inadmissible_total(capsys):
    rc, _, err = run_cli(capsys, "chunk-plan", "--total", "97", "--keyframes", "0,50")
    assert rc == 1
    assert err.startswith("error:")
    assert "98" in err


def test_chunk_plan_bad_keyframes_list(capsys):
    rc, _, err = run_cli(capsys, "chunk-plan", "--total", "98", "--keyframes", "0,x")
    assert rc == 1
    assert "--keyframes" in err


def test_rope_dump_values(capsys):
    rc, out, _ = run_cli(capsys, "rope-dump", "--lengths", "3,2")
    assert rc == 0
    lines = out.strip().splitlines()
    assert lines[0] == "index,chunk,u"
    assert lines[1:] == ["0,0,0.0", "1,0,1.0", "2,0,2.0", "3,1,2.25", "4,1,3.25"]


def test_rope_dump_to_file(tmp_path, capsys):
    out = tmp_path / "u.csv"
    rc, _, _ = run_cli(capsys, "rope-dump", "--lengths", "5", "--out", str(out))
    assert rc == 0
    assert out.read_text().strip().splitlines()[-1] == "4,0,4.0"


def test_missing_required_flag_exits_2(capsys):
    rc, _, err = run_cli(capsys, "gen-sample", "--model", "x", "--frames", "y",
                         "--request", "z", "--out", "w")
    assert rc == 2
    assert "--seed" in err


def test_unknown_flag_exits_2(capsys):
    rc, _, _ = run_cli(capsys, "chunk-plan", "--total", "98", "--keyframes", "0", "--bogus")
    assert rc == 2


def test_no_subcommand_exits_2(capsys):
    rc, _, _ = run_cli(capsys)
    assert rc == 2


def test_help_exits_0(capsys):
    assert run_cli(capsys, "--help")[0] == 0
    for sub in ("make-data", "chunk-plan", "rope-dump", "gen-train",
                "gen-sample", "sr-train", "sr-sample", "eval"):
        rc, out, _ = run_cli(capsys, sub, "--help")
        assert rc == 0
        assert "--" in out


def test_make_data_layout_and_determinism(tmp_path, capsys):
    argv = ["make-data", "--n", "2", "--length", "21", "--height", "8",
            "--width", "8", "--seed", "5"]
    rc, _, _ = run_cli(capsys, *argv, "--out", str(tmp_path / "a"))
    assert rc == 0
    rc, _, _ = run_cli(capsys, *argv, "--out", str(tmp_path / "b"))
    assert rc == 0
    d = tmp_path / "a" / "scenario_000"
    assert (d / "video.mcvd").exists()
    assert (d / "caption.json").exists()
    assert (d / "frames" / "frame_00000.pgm").exists()
    req = json.loads((d / "request.json").read_text())
    assert req == {"total_frames": 21, "keyframes": [0]}
    for name in ("scenario_000", "scenario_001"):
        same = (tmp_path / "a" / name / "video.mcvd").read_bytes()
        other = (tmp_path / "b" / name / "video.mcvd").read_bytes()
        assert same == other


def test_make_data_rejects_multichannel(tmp_path, capsys):
    rc, _, err = run_cli(capsys, "make-data", "--out", str(tmp_path), "--channels", "3",
                         "--seed", "1")
    assert rc == 1
    assert "channels" in err


def test_eval_ratings(tmp_path, capsys):
    ratings = tmp_path / "r.txt"
    ratings.write_text("1 2 3\n4,5\n")
    rc, out, _ = run_cli(capsys, "eval", "--ratings", str(ratings))
    assert rc == 0
    lines = out.strip().splitlines()
    assert lines[0] == "metric,name,value"
    metric, name, value = lines[1].split(",")
    assert (metric, name) == ("gsb", "overall")
    assert float(value) == 0.0


def test_eval_videos_with_adherence(tmp_path, rng, capsys):
    v = Video(rng.uniform(0, 1, (21, 1, 8, 8)))
    save_video(tmp_path / "pred.mcvd", v)
    save_video(tmp_path / "ref.mcvd", v)
    req = tmp_path / "req.json"
    req.write_text(json.dumps({"total_frames": 21, "keyframes": [0]}))
    rc, out, _ = run_cli(capsys, "eval", "--pred", str(tmp_path / "pred.mcvd"),
                         "--ref", str(tmp_path / "ref.mcvd"), "--request", str(req))
    assert rc == 0
    rows = {line.split(",")[0]: line.split(",")[2] for line in out.strip().splitlines()[1:]}
    assert float(rows["psnr"]) == math.inf
    assert float(rows["ssim"]) == pytest.approx(1.0)
    assert math.isfinite(float(rows["adherence"]))


def test_eval_pred_without_ref(tmp_path, capsys):
    rc, _, err = run_cli(capsys, "eval", "--pred", str(tmp_path / "x.mcvd"))
    assert rc == 1
    assert "--ref" in err


def test_eval_nothing_to_do(capsys):
    rc, _, err = run_cli(capsys, "eval")
    assert rc == 1
    assert "nothing" in err


def test_run_config_validation(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"seed": 1, "bogus": 2}))
    with pytest.raises(ValueError, match="bogus"):
        load_run_config(p)
    p.write_text(json.dumps({"steps": 5}))
    with pytest.raises(ValueError, match="seed"):
        load_run_config(p)
    p.write_text(json.dumps({"seed": 1, "lr": True}))
    with pytest.raises(ValueError, match="lr"):
        load_run_config(p)
    p.write_text(json.dumps({"seed": 1, "steps": 2.5}))
    with pytest.raises(ValueError, match="steps"):
        load_run_config(p)
    p.write_text(json.dumps([1, 2]))
    with pytest.raises(ValueError, match="object"):
        load_run_config(p)
    p.write_text(json.dumps({"seed": 4, "lr": 0.01}))
    run = load_run_config(p)
    assert run == RunConfig(seed=4, lr=0.01)


def test_gen_train_and_sample_end_to_end(tmp_path, capsys):
    data = tmp_path / "data"
    rc, _, _ = run_cli(capsys, "make-data", "--out", str(data), "--n", "2",
                       "--length", "21", "--height", "8", "--width", "8", "--seed", "5")
    assert rc == 0
    cfg = write_config(tmp_path / "cfg.json")
    ckpt = tmp_path / "gen.mckp"
    losses = tmp_path / "losses.csv"
    rc, out, err = run_cli(capsys, "gen-train", "--data", str(data), "--config", str(cfg),
                           "--out", str(ckpt), "--losses", str(losses))
    assert rc == 0, err
    assert ckpt.exists()
    trace = losses.read_text().strip().splitlines()
    assert trace[0] == "step,loss"
    assert len(trace) == 4

    out_video = tmp_path / "out.mcvd"
    rc, _, err = run_cli(capsys, "gen-sample", "--model", str(ckpt),
                         "--frames", str(data / "scenario_001" / "frames"),
                         "--request", str(data / "scenario_001" / "request.json"),
                         "--out", str(out_video), "--steps", "2", "--scenario", "1",
                         "--seed", "3")
    assert rc == 0, err
    assert load_video(out_video).frames == 21


def test_sr_train_and_sample_end_to_end(tmp_path, capsys):
    data = tmp_path / "data"
    rc, _, _ = run_cli(capsys, "make-data", "--out", str(data), "--n", "2",
                       "--length", "21", "--height", "8", "--width", "8", "--seed", "9")
    assert rc == 0
    cfg = write_config(tmp_path / "cfg.json", steps=2)
    ckpt = tmp_path / "sr.mckp"
    rc, _, err = run_cli(capsys, "sr-train", "--data", str(data), "--config", str(cfg),
                         "--out", str(ckpt))
    assert rc == 0, err

    hr = load_video(data / "scenario_000" / "video.mcvd")
    t, c, h, w = hr.data.shape
    lr = Video(hr.data.reshape(t, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)))
    save_video(tmp_path / "lr.mcvd", lr)
    out_video = tmp_path / "sr_out.mcvd"
    rc, _, err = run_cli(capsys, "sr-sample", "--model", str(ckpt),
                         "--lr-video", str(tmp_path / "lr.mcvd"),
                         "--frames", str(data / "scenario_000" / "frames"),
                         "--request", str(data / "scenario_000" / "request.json"),
                         "--out", str(out_video), "--steps", "2")
    assert rc == 0, err
    v = load_video(out_video)
    assert v.frames == 21 and v.height == 8 and v.width == 8
