import json

import numpy as np
import pytest

from td2ip.cli import main
from td2ip.config import RunConfig
from td2ip.data import MotionSequence, save_msq
from td2ip.metrics import write_feature_csv
from td2ip.model import init_params, model_arrays, save_tdw
from td2ip.training import read_epochs_csv

SMALL = dict(joints=3, t_p=4, t_f=3, fps=25, epochs=2, batch_size=8, encoder="mlp", d_e=4, d_h=6, feature=5,
             horizons_ms=[40, 80, 120], compute_fid=False)


def write_config(path, **over):
    cfg = dict(SMALL, **over)
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def gen_dir(tmp_path):
    d = tmp_path / "data"
    assert main(["gen", "--out", str(d), "--sequences", "6", "--frames", "16", "--joints", "3", "--seed", "4"]) == 0
    return d


@pytest.fixture
def run_dir(tmp_path, gen_dir):
    cfg = write_config(tmp_path / "cfg.json")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--data", str(gen_dir), "--out", str(out)]) == 0
    return out


def test_gen_writes_files_and_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["gen", "--out", str(d), "--sequences", "3", "--frames", "5", "--joints", "2"]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == ["manifest.json", "seq_0000.msq", "seq_0001.msq", "seq_0002.msq"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_gen_rejects_zero_frames(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["gen", "--out", str(tmp_path / "x"), "--frames", "0"])
    assert err.value.code == 2


def test_refuses_to_overwrite_without_force(tmp_path, capsys):
    d = tmp_path / "g"
    args = ["gen", "--out", str(d), "--sequences", "1", "--frames", "3", "--joints", "1"]
    assert main(args) == 0
    assert main(args) == 2
    assert "--force" in capsys.readouterr().err
    assert main(args + ["--force"]) == 0


def test_train_outputs(run_dir):
    for name in ("weights.tdw", "epochs.csv", "report.json", "config.used.json"):
        assert (run_dir / name).is_file()
    report = json.loads((run_dir / "report.json").read_text())
    assert set(report) == {"mpjpe_ms", "mpjpe_avg", "fid", "param_count"}
    assert list(report["mpjpe_ms"]) == ["40", "80", "120"]
    logs = read_epochs_csv(run_dir / "epochs.csv")
    assert [e.epoch for e in logs] == [0, 1, 2]
    assert logs[-1].val_mpjpe == pytest.approx(report["mpjpe_avg"], abs=1e-9)


def test_train_rerun_reproduces_report(tmp_path, gen_dir, run_dir):
    out = tmp_path / "again"
    assert main(["train", "--config", str(tmp_path / "cfg.json"), "--data", str(gen_dir), "--out", str(out)]) == 0
    a = json.loads((run_dir / "report.json").read_text())
    b = json.loads((out / "report.json").read_text())
    assert abs(a["mpjpe_avg"] - b["mpjpe_avg"]) <= 1e-9
    for k in a["mpjpe_ms"]:
        assert abs(a["mpjpe_ms"][k] - b["mpjpe_ms"][k]) <= 1e-9


def test_config_echo_closes_the_loop(tmp_path, gen_dir, run_dir):
    echo = run_dir / "config.used.json"
    assert RunConfig.load(echo) == RunConfig.from_dict(dict(SMALL))
    out = tmp_path / "from_echo"
    assert main(["train", "--config", str(echo), "--data", str(gen_dir), "--out", str(out)]) == 0
    assert (out / "report.json").read_text() == (run_dir / "report.json").read_text()
    assert (out / "config.used.json").read_text() == echo.read_text()


def test_train_missing_data_dir(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    assert main(["train", "--config", str(cfg), "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "r")]) == 2


def test_train_unknown_config_key(tmp_path, gen_dir):
    cfg = write_config(tmp_path / "cfg.json", warmup=3)
    assert main(["train", "--config", str(cfg), "--data", str(gen_dir), "--out", str(tmp_path / "r")]) == 2


def test_train_joint_mismatch(tmp_path, gen_dir):
    cfg = write_config(tmp_path / "cfg.json", joints=5)
    assert main(["train", "--config", str(cfg), "--data", str(gen_dir), "--out", str(tmp_path / "r")]) == 2


def test_numeric_failure_exits_3(tmp_path, gen_dir):
    cfg = write_config(tmp_path / "cfg.json", optimizer="sgd", learning_rate=1e200, normalize=False, epochs=3)
    with np.errstate(all="ignore"):
        code = main(["train", "--config", str(cfg), "--data", str(gen_dir), "--out", str(tmp_path / "r")])
    assert code == 3


def test_eval_reproduces_training(tmp_path, gen_dir, run_dir):
    rep = tmp_path / "eval.json"
    export = tmp_path / "export"
    assert main(["eval", "--weights", str(run_dir / "weights.tdw"), "--data", str(gen_dir), "--report", str(rep),
                 "--export-dir", str(export)]) == 0
    final = read_epochs_csv(run_dir / "epochs.csv")[-1].val_mpjpe
    assert abs(json.loads(rep.read_text())["mpjpe_avg"] - final) <= 1e-9
    for name in ("features_pred.csv", "features_gt.csv", "projection.csv"):
        assert (export / name).is_file()
    assert (export / "projection.csv").read_text().splitlines()[0] == "x,y"


def test_eval_dimension_mismatch(tmp_path, gen_dir, run_dir, capsys):
    cfg = write_config(tmp_path / "other.json", t_f=4, horizons_ms=[40])
    code = main(["eval", "--weights", str(run_dir / "weights.tdw"), "--data", str(gen_dir),
                 "--report", str(tmp_path / "r.json"), "--config", str(cfg)])
    assert code == 2
    err = capsys.readouterr().err
    assert "weights.tdw" in err and "other.json" in err


def test_eval_zero_model_on_constant_pose(tmp_path):
    data = tmp_path / "still"
    data.mkdir()
    rng = np.random.default_rng(0)
    for i in range(3):
        pose = rng.normal(scale=100, size=(3, 3))
        save_msq(MotionSequence(np.broadcast_to(pose, (12, 3, 3)).copy(), 25.0), data / f"s{i}.msq")
    cfg = write_config(tmp_path / "cfg.json", normalize=False)
    mcfg = RunConfig.load(cfg).model_config()
    model = init_params(mcfg, 0)
    for p in model.params.values():
        p.values[...] = 0.0
    save_tdw(model_arrays(model), tmp_path / "w.tdw")
    rep = tmp_path / "r.json"
    assert main(["eval", "--weights", str(tmp_path / "w.tdw"), "--data", str(data), "--report", str(rep),
                 "--config", str(cfg)]) == 0
    out = json.loads(rep.read_text())
    assert out["mpjpe_ms"] == {"40": 0.0, "80": 0.0, "120": 0.0}


def test_ablate_table_and_json(tmp_path, gen_dir):
    cfg = write_config(tmp_path / "cfg.json", epochs=1)
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(cfg), "--data", str(gen_dir), "--out", str(out), "--seeds", "0", "1"]) == 0
    lines = (out / "ablation.txt").read_text().strip().splitlines()
    payload = json.loads((out / "ablation.json").read_text())
    rows = payload["rows"]
    assert [r["variant"] for r in rows] == ["Lf", "Lf+TDD", "Lf+Lr", "Lr+TDD", "Lf+Lr+TDD"]
    assert len(lines) == 2 + 5
    for line, row in zip(lines[2:], rows):
        assert f"{row['mpjpe_avg_mean']:.3f} ± {row['mpjpe_avg_std']:.3f}" in line
        assert str(row["param_count"]) in line
    for r in rows:
        for s in (0, 1):
            assert (out / r["variant"].replace("+", "_") / f"seed_{s}" / "epochs.csv").is_file()


def test_fid_command(tmp_path, capsys, rng):
    x = rng.normal(size=(10, 3))
    write_feature_csv(x, tmp_path / "a.csv")
    write_feature_csv(x, tmp_path / "b.csv")
    assert main(["fid", "--features-a", str(tmp_path / "a.csv"), "--features-b", str(tmp_path / "b.csv")]) == 0
    assert capsys.readouterr().out.strip() == "0.000000"
    # N(0, 1) versus N(1, 1) from two-point samples with N-1 variance
    (tmp_path / "c.csv").write_text("f0\n-0.7071067811865476\n0.7071067811865476\n")
    (tmp_path / "d.csv").write_text("f0\n0.2928932188134524\n1.7071067811865475\n")
    assert main(["fid", "--features-a", str(tmp_path / "c.csv"), "--features-b", str(tmp_path / "d.csv")]) == 0
    assert capsys.readouterr().out.strip() == "1.000000"


def test_project_command(tmp_path):
    (tmp_path / "f.csv").write_text("f0,f1\n0,0\n1,2\n2,4\n")
    assert main(["project", "--features", str(tmp_path / "f.csv"), "--out", str(tmp_path / "p.csv")]) == 0
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "x,y"
    assert all(abs(float(l.split(",")[1])) <= 1e-10 for l in lines[1:])
    (tmp_path / "bad.csv").write_text("f0,f1\n0,0\n1\n2,4\n")
    assert main(["project", "--features", str(tmp_path / "bad.csv"), "--out", str(tmp_path / "q.csv")]) == 2
