import csv
import io
import json

import numpy as np
import pytest

from neuralqaad.autodecoder import load_checkpoint
from neuralqaad.cli import main, read_config, ConfigError
from neuralqaad.metrics import emkd
from neuralqaad.pointcloud import PointCloud, load_cloud, save_cloud, save_dataset, synthetic_dataset


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def clouds(tmp_path, rng):
    a, b = tmp_path / "a.xyz", tmp_path / "b.xyz"
    save_cloud(PointCloud(rng.normal(size=(64, 3))), a)
    save_cloud(PointCloud(rng.normal(size=(64, 3))), b)
    return a, b


def test_metric_chamfer_self(clouds, capsys):
    code, out, _ = run(["metric", str(clouds[0]), str(clouds[0]), "--kind", "chamfer"], capsys)
    assert code == 0 and out == "chamfer,0.0,,,\n"


def test_metric_emkd_is_thin_wrapper(clouds, capsys):
    a, b = clouds
    code, out, _ = run(["metric", str(a), str(b), "--kind", "emkd", "--depth", "2",
                        "--threads", "1"], capsys)
    lib = emkd(load_cloud(a), load_cloud(b), depth=2, epsilon=1.0, max_iterations=100)
    assert code == 0
    assert float(out.split(",")[1]) == lib.value


def test_metric_missing_file(tmp_path, clouds, capsys):
    missing = tmp_path / "nope.xyz"
    code, _, err = run(["metric", str(clouds[0]), str(missing)], capsys)
    assert code == 1 and str(missing) in err


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["metric"])
    assert exc.value.code == 2


def test_gen_grid_cube(tmp_path, capsys):
    out = tmp_path / "g.xyz"
    assert run(["gen", "grid_cube", "27", str(out)], capsys)[0] == 0
    pts = load_cloud(out).points
    assert pts.shape == (27, 3)
    assert sorted(map(tuple, pts)) == [(x, y, z) for x in range(3) for y in range(3) for z in range(3)]


def test_gen_ply_format(tmp_path, capsys):
    out = tmp_path / "g.bin"
    assert run(["gen", "gaussian_blobs", "10", str(out), "--format", "ply", "--seed", "3"], capsys)[0] == 0
    assert out.read_bytes().startswith(b"ply")


def write_config(path, body):
    path.write_text(body)
    return path


def toy_config(tmp_path, data_dir, extra=""):
    return write_config(tmp_path / "train.ini", f"""
[data]
dir = {data_dir}

[model]
k = 4
latent_dim = 4
width = 16

[train]
epochs = 4
batch_size = 2
sample_size = 32
depth = 1
epsilon = 0.001
max_iterations = 10000
checkpoint_every = 2
seed = 3

[output]
dir = {tmp_path / 'run'}
log_timing = false
{extra}
""")


@pytest.fixture
def data_dir(tmp_path):
    d = tmp_path / "data"
    save_dataset(synthetic_dataset("gaussian_blobs", 3, 64, seed=0), d)
    return d


def test_config_error_names_key(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.ini", "[train]\nepochz = 3\n")
    code, _, err = run(["train", str(cfg)], capsys)
    assert code == 2 and "train.epochz" in err
    cfg = write_config(tmp_path / "d.ini", "[train]\nepochs = three\n")
    code, _, err = run(["train", str(cfg)], capsys)
    assert code == 2 and "train.epochs" in err


def test_config_sample_size_not_divisible(tmp_path, data_dir, capsys):
    cfg = toy_config(tmp_path, data_dir)
    cfg.write_text(cfg.read_text().replace("sample_size = 32", "sample_size = 30"))
    code, _, err = run(["train", str(cfg)], capsys)
    assert code == 2 and "sample_size=30" in err and "k=4" in err


def test_unequal_dataset_names_file(tmp_path, data_dir, capsys, rng):
    save_cloud(PointCloud(rng.normal(size=(10, 3))), data_dir / "zz_bad.xyz")
    code, _, err = run(["train", str(toy_config(tmp_path, data_dir))], capsys)
    assert code == 1 and "zz_bad.xyz" in err


def test_read_config_types(tmp_path):
    cfg = write_config(tmp_path / "c.ini", "[train]\nlr = 0.5\nreassignment = off\n")
    assert read_config(cfg) == {"train": {"lr": 0.5, "reassignment": False}}
    with pytest.raises(ConfigError, match="bogus"):
        read_config(write_config(tmp_path / "e.ini", "[bogus]\n"))


def test_train_resume_reconstruct_eval(tmp_path, data_dir, capsys):
    cfg = toy_config(tmp_path, data_dir)
    run_dir = tmp_path / "run"
    assert run(["train", str(cfg), "--threads", "1"], capsys)[0] == 0
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert len(manifest["inputs"]) == 3 and manifest["seeds"]["train"] == 3
    log_full = (run_dir / "train_log.csv").read_text()
    assert log_full.count("\n") == 1 + 4 * 2
    final = (run_dir / "final.ckpt").read_bytes()
    net, adam, meta, arrays = load_checkpoint(run_dir / "final.ckpt")
    assert meta["epoch"] == 4 and net.config.n_instances == 3

    ckpt = tmp_path / "e2.ckpt"
    ckpt.write_bytes((run_dir / "checkpoints" / "epoch_00002.ckpt").read_bytes())
    assert run(["train", str(cfg), "--threads", "1", "--resume", str(ckpt)], capsys)[0] == 0
    assert (run_dir / "train_log.csv").read_text() == log_full
    assert (run_dir / "final.ckpt").read_bytes() == final

    code, out, _ = run(["eval", str(run_dir / "final.ckpt"), str(data_dir), "--depth", "1",
                        "--epsilon", "0.001", "--iterations", "10000"], capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["instance", "name", "emkd"] and len(rows) == 5
    per = [float(r[2]) for r in rows[1:4]]
    assert float(rows[4][2]) == pytest.approx(np.mean(per), rel=1e-15)

    rec = tmp_path / "rec1.xyz"
    assert run(["reconstruct", str(run_dir / "final.ckpt"), "1", str(rec)], capsys)[0] == 0
    truth = sorted(data_dir.iterdir())[1]
    code, out, _ = run(["metric", str(rec), str(truth), "--kind", "emkd", "--depth", "1",
                        "--epsilon", "0.001", "--iterations", "10000"], capsys)
    assert float(out.split(",")[1]) == per[1]

    code, _, err = run(["reconstruct", str(run_dir / "final.ckpt"), "9", str(rec)], capsys)
    assert code == 1 and "instance 9" in err


def test_eval_single_instance(tmp_path, capsys):
    d = tmp_path / "one"
    save_dataset(synthetic_dataset("gaussian_blobs", 1, 32, seed=0), d)
    cfg = write_config(tmp_path / "t.ini", f"""
[data]
dir = {d}
[model]
k = 4
latent_dim = 2
width = 8
[train]
epochs = 1
batch_size = 1
sample_size = 16
[output]
dir = {tmp_path / 'r'}
""")
    assert run(["train", str(cfg), "--threads", "1"], capsys)[0] == 0
    code, out, _ = run(["eval", str(tmp_path / "r" / "final.ckpt"), str(d)], capsys)
    rows = list(csv.reader(io.StringIO(out)))
    assert len(rows) == 3 and rows[1][2] == rows[2][2]


def test_study_writes_csv(tmp_path, capsys):
    out = tmp_path / "study.csv"
    cfg = write_config(tmp_path / "s.ini", f"""
[study]
synthetic = two_scale_teeth
m = 300
objective = aug_chamfer_direct, mse_random_perfect
fractions = 1.0, 0.5
steps = 4
out = {out}
""")
    assert run(["study", str(cfg)], capsys)[0] == 0
    first = out.read_bytes()
    rows = list(csv.reader(io.StringIO(first.decode())))
    assert rows[0] == ["step", "objective", "fraction", "value"]
    assert len(rows) == 1 + 2 * 2 * 5
    assert {r[1] for r in rows[1:]} == {"aug_chamfer_direct", "mse_random_perfect"}
    assert run(["study", str(cfg)], capsys)[0] == 0
    assert out.read_bytes() == first


def test_runs_in_different_dirs_give_identical_outputs(tmp_path, data_dir, capsys):
    outs = []
    for name in ("x", "y"):
        d = tmp_path / name
        d.mkdir()
        cfg = toy_config(d, data_dir)
        assert run(["train", str(cfg), "--threads", "1"], capsys)[0] == 0
        outs.append(d / "run")
    for f in ("train_log.csv", "final.ckpt", "checkpoints/epoch_00002.ckpt"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
