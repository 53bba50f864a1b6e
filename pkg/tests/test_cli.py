import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from cmrrecon import api, cli
from cmrrecon.errors import NumericalError
from cmrrecon.objectives import metric_nmse, metric_ssim
from cmrrecon.phantom import read_subject
from cmrrecon.sampling import make_mask
from cmrrecon.trainer import models_from_checkpoint, prepare_example, reconstruct_example

TINY = Path(__file__).parents[1] / "configs" / "tiny.yaml"


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(autouse=True)
def _no_output_root(monkeypatch):
    monkeypatch.delenv("CMRRECON_OUTPUT_ROOT", raising=False)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert cli.main(["simulate", "--config", str(TINY), "--subjects", "2", "--out", str(data)]) == 0
    run_dir = root / "run"
    assert cli.main(["train", "--config", str(TINY), "--data", str(data), "--out", str(run_dir)]) == 0
    return {"root": root, "data": data, "ckpt": run_dir / "stage0_train.pt", "run": run_dir}


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("simulate", "mask", "train", "eval", "reconstruct", "serve"):
        assert cmd in out


def test_simulate_declared_shapes(tmp_path, capsys):
    code, out, _ = run(["simulate", "--subjects", 2, "--frames", 8, "--coils", 4, "--size", "64x64",
                        "--out", tmp_path / "d"], capsys)
    assert code == 0
    files = sorted((tmp_path / "d").glob("*.h5"))
    assert len(files) == 2
    for f in files:
        assert read_subject(f).kspace_full.shape == (8, 4, 64, 64)
    assert len(json.loads(out)["subjects"]) == 2


def test_simulate_same_seed_bit_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(["simulate", "--config", TINY, "--subjects", 2, "--seed", 5, "--out", tmp_path / name],
                   capsys)[0] == 0
    for f in ("subject_000.h5", "subject_001.h5", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_manifest_checksums(workspace):
    manifest = json.loads((workspace["data"] / "manifest.json").read_text())
    for entry in manifest["subjects"]:
        digest = hashlib.sha256((workspace["data"] / entry["file"]).read_bytes()).hexdigest()
        assert digest == entry["sha256"]
    assert api.verify_manifest(workspace["data"]) == []


def test_simulate_refuses_non_empty_dir(tmp_path, capsys):
    d = tmp_path / "d"
    d.mkdir()
    (d / "keep.txt").write_text("x")
    code, _, err = run(["simulate", "--config", TINY, "--subjects", 1, "--out", d], capsys)
    assert code == 2 and "--force" in err
    assert sorted(p.name for p in d.iterdir()) == ["keep.txt"]
    assert run(["simulate", "--config", TINY, "--subjects", 1, "--out", d, "--force"], capsys)[0] == 0
    assert not (d / "keep.txt").exists()


@pytest.mark.parametrize("argv", [
    ["--size", "64by64"], ["--contrast", "flair"], ["--frames", 0], ["--set", "phantom.colour=1"],
])
def test_simulate_validates_before_writing(tmp_path, capsys, argv):
    out = tmp_path / "never"
    code, _, err = run(["simulate", "--subjects", 1, "--out", out, *argv], capsys)
    assert code == 2 and err.startswith("error:")
    assert not out.exists()


def test_train_writes_checkpoint_and_log(workspace):
    assert workspace["ckpt"].exists()
    lines = (workspace["run"] / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 20 and json.loads(lines[-1])["step"] == 20
    assert json.loads((workspace["run"] / "config.json").read_text())["train"]["max_steps"] == 20


def test_train_invalid_key_named(tmp_path, workspace, capsys):
    out = tmp_path / "run"
    code, _, err = run(["train", "--config", TINY, "--data", workspace["data"], "--out", out,
                        "--set", "train.learning_rate=1"], capsys)
    assert code == 2 and "train.learning_rate" in err
    assert not out.exists()


def test_train_data_error(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code, _, err = run(["train", "--config", TINY, "--data", tmp_path / "empty", "--out", tmp_path / "r"], capsys)
    assert code == 3 and "no subject files" in err
    assert not (tmp_path / "r").exists()


def test_numerical_failure_exit_code(tmp_path, workspace, capsys, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("non-finite value in step0.refiner output")

    monkeypatch.setattr(api, "train", boom)
    code, _, err = run(["train", "--config", TINY, "--data", workspace["data"], "--out", tmp_path / "r"], capsys)
    assert code == 4 and "step0" in err


@pytest.mark.parametrize("task, count", [(1, 3), (2, 1)])
def test_task_modes(tmp_path, workspace, capsys, task, count):
    code, out, _ = run(["train", "--config", TINY, "--data", workspace["data"], "--out", tmp_path / "r",
                        "--task", task, "--max-steps", 1], capsys)
    assert code == 0
    assert len(list((tmp_path / "r").glob("*.pt"))) == count


def test_flags_override_config(tmp_path, workspace, capsys):
    out = tmp_path / "r"
    assert run(["train", "--config", TINY, "--data", workspace["data"], "--out", out, "--max-steps", 3,
                "--set", "train.max_steps=9"], capsys)[0] == 0
    assert len((out / "train_log.jsonl").read_text().splitlines()) == 3


def test_output_root_env(tmp_path, workspace, capsys, monkeypatch):
    monkeypatch.setenv("CMRRECON_OUTPUT_ROOT", str(tmp_path))
    assert run(["mask", "--size", "16x16", "--acs", 4, "--out", "masks/m"], capsys)[0] == 0
    assert (tmp_path / "masks" / "m.npy").exists()


def test_mask_files(tmp_path, capsys):
    code, out, _ = run(["mask", "--trajectory", "gaussian", "--af", 4, "--size", "32x24", "--acs", 4,
                        "--seed", 3, "--out", tmp_path / "m"], capsys)
    assert code == 0
    ref = make_mask("gaussian", 32, 24, 4, 4, 3)
    arr = np.load(tmp_path / "m.npy")
    assert arr.dtype == np.float32 and np.array_equal(arr, ref.data)
    assert np.array_equal(api.read_pgm(tmp_path / "m.pgm"), (ref.data > 0).astype(np.uint8) * 255)
    meta = json.loads((tmp_path / "m.json").read_text())
    assert meta["achieved_acceleration"] == pytest.approx(ref.achieved_acceleration)
    assert json.loads(out)["trajectory"] == "gaussian"


def test_eval_identity_and_baseline(tmp_path, workspace, capsys):
    code, out, _ = run(["eval", "--data", workspace["data"], "--acs", 4, "--out", tmp_path / "e"], capsys)
    assert code == 0
    records = [json.loads(line) for line in (tmp_path / "e" / "metrics.jsonl").read_text().splitlines()]
    assert len(records) == 2 * 4
    assert all(r["recon_nmse"] == 0 for r in records)
    assert all(r["zf_nmse"] > 0 for r in records)
    assert "zero-filled" in out


def test_eval_aggregates_match_records(tmp_path, workspace, capsys):
    code, out, _ = run(["eval", "--checkpoint", workspace["ckpt"], "--data", workspace["data"], "--af", 4, 8,
                        "--out", tmp_path / "e"], capsys)
    assert code == 0
    records = [json.loads(line) for line in (tmp_path / "e" / "metrics.jsonl").read_text().splitlines()]
    assert len(records) == 2 * 4 * 2
    rows = {line.split(" | ")[1]: line for line in out.splitlines() if line.startswith("cine")}
    for af in (4.0, 8.0):
        sel = [r for r in records if r["acceleration"] == af]
        nmse, psnr, ssim = (float(v) for v in rows[str(af)].split(" | ")[3].split("/"))
        assert nmse == pytest.approx(np.mean([r["recon_nmse"] for r in sel]), abs=5e-5)
        assert psnr == pytest.approx(np.mean([r["recon_psnr"] for r in sel]), abs=5e-3)
        assert ssim == pytest.approx(np.mean([r["recon_ssim"] for r in sel]), abs=5e-5)


def test_reconstruct_triptych(tmp_path, workspace, capsys):
    subject = workspace["data"] / "subject_001.h5"
    code, out, _ = run(["reconstruct", "--checkpoint", workspace["ckpt"], "--subject", subject, "--frame", 2,
                        "--out", tmp_path / "r"], capsys)
    assert code == 0
    images = sorted(p.name for p in (tmp_path / "r").glob("*.pgm"))
    assert images == ["gt.pgm", "recon.pgm", "zf.pgm"]
    side = json.loads((tmp_path / "r" / "reconstruction.json").read_text())
    assert side["dtype"] == "uint16" and side["maxval"] == 65535
    gt = api.read_pgm(tmp_path / "r" / "gt.pgm")
    for name in ("gt", "zf", "recon"):
        img = api.read_pgm(tmp_path / "r" / f"{name}.pgm")
        assert img.dtype == np.uint16 and img.shape == (16, 16)
        assert 0 <= img.min() and img.max() <= 65535
    assert gt.max() == 65535  # normalized by the ground-truth peak

    # independent recomputation of the printed SSIM
    gen, _, _ = models_from_checkpoint(workspace["ckpt"])
    rec = read_subject(subject)
    ex = prepare_example(rec, 2, make_mask("uniform", 16, 16, 4.0, gen.cfg.acs_lines, 0), gen.cfg.adjacent)
    recon = reconstruct_example(gen, ex).double().numpy()
    target = ex.target.double().numpy()
    printed = float(out.splitlines()[0].split()[1])
    assert printed == metric_ssim(recon / target.max(), target / target.max())
    assert side["metrics"]["recon"]["nmse"] == pytest.approx(metric_nmse(recon, target), rel=1e-9)
    # the quantized images decode back to the float images within half a level
    np.testing.assert_allclose(gt / 65535.0, target / target.max(), atol=0.5 / 65535 + 1e-12)


def test_reconstruct_bad_frame(tmp_path, workspace, capsys):
    code, _, err = run(["reconstruct", "--checkpoint", workspace["ckpt"], "--subject",
                        workspace["data"] / "subject_000.h5", "--frame", 99, "--out", tmp_path / "r"], capsys)
    assert code == 2 and "frame 99" in err


def test_reconstruct_bad_checkpoint(tmp_path, workspace, capsys):
    bad = tmp_path / "bad.pt"
    bad.write_bytes(b"not a checkpoint")
    code, _, err = run(["reconstruct", "--checkpoint", bad, "--subject", workspace["data"] / "subject_000.h5",
                        "--out", tmp_path / "r"], capsys)
    assert code == 3


def test_pgm_roundtrip(tmp_path):
    img = np.arange(12, dtype=np.uint16).reshape(3, 4) * 5000
    api.write_pgm(tmp_path / "x.pgm", img)
    assert (tmp_path / "x.pgm").read_bytes().startswith(b"P5\n4 3\n65535\n")
    assert np.array_equal(api.read_pgm(tmp_path / "x.pgm"), img)
    (tmp_path / "y.pgm").write_bytes(b"P5\n4 3\n65535\n\x00")
    with pytest.raises(Exception, match="pixel bytes"):
        api.read_pgm(tmp_path / "y.pgm")


def test_commands_deterministic(tmp_path, workspace, capsys):
    outs = []
    for name in ("a", "b"):
        assert run(["train", "--config", TINY, "--data", workspace["data"], "--out", tmp_path / name,
                    "--max-steps", 3], capsys)[0] == 0
        outs.append(tmp_path / name)
    for f in ("train_log.jsonl", "stage0_train.pt", "config.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
