import json
import shutil
import subprocess
import sys

import pytest

from canreid.channels import read_manifest
from canreid.cli import main
from canreid.synthetic import BusLayout

from conftest import TINY_ITS


def tiny_config(out, **extra):
    doc = {
        "seed": 3,
        "out": str(out),
        "synth": {"n_drivers": 3, "trace_duration": 300, "separation": 1.0},
        "split": {"shift": 2.0, "sample_duration": 20},
        "its": {k: v for k, v in TINY_ITS.items()},
        "training": {"max_epochs": 1, "max_per_class": 40},
        "mixture": {"k": 2, "max_epochs": 3},
        "scenarios": [{"kind": "one_vs_all"}, {"kind": "many_vs_all", "group_size": 2, "trials": 2},
                      {"kind": "all_vs_all"}],
    }
    doc.update(extra)
    return doc


def write_config(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


STAGES = ["synth", "extract", "split", "train-its", "train-mixture", "eval"]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = write_config(base, tiny_config(base / "out"))
    for stage in STAGES:
        assert main([stage, "--config", cfg]) == 0, stage
    return base / "out", cfg


def test_synth_outputs(run_dir):
    out, _ = run_dir
    assert sorted(p.name for p in (out / "logs").iterdir()) == [f"driver_{i:02d}.log" for i in range(3)]
    assert (out / "layout.json").exists() and (out / "metas.json").exists()


def test_manifest_matches_layout(run_dir):
    out, _ = run_dir
    layout = BusLayout.load(out / "layout.json")
    kept = {ch for ch, _, _ in read_manifest(out / "manifest.txt")}
    assert kept == layout.channels("signal", "noise")
    rates = {str(ch): r for ch, r, _ in read_manifest(out / "manifest.txt")}
    assert rates["0x00a0:0"] == 100 and rates["0x0208:0"] == 10


def test_ranking_and_models(run_dir):
    out, _ = run_dir
    lines = [l.split() for l in (out / "ranking.txt").read_text().splitlines() if not l.startswith("#")]
    models = sorted((out / "models").glob("its_*.json"))
    assert len(lines) == len(models) == 8
    accs = [float(l[2]) for l in lines]
    assert accs == sorted(accs, reverse=True)
    assert [int(l[0]) for l in lines] == list(range(1, 9))


def test_reports(run_dir):
    out, _ = run_dir
    names = sorted(p.name for p in (out / "reports").glob("*.json"))
    assert names == ["all_vs_all_20s.json", "many_vs_all_m2_20s.json", "one_vs_all_20s.json"]
    one = json.loads((out / "reports" / "one_vs_all_20s.json").read_text())
    assert len(one["accuracies"]) == 3
    assert set(one["attributes"]) == {"gender", "age", "experience"}
    assert one["context"]["k"] == 2
    csv = (out / "reports" / "one_vs_all_20s.csv").read_text().splitlines()
    assert csv[0] == "model_id,accuracy" and len(csv) == 4
    mixture = json.loads((out / "mixture.json").read_text())
    assert len(mixture["architecture"]["experts"]) == 2


def test_rerun_is_identical(run_dir):
    out, cfg = run_dir
    before = {p: p.read_bytes() for p in out.rglob("*") if p.is_file()}
    for stage in STAGES[1:]:
        assert main([stage, "--config", cfg]) == 0
    after = {p: p.read_bytes() for p in out.rglob("*") if p.is_file()}
    assert after == before


def test_parallel_training_matches_serial(run_dir, tmp_path):
    out, _ = run_dir
    other = tmp_path / "par"
    shutil.copytree(out, other, ignore=shutil.ignore_patterns("models", "ranking.txt", "reports"))
    cfg = write_config(tmp_path, tiny_config(other))
    assert main(["train-its", "--config", cfg, "--jobs", "2"]) == 0
    assert (other / "ranking.txt").read_bytes() == (out / "ranking.txt").read_bytes()


def test_tampered_expert_is_an_internal_error(run_dir, tmp_path):
    out, _ = run_dir
    other = tmp_path / "tamper"
    shutil.copytree(out, other)
    victim = sorted((other / "models").glob("its_*.json"))[0]
    victim.write_bytes(victim.read_bytes().replace(b'"seed"', b'"seed" ', 1))
    cfg = write_config(tmp_path, tiny_config(other))
    assert main(["eval", "--config", cfg]) == 3


def test_user_errors(tmp_path):
    assert main(["extract", "--config", str(tmp_path / "nope.json")]) == 1
    assert main(["extract", "--out", str(tmp_path / "o")]) == 1  # no seed
    assert main(["extract", "--config", write_config(tmp_path, tiny_config(tmp_path / "o", bogus=1))]) == 1
    bad = tiny_config(tmp_path / "o")
    bad["split"]["colour"] = "red"
    assert main(["split", "--config", write_config(tmp_path, bad)]) == 1
    assert main(["train-its", "--config", write_config(tmp_path, tiny_config(tmp_path / "empty"))]) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit):
        main(["eval", "--duration", "45"])


def test_missing_input_is_reported_per_driver(tmp_path, capsys):
    doc = tiny_config(tmp_path / "o", inputs={"a": str(tmp_path / "a.log"), "b": str(tmp_path / "b.log")})
    (tmp_path / "b.log").write_text("1.0 0x001 000 0x1 0x00\n")
    assert main(["extract", "--config", write_config(tmp_path, doc)]) == 1
    err = capsys.readouterr().err
    assert "extract_failed driver=a" in err
    assert not (tmp_path / "o" / "manifest.txt").exists()


def test_malformed_input_is_a_data_error(tmp_path):
    (tmp_path / "a.log").write_text("1.0 0x001 000 0x2 0x00\n")
    doc = tiny_config(tmp_path / "o", inputs={"a": str(tmp_path / "a.log")})
    assert main(["extract", "--config", write_config(tmp_path, doc)]) == 2


def test_flags_override_config(tmp_path):
    cfg = write_config(tmp_path, tiny_config(tmp_path / "ignored"))
    out = tmp_path / "flagged"
    assert main(["synth", "--config", cfg, "--out", str(out), "--seed", "9"]) == 0
    assert (out / "logs").is_dir()
    assert not (tmp_path / "ignored").exists()


def test_synth_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--config", write_config(tmp_path, tiny_config(tmp_path / name))]) == 0
    for p in (tmp_path / "a").rglob("*"):
        if p.is_file():
            assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "gradcheck.json").read_text())
    assert all(v["passed"] for v in doc.values())
    assert "status=FAIL" not in capsys.readouterr().err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "canreid", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "train-its" in res.stdout


def test_set_overrides_any_leaf(tmp_path):
    cfg = write_config(tmp_path, tiny_config(tmp_path / "o"))
    out = tmp_path / "set"
    assert main(["synth", "--config", cfg, "--set", f"out={json.dumps(str(out))}",
                 "--set", "synth.n_drivers=2"]) == 0
    assert len(list((out / "logs").iterdir())) == 2
    assert main(["synth", "--config", cfg, "--set", "synth.colour=1"]) == 1
    assert main(["synth", "--config", cfg, "--set", "novalue"]) == 1
