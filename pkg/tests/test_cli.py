import hashlib
import json

import pytest

from mlelab import cli, diagnostics

MINIMAL = """\
[model]
family = "logistic"
theta0 = 0.0
K = [-10.0, 10.0]

[simulation]
n_grid = [10, 100]
replicates = 200
master_seed = 7

[output]
dir = "{out}"
"""

ARTIFACTS = ("zn.znmx", "report.csv", "report.json", "manifest.json")


def _sha(p):
    return hashlib.sha256(p.read_bytes()).hexdigest()


@pytest.fixture
def minimal(tmp_path):
    out = tmp_path / "run"
    cfg = tmp_path / "mini.toml"
    cfg.write_text(MINIMAL.format(out=out))
    return cfg, out


def test_run_writes_artifacts(minimal, capsys):
    cfg, out = minimal
    assert cli.main(["run", "--config", str(cfg), "-q"]) == 0
    for name in ARTIFACTS:
        assert (out / name).is_file()
    assert "KL_smooth" in capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert manifest["sha256"]["zn.znmx"] == _sha(out / "zn.znmx")
    assert set(manifest["timings_seconds"]) == {"simulate", "diagnose"}
    header = (out / "report.csv").read_text().splitlines()[0]
    assert header == ",".join(diagnostics.CSV_COLUMNS)
    data = json.loads((out / "report.json").read_text())
    assert [r["n"] for r in data["rows"]] == [10, 100]


def test_rerun_is_byte_identical(minimal, tmp_path):
    cfg, out = minimal
    assert cli.main(["run", "--config", str(cfg), "-q", "--workers", "1"]) == 0
    first = {n: _sha(out / n) for n in ("zn.znmx", "report.csv", "report.json")}
    other = tmp_path / "again"
    assert cli.main(["run", "--config", str(cfg), "-q", "--workers", "8", "--out", str(other)]) == 0
    assert {n: _sha(other / n) for n in first} == first


def test_theta0_on_boundary_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(MINIMAL.format(out=tmp_path).replace("theta0 = 0.0", "theta0 = 10.0"))
    assert cli.main(["run", "--config", str(cfg)]) == 2
    assert "theta0" in capsys.readouterr().err


def test_unknown_family_and_preset_exit_2(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(MINIMAL.format(out=tmp_path).replace('"logistic"', '"weibull"'))
    assert cli.main(["run", "--config", str(cfg)]) == 2
    assert cli.main(["run", "--preset", "weibull"]) == 2
    assert cli.main(["run"]) == 2
    assert cli.main(["bogus"]) == 2
    assert cli.main(["run", "--config", str(cfg), "--workers", "0"]) == 2


def test_unwritable_output_exit_2(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = tmp_path / "c.toml"
    cfg.write_text(MINIMAL.format(out=blocker / "sub"))
    assert cli.main(["run", "--config", str(cfg)]) == 2
    assert "output.dir" in capsys.readouterr().err


def test_runtime_failure_exit_3_keeps_cache(minimal, monkeypatch):
    cfg, out = minimal

    def boom(*a, **k):
        raise RuntimeError("estimator exploded")

    monkeypatch.setattr(diagnostics, "build_report", boom)
    assert cli.main(["run", "--config", str(cfg), "-q"]) == 3
    assert (out / "zn.znmx").is_file()
    assert json.loads((out / "manifest.json").read_text())["status"] == "failed"


def test_verify_reports_criteria(minimal, capsys):
    cfg, out = minimal
    cli.main(["run", "--config", str(cfg), "-q"])
    capsys.readouterr()
    code = cli.main(["verify", "--config", str(cfg), "-q"])
    text = capsys.readouterr().out
    for key in cli.CRITERIA:
        assert key in text
    assert code in (0, 1)
    assert (code == 0) == ("FAIL" not in text)
    # config can be recovered from the output directory alone
    assert cli.main(["verify", "--out", str(out), "-q"]) == code


def test_verify_detects_tampering(minimal):
    cfg, out = minimal
    cli.main(["run", "--config", str(cfg), "-q"])
    cache = out / "zn.znmx"
    raw = bytearray(cache.read_bytes())
    raw[len(raw) // 2] ^= 0x01
    cache.write_bytes(bytes(raw))
    assert cli.main(["verify", "--config", str(cfg), "-q"]) == 4


def test_verify_detects_config_change(minimal, tmp_path):
    cfg, out = minimal
    cli.main(["run", "--config", str(cfg), "-q"])
    changed = tmp_path / "changed.toml"
    changed.write_text(cfg.read_text().replace("master_seed = 7", "master_seed = 8"))
    assert cli.main(["verify", "--config", str(changed), "-q"]) == 4


def test_verify_missing_run_exit_3(minimal):
    cfg, _ = minimal
    assert cli.main(["verify", "--config", str(cfg), "-q"]) == 3


def test_gaussian_control_verify_passes(tmp_path):
    cfg = tmp_path / "g.toml"
    cfg.write_text(f"""\
[model]
family = "gaussian"
K = [-10.0, 10.0]

[simulation]
n_grid = [2, 7]
replicates = 100000
epsilon_sweep = []
master_seed = 3

[output]
dir = "{tmp_path / 'g'}"
""")
    assert cli.main(["run", "--config", str(cfg), "-q"]) == 0
    assert cli.main(["verify", "--config", str(cfg), "-q"]) == 0
