import csv
import json

import numpy as np
import pytest

from kicktop import cli
from kicktop.cli import ConfigError, RunConfig, load_config, main, parse_real
from kicktop.floquet import write_spectrum, floquet_spectrum
from kicktop.spin import SpinSystem


def test_parse_real():
    assert parse_real("11*pi/19") == pytest.approx(11 * np.pi / 19)
    assert parse_real("pi") == pytest.approx(np.pi)
    assert parse_real("-pi/2") == pytest.approx(-np.pi / 2)
    assert parse_real("2.5") == 2.5
    with pytest.raises(ConfigError):
        parse_real("eleven")


def test_defaults():
    cfg = RunConfig().validate()
    assert cfg.grid == (200, 400)
    assert cfg.n_kicks == 300 and cfg.threshold == 1e-8
    assert cfg.alpha == pytest.approx(11 * np.pi / 19)


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("j_list = 8, 16  # comment\ngamma_list = 1, 2.6\ngrid = 20x40\nwindows = -0.9:0.5, -0.5:0\n")
    cfg = load_config(path, {"gamma_list": "3"})
    assert cfg.j_list == [8, 16]
    assert cfg.gamma_list == [3.0]
    assert cfg.grid == (20, 40)
    assert cfg.windows == [(-0.9, 0.5), (-0.5, 0.0)]


@pytest.mark.parametrize("key,value", [
    ("j_list", "0"), ("grid", "21x40"), ("threshold", "1"), ("windows", "0.5:-0.5"),
    ("basis", "dicke"), ("nonsense", "1"), ("n_kicks", "many"),
])
def test_invalid_config(key, value):
    with pytest.raises(ConfigError):
        load_config(None, {key: value})


def test_refuses_large_j(tmp_path, caplog):
    code = main(["spectral", "--j", "4096", "-o", str(tmp_path / "o"), "--cache-dir", str(tmp_path / "c")])
    assert code == cli.EXIT_USAGE
    assert "GB" in caplog.text


def test_refuses_coarse_grid(tmp_path):
    args = ["spectral", "--j", "40", "--grid", "8x16", "-o", str(tmp_path / "o"), "--cache-dir", str(tmp_path / "c")]
    assert main(args) == cli.EXIT_USAGE


def test_bad_config_exit_code(tmp_path):
    assert main(["spectral", "-s", "grid=bad", "-o", str(tmp_path)]) == cli.EXIT_USAGE


def test_spectral_and_cache(tmp_path):
    args = ["spectral", "--j", "12", "--gamma", "0,8", "--grid", "20x40",
            "-o", str(tmp_path / "o"), "--cache-dir", str(tmp_path / "c")]
    assert main(args) == 0
    rows = list(csv.DictReader(open(tmp_path / "o" / "spectral.csv")))
    assert [float(r["gamma"]) for r in rows] == [0.0, 8.0]
    cached = sorted(p.name for p in (tmp_path / "c" / "spectra").iterdir())
    assert len(cached) == 4 and all(name.endswith("_v1.bin") for name in cached)
    first = (tmp_path / "o" / "spectral.csv").read_bytes()
    assert main(args) == 0
    assert (tmp_path / "o" / "spectral.csv").read_bytes() == first


def test_stale_cache_is_recomputed(tmp_path):
    sys = SpinSystem(6, 11 * np.pi / 19, 2.0)
    cfg = RunConfig(j_list=[6], gamma_list=[2.0], cache_dir=str(tmp_path))
    runner = cli.Runner(cfg, tmp_path)
    path = runner._spectrum_path(sys, "odd")
    path.parent.mkdir(parents=True)
    write_spectrum(path, floquet_spectrum(sys, "odd"))
    raw = bytearray(path.read_bytes())
    raw[8] = 7  # older format version
    path.write_bytes(bytes(raw))
    odd, _ = runner.spectra(sys)
    assert odd.dim == 6
    assert path.read_bytes()[8] == 1


def test_lock_excludes_second_run(tmp_path):
    with cli.cache_lock(tmp_path):
        with pytest.raises(RuntimeError):
            with cli.cache_lock(tmp_path):
                pass


def test_husimi_decay_and_audit(tmp_path):
    common = ["--grid", "20x40", "-s", "n_kicks=60", "--gamma", "2.6",
              "--cache-dir", str(tmp_path / "c"), "-o", str(tmp_path / "o")]
    assert main(["classical", *common]) == 0
    assert main(["husimi", "--j", "8,12,16,20", "-s", "box=-1,1,0,2", *common]) == 0
    recs = list(csv.DictReader(open(tmp_path / "o" / "records_j8_gamma2.6.csv")))
    assert len(recs) == 17
    assert len(list((tmp_path / "o" / "fields" / "j8_gamma2.6").glob("Q_*.csv"))) == 17
    assert main(["decay", "--j", "8,12,16,20", "-s", "delta_m=0.5", *common]) == 0
    fits = json.load(open(tmp_path / "o" / "fits.json"))
    assert "2.6" in fits and "sliding" in fits["2.6"]
    audit = ["audit", "--j", "8", "-s", "audit_grids=10x20,20x40", *common]
    assert main(audit) == 0
    report = json.load(open(tmp_path / "o" / "audit.json"))
    assert report["oracle"][0]["passed"]
    assert len(report["grid"]) == 2


def test_empty_box_dump(tmp_path):
    common = ["--grid", "20x40", "-s", "n_kicks=30", "--gamma", "2.6", "--j", "8",
              "--cache-dir", str(tmp_path / "c"), "-o", str(tmp_path / "o")]
    assert main(["husimi", "-s", "box=0.1,0.11,5,6", *common]) == 0
    sel = json.load(open(tmp_path / "o" / "fields" / "j8_gamma2.6" / "selection.json"))
    assert sel["ids"] == []


def test_classical_gamma_zero(tmp_path):
    args = ["classical", "--gamma", "0", "--grid", "10x20", "-s", "n_kicks=50",
            "--cache-dir", str(tmp_path / "c"), "-o", str(tmp_path / "o")]
    assert main(args) == 0
    rows = list(csv.DictReader(open(tmp_path / "o" / "mu_c.csv")))
    assert float(rows[0]["mu_c"]) == 0.0


def test_failed_cell_sets_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("eigensolver did not converge")
    monkeypatch.setattr(cli, "floquet_spectrum", boom)
    args = ["spectral", "--j", "4", "--grid", "10x20", "--cache-dir", str(tmp_path / "c"), "-o", str(tmp_path / "o")]
    assert main(args) == cli.EXIT_FAILED
    assert (tmp_path / "o" / "spectral.csv").exists()
