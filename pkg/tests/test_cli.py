import filecmp

import pytest

from pathgreeks.cli import ConfigError, bundled_config, load_config, main

SMALL = """
[model]
kind = {kind}
sigma = {sigma}
x0 = 100

[contract]
label = {label}
maturity = 1.0
{contract}

[mc]
n_paths = 3000
n_steps = 20
seed = 5
block_size = 500

[greeks]
estimators = {estimators}
{greeks}
"""


def write(tmp_path, name="exp.ini", kind="black_scholes", sigma=0.25, label="european_call",
          contract="strike = 100", estimators="price, delta", greeks=""):
    f = tmp_path / name
    f.write_text(SMALL.format(kind=kind, sigma=sigma, label=label, contract=contract,
                              estimators=estimators, greeks=greeks))
    return f


def test_run_writes_outputs(tmp_path, capsys):
    cfg = write(tmp_path, estimators="price, delta, gamma, vega",
                greeks="fd_delta = 0.5\n\n[vega_surface]\nbins = 8\ntime_stride = 5\nn_paths = 2000")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    rows = (out / "results.csv").read_text().splitlines()
    assert rows[0] == "label,mean,std_error,n_paths,seed"
    assert [r.split(",")[0] for r in rows[1:]] == ["price", "delta", "gamma", "vega", "fd_delta"]
    assert all(r.endswith(",3000,5") for r in rows[1:])
    assert (out / "convergence.csv").exists()
    assert (out / "vega_surface.csv").read_text().startswith("t,x_low,x_high,m,occupancy")
    assert "delta" in capsys.readouterr().out


def test_run_is_byte_identical_across_threads(tmp_path):
    cfg = write(tmp_path, estimators="price, delta, gamma")
    for t in (1, 4, 8):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / f"t{t}"), "--threads", str(t)]) == 0
    for name in ("results.csv", "convergence.csv"):
        assert filecmp.cmp(tmp_path / "t1" / name, tmp_path / "t4" / name, shallow=False)
        assert filecmp.cmp(tmp_path / "t1" / name, tmp_path / "t8" / name, shallow=False)


def test_seed_override(tmp_path):
    cfg = write(tmp_path)
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed-override", "6"])
    a = (tmp_path / "a" / "results.csv").read_text()
    b = (tmp_path / "b" / "results.csv").read_text()
    assert a != b and b.splitlines()[1].endswith(",6")


def test_gamma_violation_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, label="asian_forward_start", contract="t1 = 0.2", sigma=0.2,
                greeks="weight = delayed\nt1 = 0.2\nallocation = constant\nallocation_value = 4.0")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "int_0^t1 a dt = 1" in capsys.readouterr().err


def test_bundled_bad_allocation_exits_2(tmp_path):
    assert main(["run", "--config", "asian_bad_allocation", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize(
    "kwargs",
    [
        {"label": "digital"},
        {"kind": "heston"},
        {"estimators": "price, theta"},
        {"greeks": "weight = sideways"},
        {"contract": ""},
    ],
)
def test_validation_errors_exit_2(tmp_path, kwargs):
    cfg = write(tmp_path, **kwargs)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_missing_sections(tmp_path):
    f = tmp_path / "x.ini"
    f.write_text("[model]\nsigma = 0.2\n")
    with pytest.raises(ConfigError, match=r"\[contract\]"):
        load_config(f)
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 2


def test_numerical_failure_exits_3(tmp_path):
    # the tangent of this CEV model overflows on the first step
    cfg = write(tmp_path, kind="cev", sigma=1e200, greeks="")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


@pytest.mark.parametrize(
    "name, label",
    [
        ("classify_european", "weakly"),
        ("classify_average", "strongly"),
        ("classify_asian", "delayed(0.2)"),
    ],
)
def test_classify_bundled(tmp_path, capsys, name, label):
    assert main(["classify", "--config", name, "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip() == label
    assert (tmp_path / "label.txt").read_text().strip() == label
    assert (tmp_path / "evidence.csv").read_text().startswith("time,abs_bracket")


def test_classify_needs_probe_times(tmp_path):
    cfg = write(tmp_path)
    assert main(["classify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_dump_paths(tmp_path):
    cfg = write(tmp_path)
    cfg.write_text(cfg.read_text() + "\n[dump]\nn_paths = 7\n")
    assert main(["dump-paths", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    lines = (tmp_path / "d" / "paths.csv").read_text().splitlines()
    assert len(lines) == 8
    assert lines[0].startswith("path,grid_step,x_0")


def test_bundled_configs_parse():
    for name in ("vko_table2", "asian_table4", "bs_call"):
        cfg = load_config(bundled_config(name))
        assert cfg.mc.n_paths >= 2
    vko = load_config(bundled_config("vko_table2"))
    assert vko.contract.params == {"strike": 100.0, "barrier": 0.06}
    assert vko.mc.n_steps == 52
    asian = load_config(bundled_config("asian_table4"))
    assert asian.weight.kind == "delayed" and asian.weight.t1 == 0.2
