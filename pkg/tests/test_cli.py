import json

import numpy as np
import pytest

from cxtalk import __version__
from cxtalk.cli import DEFAULTS, config_hash, dump_config, load_config, main
from cxtalk.crosstalk import load_spectrum_csv


def write(path, text):
    path.write_text(text)
    return str(path)


def report(path):
    out = {}
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            continue
        k, v = line.split(": ", 1)
        out[k] = v
    return out


def test_simulate_continuous(tmp_path, capsys):
    assert main(["simulate", "--out", str(tmp_path)]) == 0
    rep = report(tmp_path / "dip_report.txt")
    assert float(rep["dip_depth"]) == pytest.approx(float(rep["product_identity"]), abs=1e-9)
    for name in ("base_spectrum.csv", "crosstalk_spectrum.csv", "dip_report.txt"):
        first = (tmp_path / name).read_text().splitlines()[0]
        assert first == f"# cxtalk {__version__} config={config_hash(load_config())}"
    assert "dip_depth" in capsys.readouterr().out


def test_simulate_zero_coupling(tmp_path):
    cfg = write(tmp_path / "c.toml", "[discriminator]\nk_a = 0.0\nk_b = 0.0\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert float(report(tmp_path / "o" / "dip_report.txt")["dip_depth"]) == 0.0


def test_simulate_pulsed_peaks(tmp_path):
    assert main(["simulate", "--mode", "pulsed", "--out", str(tmp_path)]) == 0
    spec = load_spectrum_csv(tmp_path / "base_spectrum.csv")
    v, t = spec.values, spec.tau
    is_max = (v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:])
    centers = t[1:-1][is_max]
    assert np.allclose(centers, 11.8 * np.arange(-3, 4), atol=0.051)


def test_simulate_is_byte_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--mode", "pulsed", "--variant", "literal", "--out", str(tmp_path / d)]) == 0
    for name in ("base_spectrum.csv", "crosstalk_spectrum.csv", "dip_report.txt", "crosstalk_spectrum.csv.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_montecarlo_deterministic_and_table(tmp_path, capsys):
    args = ["montecarlo", "--seed", "7", "--events", "200000"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    out = capsys.readouterr().out
    assert "dist/sigma" in out and "MC dip (profile fit)" in out
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("mc_spectrum.csv", "mc_spectrum.csv.json", "mc_comparison.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    side = json.loads((tmp_path / "a" / "mc_spectrum.csv.json").read_text())
    assert side["totals"]["starts"] == 200000


def test_montecarlo_rejects_zero_events(tmp_path, capsys):
    assert main(["montecarlo", "--events", "0", "--out", str(tmp_path)]) == 2
    assert "events" in capsys.readouterr().err


def test_fit_recovers_simulated_depth(tmp_path):
    main(["simulate", "--out", str(tmp_path)])
    assert main(["fit", "--in", str(tmp_path / "crosstalk_spectrum.csv"), "--out", str(tmp_path / "f")]) == 0
    configured = float(report(tmp_path / "dip_report.txt")["dip_depth"])
    fitted = json.loads((tmp_path / "f" / "fit.txt.json").read_text())["fit"]["depth"]
    # the overlap profile has a cusp; a Gaussian reads its depth about 10% low
    assert fitted == pytest.approx(configured, rel=0.12)
    assert fitted < configured


def test_fit_peaks(tmp_path, capsys):
    main(["simulate", "--mode", "pulsed", "--out", str(tmp_path)])
    assert main(["fit", "--kind", "peaks", "--in", str(tmp_path / "base_spectrum.csv"), "--out", str(tmp_path)]) == 0
    payload = json.loads((tmp_path / "fit.txt.json").read_text())["fit"]
    assert len(payload["peaks"]) == 7
    assert all(p["params"]["sigma"] == pytest.approx(1.994, rel=0.01) for p in payload["peaks"])


def test_correct_identity_and_exact(tmp_path, capsys):
    flat = write(tmp_path / "k0.toml", "[discriminator]\nk_a = 0.0\nk_b = 0.0\n")
    main(["simulate", "--config", flat, "--out", str(tmp_path / "ref0")])
    main(["simulate", "--mode", "pulsed", "--out", str(tmp_path / "p")])
    main(["simulate", "--out", str(tmp_path / "c")])
    pulsed = str(tmp_path / "p" / "crosstalk_spectrum.csv")
    assert main(["correct", "--in", pulsed, "--reference", str(tmp_path / "ref0" / "crosstalk_spectrum.csv"),
                 "--out", str(tmp_path / "id")]) == 0
    before = load_spectrum_csv(pulsed)
    after = load_spectrum_csv(tmp_path / "id" / "corrected_spectrum.csv")
    assert np.allclose(after.values, before.values, rtol=1e-8, atol=0)
    capsys.readouterr()
    assert main(["correct", "--in", pulsed, "--reference", str(tmp_path / "c" / "crosstalk_spectrum.csv"),
                 "--reference-mode", "tabulated", "--out", str(tmp_path / "ex")]) == 0
    rep = report(tmp_path / "ex" / "correction_report.txt")
    base = load_spectrum_csv(tmp_path / "p" / "base_spectrum.csv")
    from cxtalk.crosstalk import peak_maxima
    pk = peak_maxima(base, 11.8, range(-3, 4))
    base_ratio = pk[0] / np.mean([v for i, v in pk.items() if i])
    # corrected pulsed spectrum has the crosstalk-free central/side ratio
    assert float(rep["central_ratio_after"]) / base_ratio == pytest.approx(1.0, abs=1e-9)
    assert float(rep["central_ratio_before"]) < float(rep["central_ratio_after"])


def test_malformed_csv_reports_row(tmp_path, capsys):
    bad = write(tmp_path / "bad.csv", "tau_ns,value\n-0.1,3\n0.0,x\n0.1,3\n")
    assert main(["fit", "--in", bad, "--out", str(tmp_path)]) == 2
    assert "row 3" in capsys.readouterr().err


def test_sweep(tmp_path, capsys):
    zero = write(tmp_path / "z.toml", "[discriminator]\nk_a = 0.0\nk_b = 0.0\n")
    assert main(["sweep-threshold", "--config", zero, "--from", "0.1", "--to", "0.3", "--steps", "5"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert rows[0] == "v_th_V,F_A,F_B,predicted_dip" and len(rows) == 6
    assert all(float(x) == 0 for r in rows[1:] for x in r.split(",")[1:])

    flat = write(tmp_path / "f.toml", "[discriminator.phd_a]\nfamily = \"uniform\"\nlo = 0.0\nhi = 1.0\n"
                                      "[discriminator.phd_b]\nfamily = \"uniform\"\nlo = 0.0\nhi = 1.0\n")
    assert main(["sweep-threshold", "--config", flat, "--from", "0.05", "--to", "0.9", "--steps", "9",
                 "--out", str(tmp_path / "sw")]) == 0
    rows = capsys.readouterr().out.strip().splitlines()[1:]
    assert all(float(r.split(",")[3]) > 0 for r in rows)
    assert (tmp_path / "sw" / "threshold_sweep.csv").read_text().startswith("# cxtalk")

    hist = tmp_path / "notch.csv"
    hist.write_text("bin_left_V,bin_right_V,counts\n0,0.1,20\n0.1,0.14,30\n0.14,0.17,0\n0.17,0.5,80\n0.5,1.0,40\n")
    notch = write(tmp_path / "n.toml", f"[discriminator.phd_a]\nfamily = \"empirical\"\npath = \"{hist}\"\n"
                                       f"[discriminator.phd_b]\nfamily = \"empirical\"\npath = \"{hist}\"\n")
    assert main(["sweep-threshold", "--config", notch, "--from", "0.15", "--to", "0.15", "--steps", "1"]) == 0
    row = capsys.readouterr().out.strip().splitlines()[1].split(",")
    assert float(row[1]) == 0 and float(row[2]) == 0

    assert main(["sweep-threshold", "--config", flat, "--from", "0.1", "--to", "1.5"]) == 2


def test_unknown_key_has_line_number(tmp_path, capsys):
    cfg = write(tmp_path / "c.toml", "[source]\nlam = 0.1\n\n[montecarlo]\nseed = 3\nbogus = 1\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "c.toml:6" in capsys.readouterr().err
    bad_type = write(tmp_path / "t.toml", "[source]\nlam = \"lots\"\n")
    assert main(["simulate", "--config", bad_type]) == 2
    broken = write(tmp_path / "b.toml", "[source\n")
    assert main(["simulate", "--config", broken]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.toml")]) == 2
    invalid = write(tmp_path / "i.toml", "[source]\ntau0 = -1.0\n")
    assert main(["simulate", "--config", invalid]) == 2


def test_dump_config_round_trip(tmp_path, capsys):
    cfg = write(tmp_path / "c.toml", "[source]\nlam = 0.2\n[discriminator.phd_a]\nfamily = \"uniform\"\nlo = 0.0\nhi = 1.0\n")
    assert main(["--config", cfg, "--dump-config"]) == 0
    dumped = capsys.readouterr().out
    again = write(tmp_path / "again.toml", dumped)
    assert load_config(again) == load_config(cfg)
    assert dump_config(load_config(again)) == dumped
    assert load_config() == DEFAULTS


def test_numerical_failure_exit_code(tmp_path, capsys):
    cfg = write(tmp_path / "c.toml", "[discriminator]\nv_th = 5.0\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 3
    assert "numerical" in capsys.readouterr().err


def test_no_command_is_usage_error():
    assert main([]) == 2
