"""End-to-end command-line checks, run in process through main(argv)."""

import csv
import io
import json

import pytest

from fbmsde import gamma2_coefficients
from fbmsde.cli import main

ROTATION_FIELDS = "-x2\nx1\n"
SHEAR_FIELDS = "1\n0\n\n0\nx1\n"
TRANSLATION_FIELDS = "1\n"


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def fields_file(tmp_path):
    def write(content, name="fields.txt"):
        path = tmp_path / name
        path.write_text(content)
        return str(path)

    return write


# ---------------------------------------------------------------------------
# fbm sample


def test_fbm_sample_stdout_and_config(capsys):
    rc = main(["fbm", "sample", "--hurst", "0.75", "--mesh", "10", "--dim", "2",
               "--seed", "42"])
    out, err = capsys.readouterr()
    assert rc == 0
    lines = out.splitlines()
    assert lines[0] == "t,b1,b2"
    assert len(lines) == 1 + (2**10 + 1)
    config = json.loads(err)
    assert config["command"] == "fbm sample"
    assert config["hurst"] == 0.75 and config["seed"] == 42


def test_fbm_sample_is_reproducible(capsys):
    argv = ["fbm", "sample", "--hurst", "0.5", "--mesh", "6", "--seed", "7"]
    main(argv)
    first = capsys.readouterr().out
    main(argv)
    second = capsys.readouterr().out
    assert first == second


def test_fbm_sample_out_file_and_sidecar(tmp_path, capsys):
    out = tmp_path / "path.csv"
    rc = main(["fbm", "sample", "--hurst", "0.5", "--mesh", "4", "--seed", "1",
               "--out", str(out)])
    assert rc == 0
    assert f"wrote {out}" in capsys.readouterr().out
    assert out.read_text().startswith("t,b1")
    sidecar = json.loads((tmp_path / "path.csv.config.json").read_text())
    assert sidecar["mesh"] == 4 and sidecar["command"] == "fbm sample"


def test_outdir_redirects_bare_names_only(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("FBMSDE_OUTDIR", str(tmp_path / "runs"))
    rc = main(["fbm", "sample", "--hurst", "0.5", "--mesh", "3", "--seed", "1",
               "--out", "grid.csv"])
    assert rc == 0
    capsys.readouterr()
    assert (tmp_path / "runs" / "grid.csv").exists()
    explicit = tmp_path / "elsewhere" / "grid.csv"
    main(["fbm", "sample", "--hurst", "0.5", "--mesh", "3", "--seed", "1",
          "--out", str(explicit)])
    capsys.readouterr()
    assert explicit.exists()


def test_fbm_sample_rejects_bad_hurst(capsys):
    rc = main(["fbm", "sample", "--hurst", "1.0", "--mesh", "4", "--seed", "1"])
    assert rc == 2
    assert "(0, 1)" in capsys.readouterr().err


def test_fbm_sample_needs_seed(capsys):
    rc = main(["fbm", "sample", "--hurst", "0.5", "--mesh", "4"])
    assert rc == 2
    assert "--seed" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# moments


def test_moments_closed_values(capsys):
    rc = main(["moments", "--hurst", "0.3", "--word", "1,1", "--word", "1,2"])
    out, _ = capsys.readouterr()
    assert rc == 0
    rows = _rows(out)
    assert [r["word"] for r in rows] == ["1,1", "1,2"]
    assert float(rows[0]["value"]) == 0.5
    assert float(rows[1]["value"]) == 0.0
    assert rows[0]["method"] == "closed"


def test_moments_wick_agrees_with_closed(capsys):
    word = "1,1,2,2"
    main(["moments", "--hurst", "0.75", "--word", word])
    closed = float(_rows(capsys.readouterr().out)[0]["value"])
    main(["moments", "--hurst", "0.75", "--word", word, "--method", "wick"])
    wick = float(_rows(capsys.readouterr().out)[0]["value"])
    assert abs(closed - wick) <= 1e-7


def test_moments_mc_odd_word_is_noise_around_zero(capsys):
    rc = main(["moments", "--hurst", "0.6", "--word", "1,2,3", "--method", "mc",
               "--mesh", "6", "--replicates", "4000", "--seed", "5"])
    out, _ = capsys.readouterr()
    assert rc == 0
    row = _rows(out)[0]
    value, se = float(row["value"]), float(row["std_error"])
    assert se > 0.0
    assert abs(value) <= 4 * se
    assert row["mesh_level"] == "6" and row["replicates"] == "4000"


def test_moments_closed_refuses_long_words(capsys):
    rc = main(["moments", "--hurst", "0.75", "--word", "1,1,2,2,1,1"])
    assert rc == 3
    assert "mc" in capsys.readouterr().err


def test_moments_mc_needs_seed(capsys):
    rc = main(["moments", "--hurst", "0.5", "--word", "1,1", "--method", "mc"])
    assert rc == 2
    assert "--seed" in capsys.readouterr().err


def test_moments_word_parse_error(capsys):
    rc = main(["moments", "--hurst", "0.5", "--word", "1,x"])
    assert rc == 2


def test_moments_threads_do_not_change_bytes(capsys):
    base = ["moments", "--hurst", "0.75", "--word", "1,2,1,2", "--method", "mc",
            "--mesh", "6", "--replicates", "4000", "--seed", "11"]
    main(base + ["--threads", "1"])
    one = capsys.readouterr().out
    main(base + ["--threads", "3"])
    three = capsys.readouterr().out
    assert one == three


# ---------------------------------------------------------------------------
# gamma


def test_gamma_brownian_triple(fields_file, capsys):
    rc = main(["gamma", "--k", "2", "--hurst", "0.5",
               "--fields", fields_file(TRANSLATION_FIELDS)])
    out, _ = capsys.readouterr()
    assert rc == 0
    payload = json.loads(out)
    assert payload["pairing_triple"] == [0.125, 0.0, 0.0]
    assert payload["terms"] == [
        {"word": [1, 1, 1, 1], "coefficient": 0.125, "se": None}
    ]


def test_gamma_rough_triple_prints_full_precision(fields_file, capsys):
    rc = main(["gamma", "--k", "2", "--hurst", "0.75",
               "--fields", fields_file(SHEAR_FIELDS)])
    out, _ = capsys.readouterr()
    assert rc == 0
    payload = json.loads(out)
    triple = gamma2_coefficients(0.75).as_tuple()
    assert payload["pairing_triple"] == pytest.approx(triple, abs=1e-16)
    # floats are serialized at 17 significant digits
    assert f"{triple[0]:.17g}" in out


def test_gamma_k3_needs_an_explicit_engine(fields_file, capsys):
    rc = main(["gamma", "--k", "3", "--hurst", "0.5",
               "--fields", fields_file(SHEAR_FIELDS)])
    assert rc == 3
    err = capsys.readouterr().err
    assert "mc" in err and "commutative" in err


def test_gamma_csv_format(fields_file, capsys):
    rc = main(["gamma", "--k", "1", "--hurst", "0.3", "--format", "csv",
               "--fields", fields_file(SHEAR_FIELDS)])
    out, _ = capsys.readouterr()
    assert rc == 0
    rows = _rows(out)
    assert [(r["word"], float(r["coefficient"])) for r in rows] == [
        ("1,1", 0.5), ("2,2", 0.5)
    ]


# ---------------------------------------------------------------------------
# expand


def test_expand_exact_case_asserts_clean(fields_file, tmp_path, capsys):
    out = tmp_path / "report.json"
    rc = main(["expand", "--hurst", "0.5",
               "--fields", fields_file(TRANSLATION_FIELDS),
               "--function", "x1^2", "--x0", "0.3",
               "--solver", "commutative", "--replicates", "20000",
               "--seed", "7", "--assert", "--out", str(out)])
    assert rc == 0
    capsys.readouterr()
    payload = json.loads(out.read_text())
    assert payload["verdict"] == "remainder below MC resolution"
    assert payload["terms"][1] == {"k": 1, "exponent": 1.0, "value": 1.0}
    assert json.loads((tmp_path / "report.json.config.json").read_text())[
        "n_terms"] == 2


def test_expand_without_correction_terms_fails_assert(fields_file, capsys):
    rc = main(["expand", "--hurst", "0.5", "--n-terms", "0",
               "--fields", fields_file(TRANSLATION_FIELDS),
               "--function", "x1^2", "--x0", "0.3",
               "--solver", "commutative", "--replicates", "4000",
               "--seed", "7", "--assert"])
    assert rc == 5
    assert "assertion failed" in capsys.readouterr().err


def test_expand_needs_seed(fields_file, capsys):
    rc = main(["expand", "--hurst", "0.5",
               "--fields", fields_file(TRANSLATION_FIELDS),
               "--function", "x1", "--x0", "0", "--replicates", "100"])
    assert rc == 2


# ---------------------------------------------------------------------------
# invariant


def test_invariant_circle_asserts_clean(fields_file, capsys):
    rc = main(["invariant", "--hurst", "0.75", "--measure", "circle",
               "--fields", fields_file(ROTATION_FIELDS), "--kmax", "2",
               "--degree", "2", "--assert", "--tol", "1e-6"])
    out, _ = capsys.readouterr()
    assert rc == 0
    payload = json.loads(out)
    assert payload["measure"] == "circle"
    worst = max(abs(v) for row in payload["values"] for v in row)
    assert worst <= 1e-6


def test_invariant_point_measure_requires_location(fields_file, capsys):
    rc = main(["invariant", "--hurst", "0.5", "--measure", "point",
               "--fields", fields_file(TRANSLATION_FIELDS)])
    assert rc == 2
    assert "--x0" in capsys.readouterr().err


def test_invariant_empty_function_file_is_usage_error(fields_file, capsys):
    rc = main(["invariant", "--hurst", "0.5", "--measure", "point",
               "--x0", "0.7", "--fields", fields_file("x1^2\n"),
               "--kmax", "1", "--functions", "/dev/null",
               "--assert", "--tol", "1e-8"])
    assert rc == 2


def test_invariant_point_assertion_fires_off_equilibrium(fields_file, tmp_path,
                                                         capsys):
    functions = tmp_path / "fs.txt"
    functions.write_text("sin(x1)\n")
    rc = main(["invariant", "--hurst", "0.6", "--measure", "point",
               "--x0", "0.7", "--fields", fields_file("x1^2\n"),
               "--kmax", "1", "--functions", str(functions),
               "--assert", "--tol", "1e-8"])
    assert rc == 5
    assert "assertion failed" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# signature-check


def test_signature_check_reports_tiny_defect(capsys):
    rc = main(["signature-check", "--segments", "5", "--degree", "4",
               "--split", "0.37", "--seed", "3", "--assert"])
    out, _ = capsys.readouterr()
    assert rc == 0
    payload = json.loads(out)
    assert payload["max_defect"] <= 1e-12
    assert payload["segments"] == 5 and payload["split"] == 0.37


def test_signature_check_strict_tolerance_fails(capsys):
    rc = main(["signature-check", "--segments", "5", "--degree", "4",
               "--split", "0.37", "--seed", "3", "--assert", "--tol", "0"])
    assert rc == 5


# ---------------------------------------------------------------------------
# parser behavior


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_bare_fbm_subcommand_is_usage_error(capsys):
    assert main(["fbm"]) == 2


def test_unknown_flag_exits_two():
    with pytest.raises(SystemExit) as err:
        main(["moments", "--hurst", "0.5", "--word", "1,1", "--frobnicate"])
    assert err.value.code == 2
