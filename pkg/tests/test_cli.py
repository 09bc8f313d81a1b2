import json

import numpy as np
import pytest

from ctfkit.cli import EXIT_NONE, EXIT_OK, EXIT_PARTIAL, expand_inputs, main
from ctfkit.mrc import read_mrc
from ctfkit.report import reports_from_json, reports_from_tsv

COMMON = ["--pixel-size", "1.34", "--block-sizes", "256", "--no-timing"]


@pytest.fixture(scope="module")
def synth_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "m.mrc"
    code = main(["synth", "--out", str(out), "--pixel-size", "1.34", "--df1", "15500", "--df2", "14500",
                 "--angle", "30", "--size", "1024", "--snr", "2", "--seed", "3"])
    assert code == EXIT_OK
    return out


def test_synth_outputs(synth_file):
    data, header = read_mrc(synth_file)
    assert data.shape == (1024, 1024)
    assert header.pixel_size == pytest.approx(1.34)
    truth = json.loads(synth_file.with_name("m.mrc.json").read_text())
    assert truth["schema_version"] == 1
    assert truth["df1"] == 15500 and truth["alpha_f"] == pytest.approx(np.radians(30))


def test_synth_movie(tmp_path):
    out = tmp_path / "mv.mrc"
    assert main(["synth", "--out", str(out), "--pixel-size", "1.0", "--df1", "10000", "--size", "64",
                 "--frames", "3"]) == EXIT_OK
    assert read_mrc(out)[0].shape == (3, 64, 64)


def test_estimate_ok(tmp_path, synth_file):
    out = tmp_path / "o"
    assert main(["estimate", "--input", str(synth_file), *COMMON, "--out", str(out)]) == EXIT_OK
    reports = reports_from_json((out / "ctf_report.json").read_text())
    assert reports[0].mean_defocus == pytest.approx(15000, rel=0.02)


def test_estimate_partial_tsv(tmp_path, synth_file):
    bad = tmp_path / "bad.mrc"
    bad.write_bytes(b"\0" * 2048)
    out = tmp_path / "o"
    code = main(["estimate", "--input", str(synth_file), str(bad), *COMMON, "--out", str(out),
                 "--format", "tsv"])
    assert code == EXIT_PARTIAL
    reports = reports_from_tsv((out / "ctf_report.tsv").read_text())
    assert [r.status for r in reports] == ["ok", "error"]


def test_estimate_none(tmp_path):
    out = tmp_path / "o"
    assert main(["estimate", "--input", str(tmp_path / "nothing*.mrc"), *COMMON, "--out", str(out)]) == EXIT_NONE
    assert (out / "ctf_report.json").exists()


def test_bad_configuration_exits_3(tmp_path, synth_file):
    code = main(["estimate", "--input", str(synth_file), *COMMON, "--tapers", "4,16", "--out", str(tmp_path)])
    assert code == EXIT_NONE


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--pixel-size", "1.0"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["estimate", "--input", "a", "--pixel-size", "1", "--block-sizes", "x"])


def test_expand_inputs(tmp_path):
    for name in ("b.mrc", "a.mrc"):
        (tmp_path / name).write_bytes(b"")
    paths = expand_inputs([str(tmp_path / "*.mrc"), "missing.mrc"])
    assert [p.rsplit("/", 1)[-1] for p in paths] == ["a.mrc", "b.mrc", "missing.mrc"]
