"""Tests for the command-line surface.

Commands are invoked in-process through cli.main so exit codes and artifacts
can be asserted without subprocess overhead.  The tiny n=1 scenario reuses
the frequency certified in test_engine (its certificate covers every N up to
10, and the model here has N = 8).
"""

import hashlib
import json
import os
import shutil

import numpy as np
import pytest

from kamreduce import cli
from kamreduce.serialize import load_json

OMEGA = 0.13799890521733005
# omega hitting lambda_2 - lambda_1 = 3 omega exactly (d = 4/3 ladder)
OMEGA_RESONANT = (2.0 ** (4.0 / 3.0) - 1.0) / 3.0


def _doc(out, **overrides):
    doc = {
        "scenario": "cli-tiny",
        "seed": 7,
        "out": out,
        "model": {
            "kind": "abstract",
            "N": 8,
            "n": 1,
            "d": 4.0 / 3.0,
            "delta": 0.2,
            "K": 2,
            "model_seed": 11,
        },
        "settings": {
            "epsilon": 1e-3,
            "s": 0.05,
            "gamma": 0.05,
            "tau": 8.0,
            "K_base": 4,
            "tol": 1e-12,
            "l_max": 8,
        },
        "frequency": {"omega": [OMEGA]},
        "verify": {"t_max": 10.0, "num_times": 20, "tol": 1e-4},
        "spectrum": {"Kmax": 1},
    }
    doc.update(overrides)
    return doc


def _write(tmp_path, doc, name="manifest.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def _run(cmd, manifest_path, out=None, extra=()):
    argv = [cmd, "--manifest", manifest_path]
    if out is not None:
        argv += ["--out", str(out)]
    return cli.main(argv + list(extra))


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli_run")
    manifest = _write(tmp, _doc(str(tmp / "run")))
    assert _run("reduce", manifest) == cli.EXIT_OK
    return tmp, manifest, tmp / "run"


# ---------------------------------------------------------------------------
# reduce
# ---------------------------------------------------------------------------

def test_reduce_reference_artifacts(finished_run):
    _, _, outdir = finished_run
    red = load_json(outdir / "reduced.json")
    assert red["converged"] is True
    assert len(red["norm_history"]) <= 5
    assert red["norm_history"][-1] < 1e-12
    steps = load_json(outdir / "steps.json")
    assert steps[0]["l"] == 1 and steps[0]["hom_residual"] < 1e-9
    assert (outdir / "spectrum.json").is_file()
    assert (outdir / "checksums.json").is_file()
    events = [json.loads(line) for line in (outdir / "log.jsonl").read_text().splitlines()]
    assert events[0]["event"] == "reduce.start"
    assert events[-1]["event"] == "reduce.done"


def test_reduce_epsilon_zero_immediate(tmp_path):
    doc = _doc(str(tmp_path / "r"))
    doc["settings"] = dict(doc["settings"], epsilon=0.0)
    assert _run("reduce", _write(tmp_path, doc)) == cli.EXIT_OK
    red = load_json(tmp_path / "r" / "reduced.json")
    assert red["steps"] == 0 and red["generators"] == []


def test_reduce_resonant_frequency_exit_code(tmp_path):
    doc = _doc(str(tmp_path / "r"), frequency={"omega": [OMEGA_RESONANT]})
    assert _run("reduce", _write(tmp_path, doc)) == cli.EXIT_FREQUENCY
    err = load_json(tmp_path / "r" / "error.json")
    assert err["error"] == "frequency-excluded"


def test_reduce_divergent_epsilon_exit_code(tmp_path):
    doc = _doc(str(tmp_path / "r"))
    doc["settings"] = dict(doc["settings"], epsilon=0.3)
    code = _run("reduce", _write(tmp_path, doc))
    assert code == cli.EXIT_DIVERGENCE
    err = load_json(tmp_path / "r" / "error.json")
    assert "norm_history" in err


def test_schema_error_exit_code(tmp_path):
    doc = _doc(str(tmp_path / "r"))
    del doc["settings"]["gamma"]
    assert _run("reduce", _write(tmp_path, doc)) == cli.EXIT_SCHEMA


def test_reduce_is_byte_deterministic(tmp_path):
    doc = _doc(str(tmp_path / "r"))
    manifest = _write(tmp_path, doc)

    def snapshot():
        out = {}
        for name in sorted(os.listdir(tmp_path / "r")):
            if name == "timings.txt":
                continue
            out[name] = hashlib.sha256((tmp_path / "r" / name).read_bytes()).hexdigest()
        return out

    assert _run("reduce", manifest) == cli.EXIT_OK
    first = snapshot()
    assert _run("reduce", manifest) == cli.EXIT_OK
    assert snapshot() == first


# ---------------------------------------------------------------------------
# verify / spectrum
# ---------------------------------------------------------------------------

def test_verify_reference_run(finished_run):
    _, manifest, outdir = finished_run
    assert _run("verify", manifest) == cli.EXIT_OK
    rep = load_json(outdir / "verify.json")
    assert rep["passed"] and rep["max_deviation"] < 1e-4
    assert rep["quasi_energy"]["max_error"] < 1e-6


def test_verify_epsilon_zero_pure_scheme_error(tmp_path):
    doc = _doc(str(tmp_path / "r"))
    doc["settings"] = dict(doc["settings"], epsilon=0.0)
    doc["verify"] = {"t_max": 10.0, "num_times": 20, "tol": 1e-9}
    manifest = _write(tmp_path, doc)
    assert _run("reduce", manifest) == cli.EXIT_OK
    assert _run("verify", manifest) == cli.EXIT_OK
    rep = load_json(tmp_path / "r" / "verify.json")
    assert rep["max_deviation"] < 1e-9


def test_verify_corrupted_artifact_checksum(finished_run, tmp_path):
    _, _, outdir = finished_run
    copy = tmp_path / "copy"
    shutil.copytree(outdir, copy)
    with open(copy / "steps.json", "a") as fh:
        fh.write(" ")
    doc = _doc(str(copy))
    assert _run("verify", _write(tmp_path, doc)) == cli.EXIT_ARTIFACT


def test_verify_missing_artifacts(tmp_path):
    doc = _doc(str(tmp_path / "empty"))
    (tmp_path / "empty").mkdir()
    assert _run("verify", _write(tmp_path, doc)) == cli.EXIT_ARTIFACT


def test_spectrum_table_and_kmax_flag(finished_run, tmp_path):
    _, manifest, outdir = finished_run
    copy = tmp_path / "spec"
    shutil.copytree(outdir, copy)
    doc = _doc(str(copy))
    assert _run("spectrum", _write(tmp_path, doc), extra=("--kmax", "2")) == cli.EXIT_OK
    table = load_json(copy / "spectrum.json")
    assert table["Kmax"] == 2
    assert len(table["nu"]) == 8 * 5  # N modes times 2 Kmax + 1 harmonics
    lines = (copy / "spectrum.csv").read_text().splitlines()
    assert lines[0] == "nu,mode,multiplicity,k1"
    assert len(lines) == 1 + 8 * 5


# ---------------------------------------------------------------------------
# frequencies / model
# ---------------------------------------------------------------------------

def test_frequencies_monotone_table_and_certificate(tmp_path):
    doc = _doc(str(tmp_path / "f"))
    doc["frequencies"] = {
        "gamma_grid": [0.02, 0.08, 0.14, 0.2],
        "num_samples": 500,
        "Kmax": 12,
    }
    manifest = _write(tmp_path, doc)
    assert _run("frequencies", manifest) == cli.EXIT_OK
    table = load_json(tmp_path / "f" / "frequencies.json")
    fractions = [row["fraction"] for row in table["rejection"]["table"]]
    assert all(b >= a for a, b in zip(fractions, fractions[1:]))
    assert table["certificate"]["passed"] is True
    csv = (tmp_path / "f" / "rejection.csv").read_text().splitlines()
    assert csv[0] == "gamma,rejection_fraction"
    assert len(csv) == 5


def test_frequencies_empty_grid_usage_error(tmp_path):
    doc = _doc(str(tmp_path / "f"))
    doc["frequencies"] = {"gamma_grid": [], "num_samples": 100}
    assert _run("frequencies", _write(tmp_path, doc)) == cli.EXIT_SCHEMA


def test_frequencies_sampling_request(tmp_path):
    doc = _doc(str(tmp_path / "f"))
    doc["frequency"] = {"sample": {"Kmax": 16, "num_candidates": 200}}
    assert _run("frequencies", _write(tmp_path, doc)) == cli.EXIT_OK
    table = load_json(tmp_path / "f" / "frequencies.json")
    assert table["chosen"]["dio1"]["passed"] is True
    assert len(table["chosen"]["omega"]) == 1


def test_model_command_reports_lambda_table(tmp_path):
    doc = _doc(str(tmp_path / "m"))
    assert _run("model", _write(tmp_path, doc)) == cli.EXIT_OK
    info = load_json(tmp_path / "m" / "model.json")
    assert info["N"] == 8 and info["kind"] == "abstract"
    assert np.allclose(info["lambda"], np.arange(1, 9) ** (4.0 / 3.0))
    assert abs(info["norm"] - 1e-3) < 1e-12


def test_seed_override_changes_sampled_frequency(tmp_path):
    doc = _doc(str(tmp_path / "f"))
    doc["frequency"] = {"sample": {"Kmax": 16, "num_candidates": 200}}
    manifest = _write(tmp_path, doc)
    assert _run("frequencies", manifest) == cli.EXIT_OK
    first = load_json(tmp_path / "f" / "frequencies.json")["chosen"]["omega"]
    assert cli.main(
        ["frequencies", "--manifest", manifest, "--seed", "123"]
    ) == cli.EXIT_OK
    second = load_json(tmp_path / "f" / "frequencies.json")["chosen"]["omega"]
    assert first != second
