import json
from pathlib import Path

import numpy as np
import pytest

from exogait.bundle import save_bundle
from exogait.cli import main, EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_VERSION


@pytest.fixture(scope="module")
def tiny_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.yaml"
    p.write_text(
        "profile: desk\n"
        "cohort:\n"
        "  n_subjects: 3\n"
        "  n_validation: 1\n"
        "  strides_per_activity: 2\n"
        "  activities: [level, stair_up]\n"
        "ensemble:\n"
        "  n_members: 2\n"
        "  mc_samples: 12\n"
    )
    return str(p)


@pytest.fixture(scope="module")
def stub_bundle_dir(tmp_path_factory):
    from conftest import make_stub_bundle
    d = tmp_path_factory.mktemp("bundle") / "stub"
    save_bundle(make_stub_bundle(), d)
    return str(d)


def test_gen_writes_cohort(tmp_path, tiny_cfg):
    out = tmp_path / "cohort"
    rc = main(["gen", "--config", tiny_cfg, "--out", str(out), "--seed", "1"])
    assert rc == EXIT_OK
    files = sorted(p.name for p in out.glob("*.csv"))
    assert "S00.csv" in files and "S00_strides.csv" in files
    assert len([f for f in files if not f.endswith("_strides.csv")]) == 3


def test_gen_deterministic(tmp_path, tiny_cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen", "--config", tiny_cfg, "--out", str(a), "--seed", "4"]) == EXIT_OK
    assert main(["gen", "--config", tiny_cfg, "--out", str(b), "--seed", "4"]) == EXIT_OK
    assert (a / "S00.csv").read_text() == (b / "S00.csv").read_text()


def test_sim_reference_scenario_segments(tmp_path, tiny_cfg, stub_bundle_dir):
    out = tmp_path / "session.csv"
    rc = main(["sim", "--config", tiny_cfg, "--bundle", stub_bundle_dir,
               "--out", str(out), "--duration", "4.5", "--seed", "2"])
    assert rc == EXIT_OK
    from exogait.runtime import read_session_log
    log = read_session_log(out)
    assert len(log) > 100
    assert "A_transparency" in set(log.segments())


def test_sim_missing_bundle(tmp_path, tiny_cfg):
    rc = main(["sim", "--config", tiny_cfg, "--bundle", str(tmp_path / "nope"),
               "--out", str(tmp_path / "s.csv")])
    assert rc == EXIT_USAGE or rc == EXIT_MISSING


def test_bundle_version_guard(tmp_path, tiny_cfg, stub_bundle_dir):
    import shutil
    broken = tmp_path / "broken"
    shutil.copytree(stub_bundle_dir, broken)
    mpath = broken / "manifest.json"
    manifest = json.loads(mpath.read_text())
    manifest["format_version"] = 99
    mpath.write_text(json.dumps(manifest))
    rc = main(["sim", "--config", tiny_cfg, "--bundle", str(broken),
               "--out", str(tmp_path / "s.csv"), "--duration", "1"])
    assert rc == EXIT_VERSION


def test_export_from_session(tmp_path, tiny_cfg, stub_bundle_dir):
    session = tmp_path / "session.csv"
    assert main(["sim", "--config", tiny_cfg, "--bundle", stub_bundle_dir,
                 "--out", str(session), "--duration", "4", "--seed", "3"]) == EXIT_OK
    out = tmp_path / "plots"
    rc = main(["export", "--config", tiny_cfg, "--session", str(session),
               "--out", str(out)])
    assert rc == EXIT_OK
    assert (out / "stride_kinematics.csv").exists()


def test_export_nothing_is_usage_error(tmp_path, tiny_cfg):
    rc = main(["export", "--config", tiny_cfg, "--out", str(tmp_path / "x")])
    assert rc == EXIT_USAGE


def test_unknown_config_key_rejected(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("train:\n  warp: 9\n")
    rc = main(["gen", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert rc == EXIT_USAGE
