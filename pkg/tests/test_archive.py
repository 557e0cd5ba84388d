import json
import os
import shutil

import numpy as np
import pytest

from surrocal.archive import read_archive, read_fit, write_fit, write_world
from surrocal.emulator import EmulatorParams, predict_surrogate
from surrocal.errors import SchemaError
from surrocal.fixtures import TABLE1, TABLE2, params_row, row_params, table_params


@pytest.fixture(scope="module")
def archive_dir(small_world, tmp_path_factory):
    p = tmp_path_factory.mktemp("arch") / "a"
    write_world(str(p), small_world)
    return str(p)


def test_round_trip_is_exact(small_world, archive_dir):
    a = read_archive(archive_dir)
    assert np.array_equal(a.design, small_world.design)
    for name, ens in small_world.ensembles.items():
        assert np.array_equal(a.ensembles[name].members, ens.members)
        assert np.array_equal(a.observations.fields[name], small_world.observations.fields[name])
    assert a.manifest["world_config"]["seed"] == 11


def test_design_row_mismatch(archive_dir, tmp_path):
    bad = tmp_path / "bad"
    shutil.copytree(archive_dir, bad)
    lines = open(bad / "design.csv").read().splitlines()
    open(bad / "design.csv", "w").write("\n".join(lines[:-1]) + "\n")
    with pytest.raises(SchemaError, match="design.csv"):
        read_archive(str(bad))


def test_missing_file_and_bad_version(archive_dir, tmp_path):
    bad = tmp_path / "bad"
    shutil.copytree(archive_dir, bad)
    os.remove(bad / "surface" / "member_2.csv")
    with pytest.raises(FileNotFoundError, match="member_2"):
        read_archive(str(bad))
    m = json.load(open(bad / "manifest.json"))
    m["schema_version"] = 99
    json.dump(m, open(bad / "manifest.json", "w"))
    with pytest.raises(SchemaError, match="schema_version"):
        read_archive(str(bad))


def test_fit_file_round_trip(small_fits, archive_dir, tmp_path):
    arch = read_archive(archive_dir)
    fit = small_fits["upper_air"]
    write_fit(tmp_path / "u.json", fit, archive_dir)
    again = read_fit(tmp_path / "u.json", arch)
    theta = arch.design.mean(axis=0)
    a, b = predict_surrogate(fit, theta), predict_surrogate(again, theta)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.cov, b.cov)


@pytest.mark.parametrize("table,rows", [(1, TABLE1), (2, TABLE2)])
def test_table_rows_round_trip(table, rows):
    for name, row in rows.items():
        p = row_params(name, row)
        back = EmulatorParams.from_dict(json.loads(json.dumps(p.to_dict())))
        got = params_row(back)
        assert got == {k: float(v) for k, v in row.items()}
    assert set(table_params(table)) == {"surface", "ocean", "upper_air"}
