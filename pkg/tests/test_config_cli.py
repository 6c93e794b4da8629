import json

import numpy as np
import pytest

from mesohom import cli
from mesohom.config import SCENARIO_DEFAULTS, ScenarioConfig, load_config, make_config, parse_flat
from mesohom.errors import ConfigError, ContractError
from mesohom.runner import RunError, compare, read_csv, run, write_csv

SMALL_PATCH = {"scenario": "patch-linear", "width_m": 0.06, "height_m": 0.06, "bins_nx": 3, "bins_ny": 3}


# -- config -----------------------------------------------------------------


def test_parse_flat_handles_comments_and_blanks():
    vals = parse_flat("# header\n\nscenario = patch-linear  # inline\nseed=3\n")
    assert vals == {"scenario": "patch-linear", "seed": "3"}


@pytest.mark.parametrize("text", ["seed 3\n", "= 3\n", "seed = 1\nseed = 2\n"])
def test_parse_flat_rejects_bad_lines(text):
    with pytest.raises(ConfigError):
        parse_flat(text)


def test_scenario_defaults_fill_in():
    cfg = make_config({"scenario": "cantilever-static"})
    assert (cfg.width_m, cfg.height_m, cfg.bins_nx) == (1.2, 0.3, 40)
    assert make_config({"scenario": "patch-linear"}).network == "dual"


def test_unknown_scenario_lists_choices():
    with pytest.raises(ConfigError) as info:
        make_config({"scenario": "bridge"})
    assert all(name in str(info.value) for name in SCENARIO_DEFAULTS)


@pytest.mark.parametrize(
    "bad",
    [{"fill": "1.5"}, {"E0_pa": "-1"}, {"d_min_m": "0.01", "d_max_m": "0.005"}, {"colour": "red"}, {"variants": ""}],
)
def test_invalid_values_rejected(bad):
    with pytest.raises(ConfigError):
        make_config({"scenario": "patch-linear", **bad})


def test_variants_from_comma_list():
    cfg = make_config({"scenario": "patch-linear", "variants": "exact, nodal"})
    assert cfg.variants == ("exact", "nodal")


def test_text_roundtrip_and_digest(tmp_path):
    cfg = make_config({"scenario": "cantilever-transient", "beta": "1000", "seed": "7"})
    path = tmp_path / "c.cfg"
    path.write_text(cfg.to_text())
    again = load_config(path)
    assert again == cfg and again.digest() == cfg.digest()
    moved = load_config(path, {"output_dir": "elsewhere"})
    assert moved.digest() == cfg.digest()
    assert load_config(path, {"seed": 8}).digest() != cfg.digest()


def test_load_config_requires_scenario(tmp_path):
    (tmp_path / "c.cfg").write_text("seed = 1\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.cfg")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_config_is_frozen():
    cfg = make_config({"scenario": "patch-linear"})
    with pytest.raises(Exception):
        cfg.seed = 3
    assert isinstance(cfg, ScenarioConfig)


def test_shipped_configs_load():
    from importlib import resources

    files = sorted((resources.files("mesohom") / "data").glob("*.cfg"))
    assert len(files) >= 6
    for f in files:
        load_config(f)


# -- runner -----------------------------------------------------------------


@pytest.fixture(scope="module")
def patch_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("patch")
    return run(make_config(SMALL_PATCH), out)


def test_run_writes_outputs_and_manifest(patch_run):
    d = patch_run.run_dir
    for name in ("config.txt", "mesh.txt", "manifest.json", "bins_exact.csv", "bins_nodal.csv", "bins_internal.csv"):
        assert (d / name).is_file()
    man = json.loads((d / "manifest.json").read_text())
    assert set(man) >= {"config_hash", "mesh_hash", "version", "wall_clock_s", "files", "metrics"}
    assert man["metrics"]["p_max_rel_error"] <= 1e-9
    cols, rows = read_csv(d / "bins_exact.csv")
    assert cols[:3] == ["variant", "bin_ix", "bin_iy"] and all("[" in c for c in cols[3:])
    a = np.array([[float(r[cols.index("ax[1/m]")]), float(r[cols.index("ay[1/m]")])] for r in rows])
    assert np.allclose(a, -4.0, rtol=1e-9)


def test_identical_inputs_give_identical_files(patch_run, tmp_path):
    again = run(make_config(SMALL_PATCH), tmp_path)
    assert again.manifest["files"] == patch_run.manifest["files"]
    assert again.manifest["config_hash"] == patch_run.manifest["config_hash"]


def test_module_errors_carry_scenario(tmp_path):
    cfg = make_config({**SMALL_PATCH, "d_min_m": 0.03, "d_max_m": 0.05, "fill": 0.9, "max_attempts": 5})
    with pytest.raises(RunError, match="patch-linear"):
        run(cfg, tmp_path)


# -- compare ----------------------------------------------------------------


def _analytic_reference(path, run_dir):
    cols, rows = read_csv(run_dir / "bins_exact.csv")
    keys = [(r[1], r[2]) for r in rows]
    write_csv(path, ["bin_ix", "bin_iy", "ax[1/m]", "ay[1/m]"], [(i, j, -4.0, -4.0) for i, j in keys])


def test_run_against_itself(patch_run):
    rep = compare(patch_run.run_dir, patch_run.run_dir / "bins_exact.csv")
    assert rep.passed and all(c.max_error == 0.0 for c in rep.columns)


def test_patch_against_analytic_constants(patch_run, tmp_path):
    ref = tmp_path / "analytic.csv"
    _analytic_reference(ref, patch_run.run_dir)
    rep = compare(patch_run.run_dir, ref, target="bins_exact.csv")
    assert rep.passed
    # the nodal variant is not exact and must fail the same check
    assert not compare(patch_run.run_dir, ref, target="bins_nodal.csv").passed


def test_perturbed_reference_names_column(patch_run, tmp_path):
    cols, rows = read_csv(patch_run.run_dir / "bins_exact.csv")
    k = cols.index("ay[1/m]")
    rows[2][k] = repr(float(rows[2][k]) * (1 + 1e-6))
    ref = tmp_path / "bins_exact.csv"
    write_csv(ref, cols, rows)
    rep = compare(patch_run.run_dir, ref)
    assert not rep.passed and rep.failing == ["ay[1/m]"]
    assert any("FAIL ay[1/m]" in line for line in rep.lines())
    assert compare(patch_run.run_dir, ref, {"ay[1/m]": 1e-5}).passed


def test_schema_mismatch(patch_run, tmp_path):
    ref = tmp_path / "r.csv"
    write_csv(ref, ["bin_ix", "bin_iy", "sxx[Pa]"], [(0, 0, 1.0)])
    with pytest.raises(ContractError, match="schema"):
        compare(patch_run.run_dir, ref)


# -- command line -----------------------------------------------------------


def _cfg_file(tmp_path, values):
    path = tmp_path / "run.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return path


def test_cli_run_and_compare_exit_codes(tmp_path, patch_run, capsys):
    cfg = _cfg_file(tmp_path, SMALL_PATCH)
    out = tmp_path / "o"
    assert cli.main(["--config", str(cfg), "--output", str(out), "--quiet"]) == 0
    assert (out / "manifest.json").is_file()
    ref = tmp_path / "analytic.csv"
    _analytic_reference(ref, out)
    assert cli.main(["compare", str(out), str(ref), "--target", "bins_exact.csv"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert cli.main(["compare", str(out), str(ref), "--target", "bins_nodal.csv", "--quiet"]) == 2
    assert "FAIL" in capsys.readouterr().out
    assert cli.main(["--config", str(cfg), "--output", str(tmp_path / "p"), "--quiet", "--compare", str(ref)]) == 0


def test_cli_overrides_seed(tmp_path):
    cfg = _cfg_file(tmp_path, SMALL_PATCH)
    assert cli.main(["--config", str(cfg), "--output", str(tmp_path / "s"), "--seed", "4", "--quiet"]) == 0
    assert "seed = 4" in (tmp_path / "s" / "config.txt").read_text()


@pytest.mark.parametrize(
    "argv",
    [
        ["--scenario", "bridge"],
        ["--config", "/nonexistent.cfg"],
        ["--scenario", "patch-linear", "--tol-col", "oops"],
    ],
)
def test_cli_input_errors_exit_one(argv, tmp_path, capsys):
    assert cli.main(argv + ["--output", str(tmp_path), "--quiet"]) == 1
    assert "error:" in capsys.readouterr().err
