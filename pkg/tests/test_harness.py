import json
import struct

import numpy as np
import pytest

import indexpairing.harness as harness
from indexpairing.cli import main
from indexpairing.cochains import ASCochain
from indexpairing.grids import FiberModel, ModelError, random_band_limited
from indexpairing.groupoid import BaseModel, BasePoint
from indexpairing.harness import (
    BUILTIN_SCENARIOS,
    CSV_HEADER,
    INVARIANT_CSV_HEADER,
    CorruptedCacheError,
    ScenarioError,
    StageError,
    WORKERS_ENV,
    _cochain_from_table,
    _run_one,
    _symbol_expression,
    _validate,
    _worker_count,
    cochain_to_table,
    load_coefficients,
    load_scenario,
    run_scenario,
    run_suite,
    save_coefficients,
)


def cheap_scenario(**overrides):
    raw = {
        "name": "cheap-dolbeault",
        "groupoid": {"group": "trivial", "base_points": 1},
        "fiber": {"kind": "torus", "dim": 2, "fourier_cutoff": 4, "grid": 12},
        "operator": {"builtin": "dolbeault", "twist": 1, "levels": 2},
        "cocycle": {"kind": "unit"},
        "tolerances": {"pairing_tol": 1e-4},
        "seed": 7,
    }
    raw.update(overrides)
    return raw


# ---------------------------------------------------------------------------
# schema and loading


def test_builtin_catalog_loads_and_echo_reloads():
    assert len(BUILTIN_SCENARIOS) == 9
    for name in BUILTIN_SCENARIOS:
        scn = load_scenario(name)
        assert scn.name == name
        again = _validate(scn.echo(), origin=None)
        assert again == scn


def test_scenario_defaults_filled():
    scn = load_scenario("S1-dolbeault-d1")
    assert scn.tolerances == {"pairing_tol": 1e-6, "invariant_tol": 1e-8}
    assert scn.pairing_tol == 1e-6
    assert scn.invariant_tol == 1e-8
    assert scn.density == {"values": [1.0]}
    assert scn.fiber_action == "trivial"
    assert scn.localize is None
    assert scn.group["base_weights"] == [1.0]
    assert scn.group["base_action"] == "trivial"


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda raw: raw.pop("seed"), "scenario.seed"),
        (lambda raw: raw.update(seed=2**64), "64 bits"),
        (lambda raw: raw.update(name="a,b"), "name"),
        (lambda raw: raw["fiber"].update(grid=9), "2*fourier_cutoff"),
        (lambda raw: raw["fiber"].update(grid=130), "at most 128"),
        (lambda raw: raw["fiber"].update(fourier_cutoff=0), "fourier_cutoff"),
        (lambda raw: raw["fiber"].update(fourier_cutoff=40), "fourier_cutoff"),
        (lambda raw: raw["fiber"].pop("dim"), "fiber.dim"),
        (lambda raw: raw["groupoid"].update(group="free"), "groupoid.group"),
        (lambda raw: raw["groupoid"].update(base_weights=[1.0, 2.0]), "base_weights"),
        (
            lambda raw: raw["groupoid"].update(base_action="pair-swap"),
            "pair-swap",
        ),
        (
            lambda raw: raw.update(fiber_action={"translation": ["1/2", "1/2"]}),
            "nontrivial group",
        ),
        (lambda raw: raw.update(operator={"builtin": "wave"}), "operator.builtin"),
        (
            lambda raw: raw.update(operator={"builtin": "dolbeault"}),
            "operator.twist",
        ),
        (lambda raw: raw.update(localize=-0.1), "localize"),
        (lambda raw: raw.update(localize=2.0), "localize"),
        (lambda raw: raw.update(cocycle={"kind": "spiral"}), "cocycle.kind"),
        (
            lambda raw: raw.update(cocycle={"kind": "elementary", "degree": 1}),
            "cocycle.degree",
        ),
        (
            lambda raw: raw.update(
                cocycle={"kind": "elementary", "degree": 2, "band": 9}
            ),
            "cocycle.band",
        ),
        (lambda raw: raw.update(cocycle={"kind": "profile"}), "cocycle.legs"),
        (lambda raw: raw.update(density={"values": [1.0, 1.0]}), "density.values"),
        (lambda raw: raw.update(density={"values": [-1.0]}), "density.values"),
        (lambda raw: raw.update(tolerances={"other_tol": 1.0}), "tolerances.other_tol"),
        (
            lambda raw: raw.update(tolerances={"pairing_tol": 0.0}),
            "tolerances.pairing_tol",
        ),
    ],
)
def test_scenario_validation_names_offending_field(mutate, fragment):
    raw = cheap_scenario()
    mutate(raw)
    with pytest.raises(ScenarioError, match=fragment.replace("*", "\\*")):
        _validate(raw, origin=None)


def test_scenario_rejects_non_object_document():
    with pytest.raises(ScenarioError, match="JSON object"):
        _validate([1, 2, 3], origin=None)


def test_translation_fractions_validated():
    raw = cheap_scenario(
        groupoid={"group": {"cyclic": 2}, "base_points": 1},
        fiber_action={"translation": ["1/2", "nope"]},
    )
    with pytest.raises(ScenarioError, match="fiber_action.translation"):
        _validate(raw, origin=None)
    raw["fiber_action"] = {"translation": ["1/2"]}
    with pytest.raises(ScenarioError, match="one entry per dim"):
        _validate(raw, origin=None)


def test_load_scenario_parse_error_reports_location(tmp_path):
    bad = tmp_path / "broken.json"
    bad.write_text('{"name": }')
    with pytest.raises(ScenarioError, match="line 1, column"):
        load_scenario(bad)
    with pytest.raises(ScenarioError, match="neither a builtin"):
        load_scenario("no-such-scenario")


def test_load_scenario_file_matches_builtin(tmp_path):
    doc = load_scenario("S3-multiplier-invertible").echo()
    path = tmp_path / "s3.json"
    path.write_text(json.dumps(doc))
    assert load_scenario(path) == load_scenario("S3-multiplier-invertible")


# ---------------------------------------------------------------------------
# coefficient file format


def test_coefficients_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    arrays = [
        np.array([0.45]),
        (rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))),
        rng.standard_normal((3, 2, 4)),
    ]
    path = tmp_path / "k.opk"
    save_coefficients(path, arrays)
    back = load_coefficients(path)
    assert len(back) == 3
    for a, b in zip(arrays, back):
        assert a.dtype == b.dtype
        assert np.array_equal(a, b)


def test_coefficients_reject_unsupported_dtype(tmp_path):
    with pytest.raises(ModelError, match="dtype"):
        save_coefficients(tmp_path / "k.opk", [np.array([1, 2], dtype=np.int32)])


def test_corrupted_coefficients_detected(tmp_path):
    path = tmp_path / "k.opk"
    save_coefficients(path, [np.eye(3), np.array([1.0 + 2.0j])])
    good = path.read_bytes()

    path.write_bytes(good[: len(good) // 2])
    with pytest.raises(CorruptedCacheError, match="truncated"):
        load_coefficients(path)

    path.write_bytes(b"XXXX" + good[4:])
    with pytest.raises(CorruptedCacheError, match="bad magic"):
        load_coefficients(path)

    path.write_bytes(good + b"\x00")
    with pytest.raises(CorruptedCacheError, match="trailing bytes"):
        load_coefficients(path)

    path.write_bytes(good[:4] + struct.pack("<I", 9999) + good[8:])
    with pytest.raises(CorruptedCacheError, match="implausible array count"):
        load_coefficients(path)

    path.write_bytes(good[:8] + b"\x07" + good[9:])
    with pytest.raises(CorruptedCacheError, match="bad array header"):
        load_coefficients(path)


# ---------------------------------------------------------------------------
# cochain table codec


def test_cochain_table_roundtrip():
    base = BaseModel([BasePoint("pt", 1.0, FiberModel("torus", 2, 3, 12))])
    rng = np.random.default_rng(5)
    factors = [
        [random_band_limited(rng, base.fiber(0), 2, real=False)] for _ in range(3)
    ]
    phi = ASCochain.elementary(base, factors, germ_radius=2.0)
    table = cochain_to_table(phi, band=2)
    back = _cochain_from_table(base, phi.degree, 2, table)
    tuples = rng.integers(0, 144, size=(30, phi.degree + 1))
    assert np.max(
        np.abs(phi.evaluate_batch(0, tuples) - back.evaluate_batch(0, tuples))
    ) <= 1e-12


def test_cochain_table_length_checked():
    base = BaseModel([BasePoint("pt", 1.0, FiberModel("torus", 2, 3, 12))])
    table = [{"weight": [1.0, 0.0], "factors": [[[[1.0, 0.0]]], [[[1.0, 0.0]]]]}]
    with pytest.raises(ScenarioError, match="mode coefficients"):
        _cochain_from_table(base, 1, 2, table)


# ---------------------------------------------------------------------------
# symbol expressions


def test_symbol_expression_evaluates_arrays():
    fn = _symbol_expression("1 + (xi1*xi1 + xi2*xi2) / 81")
    x = np.array([0.0, 3.0])
    y = np.array([0.0, -3.0])
    assert np.allclose(fn(x, y), [1.0, 1.0 + 18.0 / 81.0])
    trig = _symbol_expression("sin(pi * xi1) + exp(-xi2)")
    assert abs(trig(1.0, 0.0) - (np.sin(np.pi) + 1.0)) <= 1e-15


@pytest.mark.parametrize(
    "expr",
    [
        "__import__('os')",
        "xi3 + 1",
        "(1).__class__",
        "xi1 if xi2 else 0",
        "lambda: 1",
        "abs(xi1)",
        "xi1 @ xi2",
    ],
)
def test_symbol_expression_rejects_disallowed(expr):
    with pytest.raises(ScenarioError, match="operator.symbol"):
        _symbol_expression(expr)


# ---------------------------------------------------------------------------
# scenario execution


def test_run_scenario_cheap_dolbeault(tmp_path):
    scn = _validate(cheap_scenario(), origin=None)
    rec = run_scenario(scn)
    assert rec.analytic == (1,)
    assert abs(rec.pairing - 1.0) <= 1e-9
    assert abs(rec.topological - 1.0) <= 1e-4
    assert rec.status == "pass"
    row = rec.csv_row()
    parts = row.split(",")
    assert len(parts) == 6
    assert parts[0] == "cheap-dolbeault"
    assert parts[1] == "1"
    assert parts[2].endswith("j")
    assert parts[4] == f"{rec.abs_err:.6e}"
    assert parts[5] == "pass"


def test_run_scenario_multiplier_zero_class():
    rec = run_scenario(load_scenario("S3-multiplier-invertible"))
    assert rec.analytic == (0,)
    assert abs(rec.pairing) <= 1e-9
    assert abs(rec.topological) <= 1e-6
    assert rec.status == "pass"


def test_run_scenario_orbifold_family():
    rec = run_scenario(load_scenario("S5-orbifold-family"))
    assert rec.analytic == (3, 3, 3, 3)
    assert abs(rec.pairing - 3.0) <= 1e-9
    assert rec.abs_err <= 1e-6
    assert rec.status == "pass"


def test_run_scenario_cache_reuse_and_corruption(tmp_path):
    scn = _validate(cheap_scenario(), origin=None)
    rec1 = run_scenario(scn, out_dir=tmp_path)
    cache = tmp_path / "cache" / "cheap-dolbeault.idem.opk"
    assert cache.exists()
    rec2 = run_scenario(scn, out_dir=tmp_path)
    assert rec1.csv_row() == rec2.csv_row()
    assert rec1.pairing == rec2.pairing

    data = cache.read_bytes()
    cache.write_bytes(data[: len(data) - 8])
    with pytest.raises(CorruptedCacheError):
        run_scenario(scn, out_dir=tmp_path)

    save_coefficients(cache, [np.array([np.inf])])
    with pytest.raises(CorruptedCacheError, match="expected"):
        run_scenario(scn, out_dir=tmp_path)


def test_run_scenario_stage_error_is_tagged(tmp_path):
    scn = _validate(
        cheap_scenario(
            name="bad-symbol",
            operator={"builtin": "multiplier", "symbol": "sin(xi1)"},
        ),
        origin=None,
    )
    with pytest.raises(StageError) as err:
        run_scenario(scn)
    assert err.value.stage == "assemble-operator"
    assert "assemble-operator" in str(err.value)


def test_run_one_returns_error_record(tmp_path):
    doc = cheap_scenario(
        name="bad-symbol",
        operator={"builtin": "multiplier", "symbol": "sin(xi1)"},
    )
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    record, message = _run_one((str(path), None))
    assert record.status == "error[assemble-operator]"
    assert record.abs_err == np.inf
    assert "assemble-operator" in message


# ---------------------------------------------------------------------------
# suite driver and CLI


def test_worker_count_env(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert _worker_count() == 1
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert _worker_count() == 3
    monkeypatch.setenv(WORKERS_ENV, "0")
    assert _worker_count() == 1
    monkeypatch.setenv(WORKERS_ENV, "junk")
    with pytest.raises(ModelError, match=WORKERS_ENV):
        _worker_count()


def test_run_suite_invariant_report(tmp_path, monkeypatch):
    monkeypatch.setattr(
        harness,
        "INVARIANT_CHECKS",
        {
            "toy-pass": lambda: (1.0e-12, 1e-9),
            "toy-fail": lambda: (0.5, 1e-9),
        },
    )
    code = run_suite("invariants", tmp_path)
    assert code == 1
    lines = (tmp_path / "invariants.csv").read_text().strip().split("\n")
    assert lines[0] == INVARIANT_CSV_HEADER
    assert lines[1] == "toy-pass,1.000000e-12,1.0e-09,pass"
    assert lines[2] == "toy-fail,5.000000e-01,1.0e-09,fail"
    assert "toy-fail" in (tmp_path / "summary.txt").read_text()


def test_run_suite_scenarios_reports_and_sidecar(tmp_path):
    code = run_suite("scenarios", tmp_path, only={"S3-multiplier-invertible"})
    assert code == 0
    lines = (tmp_path / "scenarios.csv").read_text().strip().split("\n")
    assert lines[0] == CSV_HEADER
    assert len(lines) == 2
    assert lines[1].startswith("S3-multiplier-invertible,0,")
    assert lines[1].endswith(",pass")
    sidecar = tmp_path / "S3-multiplier-invertible.scenario.json"
    echo = json.loads(sidecar.read_text())
    assert echo == load_scenario("S3-multiplier-invertible").echo()
    assert "S3-multiplier-invertible" in (tmp_path / "summary.txt").read_text()


def test_run_suite_rejects_bad_selector(tmp_path):
    with pytest.raises(ModelError, match="selector"):
        run_suite("everything", tmp_path)


def test_run_suite_scenario_csv_is_deterministic(tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert run_suite("scenarios", out1, only={"S3-multiplier-invertible"}) == 0
    assert run_suite("scenarios", out2, only={"S3-multiplier-invertible"}) == 0
    assert (out1 / "scenarios.csv").read_bytes() == (out2 / "scenarios.csv").read_bytes()


def test_run_suite_parallel_workers(tmp_path, monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "2")
    code = run_suite(
        "scenarios", tmp_path, only={"S3-multiplier-invertible", "S1-dolbeault-d0"}
    )
    assert code == 0
    lines = (tmp_path / "scenarios.csv").read_text().strip().split("\n")
    assert len(lines) == 3
    assert {line.split(",")[0] for line in lines[1:]} == {
        "S3-multiplier-invertible",
        "S1-dolbeault-d0",
    }


def test_cli_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert "S1-dolbeault-d1" in out
    assert "S4-sawtooth-flux32" in out


def test_cli_run_builtin_and_overrides(tmp_path, capsys):
    code = main(
        [
            "run",
            "--scenario",
            "S3-multiplier-invertible",
            "--out",
            str(tmp_path),
            "--tol",
            "1e-3",
            "--seed",
            "42",
        ]
    )
    assert code == 0
    assert "pass" in capsys.readouterr().out
    lines = (tmp_path / "scenarios.csv").read_text().strip().split("\n")
    assert lines[0] == CSV_HEADER and len(lines) == 2
    echo = json.loads(
        (tmp_path / "S3-multiplier-invertible.scenario.json").read_text()
    )
    assert echo["tolerances"]["pairing_tol"] == 1e-3
    assert echo["seed"] == 42


def test_cli_run_scenario_file_and_errors(tmp_path, capsys):
    path = tmp_path / "cheap.json"
    path.write_text(json.dumps(cheap_scenario()))
    assert main(["run", "--scenario", str(path), "--out", str(tmp_path / "o")]) == 0

    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o2")]) == 1
    assert "parse error" in capsys.readouterr().err


def test_cli_exit_code_two_on_corrupted_cache(tmp_path, capsys):
    path = tmp_path / "cheap.json"
    path.write_text(json.dumps(cheap_scenario()))
    out = tmp_path / "o"
    assert main(["run", "--scenario", str(path), "--out", str(out)]) == 0
    cache = out / "cache" / "cheap-dolbeault.idem.opk"
    cache.write_bytes(b"XXXX" + cache.read_bytes()[4:])
    assert main(["run", "--scenario", str(path), "--out", str(out)]) == 2
    assert "bad magic" in capsys.readouterr().err


def test_cli_suite_rejects_unknown_only(tmp_path, capsys):
    code = main(
        ["suite", "--which", "scenarios", "--out", str(tmp_path), "--only", "NOPE"]
    )
    assert code == 1
    assert "unknown scenario names" in capsys.readouterr().err


def test_cli_suite_invariants(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(
        harness, "INVARIANT_CHECKS", {"toy-pass": lambda: (0.0, 1e-9)}
    )
    code = main(["suite", "--which", "invariants", "--out", str(tmp_path)])
    assert code == 0
    assert "toy-pass" in capsys.readouterr().out
