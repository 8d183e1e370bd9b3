import json
import math

import numpy as np
import pytest

from chaosbench.benchcli import (
    cmd_adapt,
    cmd_check,
    cmd_fit,
    cmd_plot,
    cmd_rate,
    cmd_risk,
    cmd_simulate,
    growing_order_bandwidth,
    load_dataset,
    main,
    parse_config,
    theoretical_bandwidth,
    truncation_order,
)
from chaosbench.chaosreg import ChaosKernelEstimate, FittedModel, model_from_json, model_to_json
from chaosbench.errors import ConfigError


def _base_doc(**overrides):
    doc = {
        "truth": "quadratic_terminal",
        "n_list": [40],
        "path_steps": 128,
        "grid_size": 16,
        "max_order": 2,
        "s_star_hi": 2.0,
        "s_star_lo": 0.5,
        "majorant": {"mu4": 0.66, "class_bound": 1.0},
        "bandwidths": {"mode": "fixed", "values": {"1": 0.25, "2": 0.25}},
        "risk_p": 2.0,
        "replications": 2,
        "seed": 42,
        "check": {"n_mc": 1500},
    }
    doc.update(overrides)
    return doc


def _write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_parse_config_valid():
    config = parse_config(_base_doc())
    assert config.n_list == (40,)
    assert config.kernel().moment_order == 1
    assert config.majorant_params().kernel_l2 == 2.0


@pytest.mark.parametrize(
    "overrides,fragment",
    [
        ({"grid_size": 15}, "does not divide"),
        ({"n_list": []}, "non-empty"),
        ({"n_list": [100, 50]}, "increasing"),
        ({"s_star_hi": -1.0}, "positive"),
        ({"replications": 0}, "replications"),
        ({"risk_p": 1.0}, "risk_p"),
        ({"risk_p": 4.0, "risk": {"method": "isometry"}}, "isometry"),
        ({"bandwidths": {"mode": "fixed", "values": {"1": 0.25}}}, "missing orders"),
        ({"bandwidths": {"mode": "warp"}}, "unknown mode"),
        ({"truth": "unknown_truth"}, "unknown named truth"),
    ],
)
def test_parse_config_rejects(overrides, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(_base_doc(**overrides))


def test_inline_truth_parsing():
    doc = _base_doc(
        truth={
            "a": 0.5,
            "components": [
                {"order": 1, "kind": "poly", "coeffs": [0.0, 1.0]},
                {"order": 2, "kind": "constant", "value": 0.5},
            ],
            "noise": {"kind": "gaussian", "sigma": 0.25},
            "class": {"s": [1.0, 1.0], "lam": [1.0, 1.0], "max_order": 2},
        }
    )
    config = parse_config(doc)
    assert config.truth.a == 0.5
    assert config.truth.orders == (1, 2)


def test_theoretical_bandwidth_example():
    assert theoretical_bandwidth(1, 1000, 1.0, 1.0) == pytest.approx(0.1, abs=1e-15)
    assert theoretical_bandwidth(2, 4096, 2.0, 1.0) == pytest.approx(4096 ** (-1 / 6))


def test_truncation_order_around_e_nine():
    # exp(9) = 8103.08...; the integer part of sqrt(log n) reaches 3 at 8104
    assert truncation_order(8104) == 3
    assert truncation_order(400) == 2


def test_growing_order_bandwidth_practical_mode_drops_factor():
    full = growing_order_bandwidth(1, 1000, 1.0, 1.0, l_n=2, p=2.0, kernel_l2=2.0)
    practical = growing_order_bandwidth(
        1, 1000, 1.0, 1.0, l_n=2, p=2.0, kernel_l2=2.0, practical=True
    )
    assert practical == pytest.approx(theoretical_bandwidth(1, 1000, 1.0, 1.0))
    c2 = math.sqrt(6.0) * 2.0
    assert full == pytest.approx((c2**4 / 1000) ** (1.0 / 3.0))


def test_simulate_writes_datasets_and_manifest(tmp_path):
    config = parse_config(_base_doc())
    out = cmd_simulate(config, tmp_path / "sim")
    for rep in (0, 1):
        rep_dir = out / "n_000040" / f"rep_{rep:03d}"
        assert (rep_dir / "responses.csv").exists()
        assert (rep_dir / "paths.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert len(manifest["outputs"]) == 4
    # replication datasets use distinct derived seeds
    a = (out / "n_000040" / "rep_000" / "responses.csv").read_text()
    b = (out / "n_000040" / "rep_001" / "responses.csv").read_text()
    assert a != b


def test_simulate_reproducible_digests(tmp_path):
    config = parse_config(_base_doc())
    out1 = cmd_simulate(config, tmp_path / "sim1")
    out2 = cmd_simulate(config, tmp_path / "sim2")
    d1 = json.loads((out1 / "manifest.json").read_text())["outputs"]
    d2 = json.loads((out2 / "manifest.json").read_text())["outputs"]
    assert d1 == d2


def test_dataset_round_trip(tmp_path):
    config = parse_config(_base_doc())
    out = cmd_simulate(config, tmp_path / "sim")
    sample = load_dataset(out / "n_000040" / "rep_000", config.path_steps)
    assert sample.n == 40
    assert sample.path_values.shape == (40, 129)
    assert np.all(sample.path_values[:, 0] == 0.0)


def test_fit_and_risk_pipeline(tmp_path):
    config = parse_config(_base_doc())
    fits = cmd_fit(config, tmp_path / "fits")
    model_path = fits / "n_000040" / "rep_000" / "model.json"
    model = model_from_json(model_path.read_text())
    assert model.chaos_orders == (1, 2)
    risks = cmd_risk(config, fits, tmp_path / "risks")
    rows = (risks / "risk.csv").read_text().splitlines()
    assert rows[0] == "n,rep,p,method,value,mc_stderr"
    assert len(rows) == 3
    agg = (risks / "aggregates.csv").read_text().splitlines()
    values = [float(r.split(",")[4]) for r in rows[1:]]
    assert float(agg[1].split(",")[1]) == pytest.approx(np.mean(values))


def test_risk_zero_for_perfect_model(tmp_path):
    config = parse_config(_base_doc(replications=1))
    truth = config.truth
    values = truth.component_values(2, config.grid_size)
    model = FittedModel(truth.a, (ChaosKernelEstimate(2, 0.25, config.grid_size, values),))
    rep_dir = tmp_path / "models" / "n_000040" / "rep_000"
    rep_dir.mkdir(parents=True)
    (rep_dir / "model.json").write_text(model_to_json(model))
    risks = cmd_risk(config, tmp_path / "models", tmp_path / "risks")
    row = (risks / "risk.csv").read_text().splitlines()[1]
    assert float(row.split(",")[4]) == 0.0


def test_adapt_writes_traces(tmp_path):
    config = parse_config(
        _base_doc(
            n_list=[500],
            path_steps=256,
            s_star_hi=1.0,
            bandwidths={"mode": "adaptive"},
            replications=1,
        )
    )
    out = cmd_adapt(config, tmp_path / "adapted")
    rep_dir = out / "n_000500" / "rep_000"
    assert (rep_dir / "model.json").exists()
    for order in (1, 2):
        lines = (rep_dir / f"trace_order{order}.csv").read_text().splitlines()
        assert lines[0] == "ell,h,majorant,bias_proxy,objective,chosen"
        assert sum(int(line.split(",")[-1]) for line in lines[1:]) == 1


def test_rate_requires_enough_points():
    config = parse_config(_base_doc(n_list=[100, 200, 400]))
    with pytest.raises(ConfigError, match="at least 4"):
        cmd_rate(config, None)


def test_rate_smoke(tmp_path):
    doc = _base_doc(
        truth={
            "a": 1.0,
            "components": [{"order": 1, "kind": "poly", "coeffs": [1.0, 0.5]}],
            "noise": {"kind": "gaussian", "sigma": 0.5},
            "class": {"s": [1.0], "lam": [1.0], "max_order": 1},
        },
        n_list=[50, 100, 200, 500],
        max_order=1,
        s_star_hi=1.0,
        bandwidths={"mode": "theoretical", "s": [1.0], "lam": [1.0]},
        replications=2,
    )
    report = cmd_rate(parse_config(doc), tmp_path / "rate")
    assert report["theoretical_slope"] == pytest.approx(-1.0 / 3.0, abs=1e-9)
    assert "slope" in report and "slope_stderr" in report
    assert (tmp_path / "rate" / "risk_by_n.csv").exists()
    assert (tmp_path / "rate" / "rate.json").exists()


def test_check_passes_and_sabotage_fails(tmp_path):
    config = parse_config(_base_doc())
    report = cmd_check(config, tmp_path / "check")
    assert report["passed"]
    names = {c["name"] for c in report["checks"]}
    assert any(name.startswith("kernel_m3") for name in names)
    assert any(name.startswith("hypercontractivity") for name in names)
    sabotaged = parse_config(
        _base_doc(check={"n_mc": 1500, "kernel_coeff_perturbation": 0.1})
    )
    bad = cmd_check(sabotaged, tmp_path / "check_bad")
    assert not bad["passed"]
    failed = [c["name"] for c in bad["checks"] if not c["passed"]]
    assert any("mass" in name for name in failed)


def test_main_exit_codes(tmp_path):
    good = _write_config(tmp_path, _base_doc(check={"n_mc": 1500}))
    assert main(["check", "--config", str(good), "--out", str(tmp_path / "ok")]) == 0
    bad_cfg = _write_config(tmp_path, _base_doc(grid_size=15), "bad.json")
    assert main(["check", "--config", str(bad_cfg), "--out", str(tmp_path / "no")]) == 1
    sab = _write_config(
        tmp_path, _base_doc(check={"n_mc": 1500, "kernel_coeff_perturbation": 0.1}), "sab.json"
    )
    assert main(["check", "--config", str(sab), "--out", str(tmp_path / "sab")]) == 2


def test_seed_override_changes_outputs(tmp_path):
    cfg = _write_config(tmp_path, _base_doc(n_list=[20], replications=1))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(
        ["simulate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "7"]
    ) == 0
    a = (tmp_path / "a" / "n_000020" / "rep_000" / "responses.csv").read_text()
    b = (tmp_path / "b" / "n_000020" / "rep_000" / "responses.csv").read_text()
    assert a != b


def test_plot_risk_curve_deterministic(tmp_path):
    csv = tmp_path / "risk_by_n.csv"
    csv.write_text(
        "n,mean_risk,std_risk,replications\n"
        "500,0.24,0.01,20\n1000,0.17,0.01,20\n2000,0.13,0.01,20\n4000,0.11,0.01,20\n"
    )
    out1, out2 = tmp_path / "a.svg", tmp_path / "b.svg"
    cmd_plot(csv, out1)
    cmd_plot(csv, out2)
    assert out1.read_bytes() == out2.read_bytes()
    text = out1.read_text()
    assert "<polyline" in text and "slope" in text


def test_plot_trace_series(tmp_path):
    csv = tmp_path / "trace.csv"
    csv.write_text(
        "ell,h,majorant,bias_proxy,objective,chosen\n"
        "1,0.135,3.77,0,3.77,1\n1,0.0498,7.42,0,7.42,0\n"
    )
    out = tmp_path / "trace.svg"
    cmd_plot(csv, out)
    text = out.read_text()
    assert text.count("<polyline") == 3
    assert "majorant" in text and "bias_proxy" in text and "objective" in text


def test_plot_rejects_unknown_header(tmp_path):
    csv = tmp_path / "junk.csv"
    csv.write_text("foo,bar\n1,2\n")
    assert main(["plot", "--csv", str(csv), "--out", str(tmp_path / "x.svg")]) == 1


def test_fit_parallel_matches_serial(tmp_path):
    config = parse_config(_base_doc(n_list=[30], replications=3))
    serial = cmd_fit(config, tmp_path / "serial", threads=1)
    parallel = cmd_fit(config, tmp_path / "parallel", threads=2)
    for rep in range(3):
        a = (serial / "n_000030" / f"rep_{rep:03d}" / "model.json").read_text()
        b = (parallel / "n_000030" / f"rep_{rep:03d}" / "model.json").read_text()
        assert a == b


def test_theorem41_mode_fits_growing_orders(tmp_path):
    doc = _base_doc(
        n_list=[8104],
        path_steps=128,
        grid_size=8,
        max_order=3,
        bandwidths={"mode": "theorem41", "s": [1.0], "lam": [1.0], "practical": True},
        replications=1,
    )
    config = parse_config(doc)
    out = cmd_fit(config, tmp_path / "t41")
    model = model_from_json((out / "n_008104" / "rep_000" / "model.json").read_text())
    # L_n = integer part of sqrt(log 8104) = 3
    assert model.chaos_orders == (1, 2, 3)
    risks = cmd_risk(config, out, tmp_path / "t41risk")
    row = (risks / "risk.csv").read_text().splitlines()[1]
    assert row.split(",")[3] == "isometry"


def test_fit_from_simulated_data_matches_seed_route(tmp_path):
    config = parse_config(_base_doc(n_list=[30], replications=2))
    data = cmd_simulate(config, tmp_path / "data")
    from_seeds = cmd_fit(config, tmp_path / "fit_seeds")
    from_data = cmd_fit(config, tmp_path / "fit_data", data_dir=data)
    for rep in range(2):
        a = (from_seeds / "n_000030" / f"rep_{rep:03d}" / "model.json").read_text()
        b = (from_data / "n_000030" / f"rep_{rep:03d}" / "model.json").read_text()
        assert a == b


def test_manifest_replays_as_config(tmp_path):
    cfg = _write_config(tmp_path, _base_doc(n_list=[20], replications=1))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "first")]) == 0
    manifest = tmp_path / "first" / "manifest.json"
    assert main(["simulate", "--config", str(manifest), "--out", str(tmp_path / "replay")]) == 0
    a = json.loads((tmp_path / "first" / "manifest.json").read_text())["outputs"]
    b = json.loads((tmp_path / "replay" / "manifest.json").read_text())["outputs"]
    assert a == b


def test_truth_config_round_trip_including_gridded():
    from chaosbench.mappingzoo import bump_instance, spec_to_config_doc

    _, bump_spec = bump_instance(2, 0.25, [(0, 1), (1, 0)], rho=0.5, grid_size=16)
    doc = _base_doc(truth=spec_to_config_doc(bump_spec), grid_size=16, max_order=2)
    config = parse_config(doc)
    assert config.truth.orders == (2,)
    assert np.allclose(
        config.truth.component_values(2, 16), bump_spec.component_values(2, 16)
    )
    qt_doc = spec_to_config_doc(parse_config(_base_doc()).truth)
    back = parse_config(_base_doc(truth=qt_doc))
    assert back.truth.a == 1.0 and back.truth.orders == (2,)


def test_theorem41_mode_rejects_monte_carlo_risk():
    doc = _base_doc(
        bandwidths={"mode": "theorem41", "s": [1.0], "lam": [1.0]},
        risk={"method": "monte_carlo", "n_mc": 200},
    )
    with pytest.raises(ConfigError, match="isometry"):
        parse_config(doc)
