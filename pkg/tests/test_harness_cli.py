import csv
import json
import math

import numpy as np
import pytest

from ddcmix.cli import main
from ddcmix.errors import ConfigError, DimensionError
from ddcmix.harness import (
    INF,
    MethodCell,
    StudyConfig,
    aggregate,
    build_design,
    emit_tables,
    estimate_once,
    load_config,
    parse_q,
    q_label,
    read_cells,
    replication_seed,
    run_replication,
    run_study,
    simulate_from_config,
)

SMALL_FD = {"n_grid": 3, "n_markets": 150, "n_periods": 5,
            "type_params": [[0.5, 0.3, -0.2, -1.0, 0.5, -1.5, 0.3]], "type_weights": [1.0]}
SMALL_GAME = {"n_firms": 2, "n_markets": 150, "n_periods": 5}


def _small_config(**kw):
    base = dict(design="entry_exit_FD", overrides=SMALL_FD, methods=["PV_GMRES"], q_values=[4],
                replications=1, seed=11, eps_outer=1e-6)
    base.update(kw)
    return StudyConfig(**base)


# ------------------------------------------------------------------ config


@pytest.mark.parametrize("value, expected", [(3, 3), ("7", 7), ("inf", INF), ("∞", INF), (None, INF),
                                              (math.inf, INF)])
def test_parse_q_accepts(value, expected):
    q = parse_q(value)
    assert q == expected or (math.isinf(q) and math.isinf(expected))


@pytest.mark.parametrize("value", [0, -2, 2.5, "abc", [4]])
def test_parse_q_rejects(value):
    with pytest.raises(ConfigError):
        parse_q(value)


def test_q_label_round_trips():
    for q in (1, 10, INF):
        assert parse_q(q_label(q)) == q


def test_empty_method_list_refused():
    with pytest.raises(ConfigError, match="empty"):
        StudyConfig(methods=[])


@pytest.mark.parametrize("kwargs, match", [
    ({"design": "entry_exit_NFD", "methods": ["EE_SA"]}, "finite dependence"),
    ({"design": "entry_game", "methods": ["EE_SA"]}, "finite dependence"),
    ({"design": "entry_exit_FD", "methods": ["EPL_GMRES"]}, "entry_game"),
    ({"design": "entry_exit_NFD", "methods": ["PV_EPL_GMRES"]}, "entry_game"),
    ({"methods": ["PV_CG"]}, "unknown method"),
    ({"design": "bus_engine"}, "design"),
    ({"q_values": []}, "q list"),
    ({"replications": 0}, "replications"),
    ({"eps_outer": 0.0}, "tolerances"),
    ({"ccp_update": "newton"}, "ccp_update"),
])
def test_invalid_configs(kwargs, match):
    with pytest.raises(ConfigError, match=match):
        StudyConfig(**kwargs)


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="colour"):
        StudyConfig.from_dict({"methods": ["PV_SA"], "colour": "red"})


def test_config_dict_round_trip():
    cfg = _small_config(q_values=[2, "inf"])
    again = StudyConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text('{"design": "entry_game",\n "methods": [}')
    with pytest.raises(ConfigError, match="line 2"):
        load_config(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="object"):
        load_config(arr)


def test_unknown_design_override():
    with pytest.raises(ConfigError, match="n_gird"):
        build_design("entry_exit_FD", {"n_gird": 3})


def test_replication_seed_is_pure():
    assert replication_seed(5, 3) == replication_seed(5, 3)
    seeds = {replication_seed(5, r) for r in range(50)} | {replication_seed(6, r) for r in range(50)}
    assert len(seeds) == 100
    assert all(0 <= s < 2**63 for s in seeds)


# ------------------------------------------------------------------ tables


def _cells():
    recs = [{"rep": 0, "method": "PV_SA", "q": "inf", "ct": 0.1, "mse": 0.2, "n_outer": 3, "converged": True,
             "theta": [[1.0]], "pi": [1.0], "message": "ok"}]
    return [MethodCell("PV_GMRES", 4, 0.5, 0.1, 0.02, 7.0, 100.0, []),
            MethodCell("PV_GMRES", 8, 0.6, 0.0, 0.02, 6.5, 50.0, []),
            MethodCell("PV_SA", INF, 1.5, 0.2, float("nan"), 9.0, 0.0, recs)]


def test_emit_tables_csv_and_json(tmp_path):
    cells = _cells()
    paths = emit_tables(cells, tmp_path / "out", ("csv", "json"))
    assert [p.suffix for p in paths] == [".csv", ".json"]
    with paths[0].open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(cells)
    assert list(rows[0]) == ["method", "q", "ct_mean", "ct_sd", "mse", "avg_iter", "conv_pct"]
    assert [r["q"] for r in rows] == ["4", "8", "inf"]
    back = read_cells(paths[1])
    for a, b in zip(cells, back):
        assert a.row().keys() == b.row().keys()
        for k in a.row():
            x, y = a.row()[k], b.row()[k]
            assert x == y or (isinstance(x, float) and math.isnan(x) and math.isnan(y))
        assert a.records == b.records


def test_emit_tables_errors(tmp_path):
    with pytest.raises(ConfigError):
        emit_tables([], tmp_path)
    with pytest.raises(ConfigError, match="format"):
        emit_tables(_cells(), tmp_path, ("xlsx",))
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ConfigError, match="cannot"):
        emit_tables(_cells(), blocker / "sub")


def test_aggregate_statistics():
    cfg = _small_config(methods=["PV_GMRES"], q_values=[4], replications=3)
    recs = [{"rep": r, "method": "PV_GMRES", "q": "4", "ct": ct, "mse": mse, "n_outer": n, "converged": c}
            for r, ct, mse, n, c in [(2, 3.0, 0.3, 9, False), (0, 1.0, 0.1, 3, True), (1, 2.0, 0.2, 6, True)]]
    (cell,) = aggregate(cfg, recs)
    assert cell.ct_mean == pytest.approx(2.0)
    assert cell.ct_sd == pytest.approx(1.0)
    assert cell.mse == pytest.approx(0.2)
    assert cell.avg_iter == pytest.approx(6.0)
    assert cell.conv_pct == pytest.approx(200 / 3)
    assert [r["rep"] for r in cell.records] == [0, 1, 2]
    cfg.mse_includes_nonconverged = False
    (cell,) = aggregate(cfg, recs)
    assert cell.mse == pytest.approx(0.15)
    assert cell.ct_mean == pytest.approx(2.0)


# ------------------------------------------------------------------ studies


@pytest.fixture(scope="module")
def small_study():
    cfg = _small_config(methods=["PV_GMRES", "BM_NT"], q_values=[2, "inf"], replications=2)
    return cfg, run_study(cfg)


def test_study_grid_and_ranges(small_study):
    cfg, cells = small_study
    assert [(c.method, q_label(c.q)) for c in cells] == [
        ("PV_GMRES", "2"), ("PV_GMRES", "inf"), ("BM_NT", "2"), ("BM_NT", "inf")]
    for c in cells:
        assert 0.0 <= c.conv_pct <= 100.0
        assert len(c.records) == cfg.replications
        assert c.ct_mean > 0
        assert np.isfinite(c.mse)


def test_study_reproducible(small_study):
    cfg, cells = small_study
    again = run_study(cfg)
    for a, b in zip(cells, again):
        assert a.mse == b.mse
        assert a.avg_iter == b.avg_iter
        for ra, rb in zip(a.records, b.records):
            assert ra["theta"] == rb["theta"]
            assert ra["pi"] == rb["pi"]


def test_study_invariant_to_workers(small_study):
    cfg, cells = small_study
    cfg2 = StudyConfig.from_dict({**cfg.to_dict(), "workers": 2})
    par = run_study(cfg2)
    for a, b in zip(cells, par):
        assert (a.method, a.q, a.conv_pct, a.avg_iter) == (b.method, b.q, b.conv_pct, b.avg_iter)
        assert abs(a.mse - b.mse) <= 1e-12
        for ra, rb in zip(a.records, b.records):
            np.testing.assert_allclose(ra["theta"], rb["theta"], rtol=0, atol=1e-12)


def test_workers_env_validation(monkeypatch):
    monkeypatch.setenv("DDCMIX_WORKERS", "many")
    with pytest.raises(ConfigError, match="DDCMIX_WORKERS"):
        run_study(_small_config())


def test_failed_replication_is_recorded(monkeypatch):
    import ddcmix.harness as h

    def boom(*a, **k):
        raise FloatingPointError("synthetic failure")

    monkeypatch.setattr(h, "run_method", boom)
    recs = run_replication(_small_config(), 0)
    assert len(recs) == 1
    assert recs[0]["converged"] is False
    assert "synthetic failure" in recs[0]["message"]
    (cell,) = aggregate(_small_config(), recs)
    assert cell.conv_pct == 0.0


def test_game_study_uses_frequency_init():
    cfg = StudyConfig(design="entry_game", overrides=SMALL_GAME, methods=["EPL_GMRES", "PV_GMRES"],
                      q_values=[INF], seed=2, eps_outer=1e-6)
    cells = run_study(cfg)
    assert all(c.conv_pct == 100.0 for c in cells)
    for c in cells:
        assert np.all(np.isfinite(c.records[0]["theta"]))
        assert c.records[0]["pi"] == [1.0]


# ------------------------------------------------------------------ one-shot estimation


def test_simulate_then_estimate_closed_loop(tmp_path):
    cfg = _small_config()
    panel = tmp_path / "panel.csv"
    data = simulate_from_config(cfg, panel, seed=4)
    assert data.n_markets == SMALL_FD["n_markets"]
    res, report = estimate_once(cfg, panel, report_path=tmp_path / "rep.json")
    assert res.converged
    saved = json.loads((tmp_path / "rep.json").read_text())
    assert saved["param_names"] == report["param_names"]
    assert len(saved["se_theta"][0]) == len(report["param_names"])
    assert all(s > 0 for s in saved["se_theta"][0])


def test_single_type_fit_on_mixture_data(tmp_path):
    cfg = StudyConfig(design="entry_exit_FD", overrides={"n_grid": 3, "n_markets": 300, "n_periods": 5},
                      methods=["PV_GMRES"], q_values=[INF], eps_outer=1e-6)
    panel = tmp_path / "mix.csv"
    simulate_from_config(cfg, panel, seed=1)
    res, _ = estimate_once(cfg, panel, n_types=1)
    assert res.converged
    assert res.theta.shape[0] == 1
    assert res.pi.tolist() == [1.0]


def test_estimate_dimension_mismatch(tmp_path):
    game = StudyConfig(design="entry_game", overrides=SMALL_GAME)
    panel = tmp_path / "game.csv"
    simulate_from_config(game, panel)
    with pytest.raises(DimensionError, match="firm"):
        estimate_once(_small_config(), panel)


# ------------------------------------------------------------------ CLI


def _write_config(tmp_path, **kw):
    cfg = _small_config(**kw).to_dict()
    cfg["output_dir"] = str(tmp_path / "results")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_cli_study(tmp_path, capsys):
    path = _write_config(tmp_path)
    assert main(["study", str(path), "--format", "csv"]) == 0
    out = capsys.readouterr().out
    assert "PV_GMRES" in out
    with (tmp_path / "results" / "results.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == 1


def test_cli_simulate_estimate_bench(tmp_path, capsys):
    path = _write_config(tmp_path)
    panel = tmp_path / "p.csv"
    assert main(["simulate", str(path), "--output", str(panel), "--seed", "3"]) == 0
    assert main(["estimate", str(path), str(panel), "--q", "inf"]) == 0
    report = capsys.readouterr().out
    assert '"converged": true' in report
    assert main(["bench-inner", str(path), "--q", "2", "--repeats", "1"]) == 0
    out = capsys.readouterr().out
    assert "backend:" in out and "EE" in out


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"design": "entry_exit_NFD", "methods": ["EE_SA"]}))
    assert main(["study", str(bad)]) == 2
    assert "finite dependence" in capsys.readouterr().err
    path = _write_config(tmp_path)
    assert main(["estimate", str(path), str(tmp_path / "missing.csv")]) == 1
    panel = tmp_path / "p.csv"
    main(["simulate", str(path), "--output", str(panel)])
    capped = _write_config(tmp_path, max_outer=1, eps_outer=1e-12)
    assert main(["estimate", str(capped), str(panel)]) == 3
