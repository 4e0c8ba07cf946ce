import numpy as np
import pytest

import pickling_line as pl

TINY = {
    "grades.epochs": "3",
    "grades.hidden_units": "8",
    "cgan.epochs": "10",
    "cgan.hidden": "16,8,8",
    "schedule.phase1_episodes": "3",
    "schedule.phase2_episodes": "2",
    "schedule.report_window": "2",
    "schedule.eval_episodes": "3",
}


@pytest.fixture(scope="module")
def config():
    return pl.Config.desk().with_values(TINY)


@pytest.fixture(scope="module")
def history():
    return pl.synthetic_history(200, 5)


@pytest.fixture(scope="module")
def models(history, config):
    return pl.fit_grade_model(history, config, 5), pl.fit_cgan(history, config, 5)


def test_config(config):
    assert config.profile == "desk"
    assert config.phase1_episodes == 3
    assert "schedule.eval_episodes=3" in config.to_text()
    assert pl.Config.paper().profile == "paper"
    with pytest.raises(ValueError):
        config.with_values({"no.such.key": "1"})


def test_history(history, tmp_path):
    assert len(history) == 200
    assert len(history.vocabulary) == 5
    table = history.numeric()
    assert table.shape == (200, len(pl.NUMERIC_COLUMNS))
    assert np.all(table[:, 0] >= table[:, 1])  # trimming never widens a strip
    pl.write_dataset(tmp_path / "ds", history)
    back = pl.read_dataset(tmp_path / "ds")
    assert np.array_equal(back.numeric(), table)


def test_ingest_reports_bad_rows(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text(
        "grade,original_width,resulting_width,thickness,weight,coiling_temperature,strips_in_coil\n"
        "S235,1200,1190,300,18000,600,1\n"
        "S235,1200,1250,300,18000,600,1\n"
    )
    ds, rejected = pl.ingest_history(path)
    assert len(ds) == 1
    assert [line for line, _ in rejected] == [3]


def test_generators(models):
    gm, gan = models
    names, batches = gm.sample(50, seed=1)
    assert len(names) == 50 and sum(batches) == 50
    assert set(names) <= set(gm.vocabulary.grades)
    strips = gan.generate(names, seed=2)
    assert len(strips) == 50
    assert all(s.resulting_width <= s.original_width and s.length > 0 for s in strips)
    assert gm.sample(50, seed=1) == (names, batches)
    with pytest.raises(ValueError):
        gan.generate(["NOPE"], seed=0)


def test_episode_and_line(history, config):
    scen = pl.precompute_scenarios(2, "historical", config, seed=3, set_index=2, dataset=history)
    assert len(scen) == 2 and scen[0].hash != scen[1].hash
    assert pl.Scenario.from_json(scen[0].to_json()).hash == scen[0].hash

    log = pl.run_episode(scen[0], config, "c", rows=True)
    rows = log["rows"]
    assert rows.shape == (log["steps"], len(pl.LOG_COLUMNS))
    assert log["mean_stu_speed"] == pytest.approx(log["sum_stu_speed"] / log["steps"])
    assert log["clamp_violations"] == 0

    line = pl.Line(scen[0], config)
    for t in range(5):
        s = line.step(line.recommend())
        assert s["v_min"] <= s["stu_speed"] <= s["v_max"]
    assert line.state["steps"] == 5
    first = line.reset()
    assert first["steps"] == 0 and first["looper1"] == pytest.approx(rows[0, 5], abs=200)


def test_train_evaluate_report(history, models, config, tmp_path):
    gm, gan = models
    gen = pl.precompute_scenarios(3, "generated", config, 7, 0, history, gm, gan)
    his = pl.precompute_scenarios(2, "historical", config, 7, 1, history)
    ev = pl.precompute_scenarios(3, "historical", config, 7, 2, history)
    pb, curves = pl.train(config, "p-coop", gen, his, seed=7)
    fb, _ = pl.train(config, "f-coop", gen, his, seed=7)
    assert pb.variant == "p-coop" and fb.variant == "f-coop"
    assert [c["phase"] for c in curves] == [1, 1, 1, 2, 2]
    assert pl.train(config, "p-coop", gen, his, seed=7)[0].to_bytes() == pb.to_bytes()

    pb.save(tmp_path / "p.bank")
    assert pl.Bank.load(tmp_path / "p.bank").to_bytes() == pb.to_bytes()

    agents = ["c", "c-per-stage", "p-coop", "f-coop"]
    report, logs = pl.evaluate(ev, config, 7, agents, pb, fb)
    assert [a["agent"] for a in report.agents] == agents
    assert len(logs) == 4 and all(len(l) == 3 for l in logs)
    assert report.scenario_hashes == [s.hash for s in ev]
    assert pl.Report.from_json(report.to_json()) == report
    assert pl.Report.from_csv(report.to_csv()) == report
    again, _ = pl.evaluate(ev, config, 7, agents, pb, fb)
    assert again.to_json() == report.to_json()
    with pytest.raises(ValueError):
        pl.evaluate(ev, config, 7, ["p-coop"])
    report.export(tmp_path / "rep")
    assert (tmp_path / "rep" / "metrics.csv").exists()
