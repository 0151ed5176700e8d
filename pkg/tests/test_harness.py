import xml.etree.ElementTree as ET

import numpy as np
import pytest

from dlhoqmc import harness
from dlhoqmc.harness import (
    EnsembleSpec, StudyConfig, emit_report, estimate_generalization, fit_rate, loglog_svg,
    overlap_fraction, read_csv_data, read_report_csv, run_study, write_training_data)
from dlhoqmc.lattice import epl_rule, rule_point_sets
from dlhoqmc.nn import Architecture, NetParams, TrainingDiverged, TrainingSet, forward, init_xavier
from dlhoqmc.targets import rational_g

from oracles import gauss_tensor

SMALL = dict(target="rational", d=4, m_min=4, m_max=7)


# --- rate fitting ------------------------------------------------------------

def test_fit_rate_exact_power_law():
    N = 2.0 ** np.arange(5, 11)
    assert fit_rate(N, 3.7 * N**-2.0) == pytest.approx(2.0, abs=1e-12)


def test_fit_rate_constant():
    N = 2.0 ** np.arange(5, 11)
    assert fit_rate(N, np.full(6, 0.3)) == pytest.approx(0.0, abs=1e-12)


def test_fit_rate_noisy():
    rng = np.random.default_rng(4)
    N = 2.0 ** np.arange(5, 11)
    vals = N**-2.0 * (1 + 0.01 * rng.standard_normal(6))
    assert fit_rate(N, vals) == pytest.approx(2.0, abs=0.1)


def test_fit_rate_errors():
    with pytest.raises(ValueError):
        fit_rate([1, 2], [1.0, 0.5])
    with pytest.raises(ValueError):
        fit_rate([1, 2, 4], [1.0, 0.0, 0.5])


# --- generalization error --------------------------------------------------------

def _test_set(d=3, m=8):
    rule = epl_rule(m, d)
    pts = [x for _, x in rule_point_sets(rule)]
    return rule, pts


def test_generalization_zero_for_exact_fit():
    p = init_xavier(Architecture.constant_width(3, 3, 5), 0)
    _, pts = _test_set()
    test = TrainingSet(pts, [forward(p, x)[:, 0] for x in pts], (2.0, -1.0))
    assert estimate_generalization(p, test) == 0.0


def test_generalization_constant_residual():
    p = NetParams(Architecture((3, 1)), [np.zeros((1, 3))], [np.array([0.75])])
    _, pts = _test_set()
    r = 0.125
    test = TrainingSet(pts, [np.full(len(x), 0.75 - r) for x in pts], (2.0, -1.0))
    assert estimate_generalization(p, test) == pytest.approx(r, rel=1e-14)


def test_generalization_against_tensor_gauss():
    d = 3
    p = init_xavier(Architecture.constant_width(d, 3, 6), 5)
    rule = epl_rule(12, d)
    pts = [x for _, x in rule_point_sets(rule)]
    test = TrainingSet(pts, [rational_g(x) for x in pts], (2.0, -1.0))
    ref = gauss_tensor(lambda y: (rational_g(y) - forward(p, y)[:, 0]) ** 2, d) ** 0.5
    assert estimate_generalization(p, test) == pytest.approx(ref, rel=1e-3)


def test_overlap_fraction():
    a = np.array([[0.0, 0.0], [0.5, 0.5]])
    b = np.array([[0.5, 0.5], [0.25, 0.75], [0.0, 0.0], [0.1, 0.1]])
    train = TrainingSet.single(a, np.zeros(2))
    test = TrainingSet.single(b, np.zeros(4))
    assert overlap_fraction(train, test) == 1.0


# --- configuration -------------------------------------------------------------

def test_ensemble_grids():
    full = EnsembleSpec.full_grid()
    assert full.lambdas == (1e-5, 1e-6, 1e-7)
    assert full.depths == (4, 8, 16) and full.widths == (6, 12, 24)
    assert full.n_init == 2 and full.epochs == 20000 and full.lr == 1e-4
    assert len(full.members()) == 54
    para = EnsembleSpec.full_grid("parabolic")
    assert para.lambdas == (1e-7, 1e-8, 1e-9) and para.epochs == 100000
    assert EnsembleSpec.full_grid("rational", "ipl").lr == 1e-3
    desk = EnsembleSpec.desk()
    assert desk.lambdas == (1e-6,) and desk.depths == (4, 8) and desk.widths == (12,)
    assert len(desk.members(trained=False)) == 4


def test_config_round_trip():
    cfg = StudyConfig(target="elliptic", d=6, mesh=32, mode="untrained-free",
                      ensemble=EnsembleSpec(lambdas=(1e-5, 1e-7), depths=(4,)))
    back = StudyConfig.from_text(cfg.to_text())
    assert back == cfg
    assert back.hash == cfg.hash
    assert StudyConfig().hash != cfg.hash


def test_config_echoes_every_default():
    text = StudyConfig().to_text()
    for key in ("target", "m_min", "m_max", "test_m", "mode", "seed", "lambdas", "epochs"):
        assert f"{key} = " in text


def test_config_paper_scale_flag():
    cfg = StudyConfig.from_text("[study]\ntarget = parabolic\npaper_scale = true\n")
    assert cfg.ensemble.lambdas == (1e-7, 1e-8, 1e-9)


def test_config_errors():
    with pytest.raises(ValueError):
        StudyConfig.from_text("[study]\nbogus = 1\n")
    with pytest.raises(ValueError):
        StudyConfig(mode="half-trained")
    with pytest.raises(ValueError):
        StudyConfig(m_min=6, m_max=8, test_m=8)


# --- studies ---------------------------------------------------------------------

def test_untrained_studies_deterministic():
    cfg = StudyConfig(mode="untrained-clamped", **SMALL)
    a, b = run_study(cfg), run_study(cfg)
    assert [r.__dict__ for r in a.rows] == [r.__dict__ for r in b.rows]


def test_gap_identity_and_row_layout():
    rep = run_study(StudyConfig(mode="untrained-free", **SMALL))
    assert [r.m for r in rep.rows] == [4, 5, 6, 7]
    assert [r.N for r in rep.rows] == [2**m + 2 ** (m - 1) for m in range(4, 8)]
    for mem in rep.members:
        assert mem.gap <= max(mem.E_G, mem.E_T)
    for row in rep.rows:
        ms = [x for x in rep.members if x.m == row.m]
        assert row.gap == pytest.approx(np.mean([x.gap for x in ms]), rel=1e-15)
        assert row.E_T == pytest.approx(np.mean([x.E_T for x in ms]), rel=1e-15)


def test_best_member_aggregation():
    rep = run_study(StudyConfig(mode="untrained-free", aggregate="best", **SMALL))
    for row in rep.rows:
        ms = [x for x in rep.members if x.m == row.m]
        best = min(ms, key=lambda x: x.E_T)
        assert (row.E_T, row.E_G) == (best.E_T, best.E_G)


@pytest.mark.parametrize("design", ["ipl", "plain"])
def test_other_designs(design):
    rep = run_study(StudyConfig(mode="untrained-clamped", design=design, **SMALL))
    assert [r.N for r in rep.rows] == [2**m for m in range(4, 8)]
    assert np.isfinite(rep.rate)


def test_trained_study_small():
    ens = EnsembleSpec(depths=(2,), widths=(4,), n_init=1, epochs=30)
    rep = run_study(StudyConfig(mode="trained", ensemble=ens, **SMALL))
    assert all(r.members == 1 and r.diverged == 0 for r in rep.rows)


def test_trained_results_independent_of_workers():
    ens = EnsembleSpec(depths=(2,), widths=(4,), n_init=2, epochs=20)
    base = dict(mode="trained", ensemble=ens, target="rational", d=3, m_min=4, m_max=6)
    a = run_study(StudyConfig(workers=1, **base))
    b = run_study(StudyConfig(workers=2, **base))
    assert [r.__dict__ for r in a.rows] == [r.__dict__ for r in b.rows]


def test_diverged_members_excluded(monkeypatch):
    real = harness.train
    calls = {"n": 0}

    def flaky(params, data, cfg):
        calls["n"] += 1
        if calls["n"] % 2:
            raise TrainingDiverged("boom")
        return real(params, data, cfg)

    monkeypatch.setattr(harness, "train", flaky)
    ens = EnsembleSpec(depths=(2,), widths=(3,), n_init=2, epochs=5)
    rep = run_study(StudyConfig(mode="trained", ensemble=ens, workers=1, **SMALL))
    assert all(r.members == 1 and r.diverged == 1 for r in rep.rows)
    assert any("diverged" in w for w in rep.warnings)


# --- reports ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_report():
    return run_study(StudyConfig(mode="untrained-clamped", **SMALL))


def test_report_csv_round_trip(small_report, tmp_path):
    paths = emit_report(small_report, tmp_path)
    meta, rows = read_report_csv(paths["csv"])
    assert meta["config_hash"] == small_report.config.hash
    for r, parsed in zip(small_report.rows, rows):
        assert float(parsed["E_T"]) == r.E_T
        assert float(parsed["E_G"]) == r.E_G
        assert float(parsed["gap"]) == r.gap
        assert int(parsed["N"]) == r.N
    assert float(meta["gap_rate"]) == small_report.rate
    echoed = paths["config"].read_text()
    assert StudyConfig.from_text(echoed) == small_report.config


def test_report_reproducible_from_echo(small_report, tmp_path):
    paths = emit_report(small_report, tmp_path)
    again = run_study(StudyConfig.from_file(paths["config"]))
    assert [r.__dict__ for r in again.rows] == [r.__dict__ for r in small_report.rows]


def test_svg_well_formed(small_report, tmp_path):
    paths = emit_report(small_report, tmp_path)
    root = ET.parse(paths["svg"]).getroot()
    assert root.tag.endswith("svg")
    assert small_report.config.hash in paths["svg"].read_text()


def test_svg_extents_cover_data():
    x = [48, 96, 192, 384]
    series = {"a": (x, [1e-2, 3e-3, 1e-3, 2e-4]), "b": (x, [5e-1, 2e-1, 1e-1, 7e-2])}
    _, (x0, x1, y0, y1) = loglog_svg(series)
    for xs, ys in series.values():
        assert x0 <= np.log10(min(xs)) and np.log10(max(xs)) <= x1
        assert y0 <= np.log10(min(ys)) and np.log10(max(ys)) <= y1


def test_unwritable_report_path(small_report, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_report(small_report, blocker / "sub")


def test_training_data_round_trip(tmp_path):
    pts = np.random.default_rng(0).random((10, 3))
    vals = rational_g(pts)
    path = tmp_path / "data.csv"
    write_training_data(path, pts, vals, {"target": "rational", "mesh": "none",
                                          "dt": "none", "shift": 0.0})
    p, v, meta = read_csv_data(path)
    np.testing.assert_array_equal(p, pts)
    np.testing.assert_array_equal(v, vals)
    assert meta["target"] == "rational"
