import numpy as np
import pytest

from idid_smm.datasets import (
    EffectSpec,
    PanelData,
    RcsData,
    load_panel_csv,
    load_rcs_csv,
    validate,
)
from idid_smm.exceptions import EmptyTimeStratumError, MissingColumnError
from idid_smm.simulation import TwoPeriodMarginals, generate, generate_rcs_planted

PANEL_CSV = "z,d0,y0,d1,y1\n1,0,0,1,2\n1,0,0,1,2\n0,0,0,1,1\n0,0,0,0,1\n"


def test_load_panel_csv_four_rows(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text(PANEL_CSV)
    panel = load_panel_csv(path)
    assert panel.n == 4
    assert panel.p == 0
    assert panel.z.tolist() == [1, 1, 0, 0]


def test_load_panel_csv_missing_column(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text("z,d0,y0,y1\n1,0,0,2\n0,0,0,1\n")
    with pytest.raises(MissingColumnError):
        load_panel_csv(path)


def test_panel_csv_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    panel = PanelData.from_arrays(
        z=rng.binomial(1, 0.5, 50).astype(float),
        d0=rng.binomial(1, 0.5, 50).astype(float),
        y0=rng.exponential(1.0, 50),
        d1=rng.binomial(1, 0.5, 50).astype(float),
        y1=rng.exponential(1.0, 50),
    )
    path = tmp_path / "rt.csv"
    panel.to_csv(path)
    back = load_panel_csv(path)
    for field in ("z", "d0", "y0", "d1", "y1"):
        assert np.array_equal(getattr(panel, field), getattr(back, field))


def test_load_rcs_csv_two_plus_two(tmp_path):
    path = tmp_path / "rcs.csv"
    path.write_text("z,t,d,y\n1,0,0,1\n0,0,0,1\n1,1,1,2\n0,1,0,1\n")
    rcs = load_rcs_csv(path)
    assert rcs.n == 4
    assert rcs.p == 0


def test_load_rcs_csv_single_period(tmp_path):
    path = tmp_path / "rcs.csv"
    path.write_text("z,t,d,y\n1,1,1,2\n0,1,0,1\n")
    with pytest.raises(EmptyTimeStratumError):
        load_rcs_csv(path)


def test_validate_rcs_period_cell_counts():
    rcs = generate_rcs_planted(TwoPeriodMarginals(), -1.27, 1656, 15234, seed=0)
    report = validate(rcs)
    assert report.n == 16890
    assert report.n_by_cell["T=0"] == 1656
    assert report.n_by_cell["T=1"] == 15234


def test_validate_degenerate_instrument_is_fatal():
    panel = PanelData.from_arrays(
        z=[1, 1, 1], d0=[0, 1, 0], y0=[1, 2, 1], d1=[1, 1, 0], y1=[2, 2, 1])
    report = validate(panel)
    assert not report.ok
    assert "degenerate-instrument" in report.fatal


def test_validate_flags_common_binary_outcome():
    rng = np.random.default_rng(0)
    panel = PanelData.from_arrays(
        z=rng.binomial(1, 0.5, 1000).astype(float),
        d0=rng.binomial(1, 0.5, 1000).astype(float),
        y0=rng.binomial(1, 0.30, 1000).astype(float),
        d1=rng.binomial(1, 0.5, 1000).astype(float),
        y1=rng.binomial(1, 0.30, 1000).astype(float),
    )
    report = validate(panel, EffectSpec(scale="multiplicative"))
    assert any(w.startswith("rare-binary") for w in report.warnings)


def test_validate_accepts_rare_binary_outcome():
    panel = generate(2, 100_000, seed=11)
    report = validate(panel, EffectSpec(scale="multiplicative"))
    assert report.ok
    assert not any(w.startswith("rare-binary") for w in report.warnings)


def test_validate_rejects_missing_values():
    rcs = RcsData.from_arrays(z=[1, 0, 1, 0], t=[0, 0, 1, 1],
                              d=[0, 1, 0, 1], y=[1.0, np.nan, 2.0, 1.0])
    report = validate(rcs)
    assert not report.ok
    assert any(f.startswith("missing-values") for f in report.fatal)
