import math
import os
from pathlib import Path

import numpy as np
import pytest

import fwdutil

CONFIGS = Path(os.environ.get("FWD_CONFIG_DIR", Path(__file__).resolve().parents[2] / "configs"))


def test_market_premium_and_projection():
    m = fwdutil.Market(2, 1, 0.02, [0.07], [[0.2], [0.0]])
    assert m.eta == pytest.approx([0.25, 0.0])
    par, perp = m.project([0.3, 0.4])
    assert par == pytest.approx([0.3, 0.0])
    assert perp == pytest.approx([0.0, 0.4])
    assert len(m.hash()) == 16


def test_singular_market_raises():
    with pytest.raises(fwdutil.FwdError):
        fwdutil.Market(1, 1, 0.0, [0.05], [[0.0]])


def test_power_utility_conjugate():
    u = fwdutil.InitialUtility.power(0.5)
    assert u.u(4.0) == pytest.approx(4.0)
    assert u.conj(0.5) == pytest.approx(2.0)
    assert u.risk_tolerance(2.0) == pytest.approx(4.0)


def test_single_atom_mixture_is_transported_power():
    t = 0.7
    U, Ux, _ = fwdutil.mixture_primal([0.5], [1.0], 2.0, 0.0625 * t, 0.02 * t)
    assert U == pytest.approx(2.0 * math.sqrt(2.0) * math.exp(-0.04125 * t), rel=1e-12)


def test_flow_built_field_matches_closed_form():
    m = fwdutil.Market(1, 1, 0.02, [0.07], [[0.2]])
    grid = fwdutil.log_grid(0.05, 20.0, 48)
    U, Ux = fwdutil.merton_utility_field(m, 0.5, 8, 20, 0.01, 3, grid)
    assert U.shape == (8, 21, 48)
    x = np.asarray(grid)
    closed = 2.0 * np.sqrt(x) * math.exp(-0.04125 * 0.2)
    inside = (x > 0.2) & (x < 5.0)
    assert np.max(np.abs(U[:, 20, inside] / closed[inside] - 1.0)) < 1e-2


def test_run_and_summarize(tmp_path):
    code, report, out = fwdutil.run(CONFIGS / "decreasing-eta0.toml", tmp_path)
    assert code == 0
    assert report["all_pass"]
    assert (Path(out) / "report.json").exists()
    s = fwdutil.summarize(tmp_path)
    assert s["fail"] == 0 and s["pass"] == len(report["entries"])
    cfg = fwdutil.load_config(CONFIGS / "merton-power.toml")
    assert cfg["kind"] == "flow"
