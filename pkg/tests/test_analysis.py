import io

import numpy as np
import pytest

from mdpcores.analysis import (
    extrapolate_mean_payoff,
    extrapolate_reach,
    stability,
    write_curve_csv,
    write_stability_csv,
)
from mdpcores.generators import AirplaneConfig, build_airplane, build_fig3, build_random
from mdpcores.learncore import learn_core
from mdpcores.model import ModelError
from mdpcores.numerics import bounded_reach_curve, FrontierPolicy


def test_stability_full_model_never_exits():
    mdp = build_random(30, 2, 3, 0.2, seed=0)
    prof = stability(mdp, range(30), 20)
    assert np.all(prof.exits == 0.0)


def test_stability_fig3():
    prof = stability(build_fig3(0.3), [0, 2], 5)
    assert prof.exit_within(1) == pytest.approx(0.3)
    assert np.allclose(prof.exits, 0.3)


def test_stability_monotone_and_bounded_by_core():
    mdp = build_airplane(AirplaneConfig(20, return_trip=True))
    core = learn_core(mdp, 1e-6, seed=0)
    prof = stability(mdp, core, 200)
    assert prof.epsilon == 1e-6
    assert np.all(np.diff(prof.exits) >= -1e-15)
    assert prof.exits[-1] <= core.verified_exit_upper + 1e-12


def test_extrapolate_reach_sandwich():
    mdp = build_random(60, 3, 3, 0.2, seed=6)
    truth, _ = bounded_reach_curve(mdp, [7], 25, FrontierPolicy())
    core = learn_core(mdp, 0.05, seed=0)
    curve = extrapolate_reach(mdp, core, [7], 25, unbounded=True)
    assert np.all(curve.lower <= truth + 1e-12) and np.all(truth <= curve.upper + 1e-12)
    assert list(curve.steps) == list(range(1, 26))
    lo, hi = curve.unbounded
    assert lo <= hi
    full = extrapolate_reach(mdp, range(60), [7], 25)
    assert np.allclose(full.gap, 0.0)


def test_extrapolate_mean_payoff():
    mdp = build_random(40, 2, 3, 0.1, seed=2, reward_range=(0.0, 1.0))
    curve = extrapolate_mean_payoff(mdp, [0], 0.0, 1.0, 10)
    assert curve.objective == "mean-payoff"
    assert np.all(curve.lower <= curve.upper)
    assert curve.upper[0] == pytest.approx(mdp.rewards[0])
    with pytest.raises(ValueError):
        extrapolate_mean_payoff(mdp, [0], 1.0, 0.0, 10)
    with pytest.raises(ValueError):
        extrapolate_mean_payoff(mdp, [0], 0.5, 0.6, 10) if not 0.5 <= mdp.rewards[0] <= 0.6 \
            else extrapolate_mean_payoff(mdp, [0], 2.0, 3.0, 10)
    with pytest.raises(ModelError):
        extrapolate_mean_payoff(build_fig3(0.3), [0], 0.0, 1.0, 3)


def test_core_must_contain_initial():
    with pytest.raises(ModelError):
        stability(build_fig3(0.3), [1, 2], 3)
    with pytest.raises(ValueError):
        stability(build_fig3(0.3), [0], 0)


def test_csv_writers():
    prof = stability(build_fig3(0.3), [0, 2], 2)
    buf = io.StringIO()
    write_stability_csv(prof, buf)
    assert buf.getvalue().splitlines() == ["step,exit", "1,0.3", "2,0.3"]
    curve = extrapolate_reach(build_fig3(0.3), [0, 2], [2], 2)
    buf = io.StringIO()
    write_curve_csv(curve, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "step,lower,upper" and len(lines) == 3
    assert lines[1].startswith("1,0.7,")
