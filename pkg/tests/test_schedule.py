import numpy as np
import pytest

from latentdiff.schedule import (NoiseSchedule, alpha, forward_sample,
                                 parse_schedule, schedule_report)

TAN9 = NoiseSchedule(family="tan", d=9.0)
FAMILIES = [TAN9, NoiseSchedule(family="tan", d=7.0),
            NoiseSchedule(family="tan", d=11.0), NoiseSchedule(family="tan", d=13.0),
            NoiseSchedule(family="cosine"), NoiseSchedule(family="sqrt")]


def test_tan9_midpoint_value():
    # tan(pi/4) = 1, so alpha = 1 / (1 + 81)
    assert alpha(0.5, TAN9) == pytest.approx(1.0 / 82.0, abs=1e-9)


def test_tan_endpoints():
    for d in (5.0, 9.0, 13.0):
        sched = NoiseSchedule(family="tan", d=d)
        assert alpha(0.0, sched) == pytest.approx(1.0, abs=1e-5)
        assert alpha(1.0, sched) < 1e-6


def test_tan_d_ordering_and_high_precision_values():
    mpmath = pytest.importorskip("mpmath")
    a9 = alpha(0.25, NoiseSchedule(family="tan", d=9.0))
    a7 = alpha(0.25, NoiseSchedule(family="tan", d=7.0))
    assert a9 < a7
    for d, got in ((9.0, a9), (7.0, a7)):
        with mpmath.workdps(50):
            exact = 1 / (1 + mpmath.tan(mpmath.mpf("0.25") * mpmath.pi / 2) ** 2 * d ** 2)
        assert got == pytest.approx(float(exact), rel=1e-12)


@pytest.mark.parametrize("sched", FAMILIES, ids=lambda s: s.name)
def test_alpha_strictly_decreasing_on_grid(sched):
    grid = np.linspace(0.0, 1.0, 1000)
    values = alpha(grid, sched)
    assert np.all(np.diff(values) < 0)
    assert np.all((values >= 0.0) & (values <= 1.0))


@pytest.mark.parametrize("sched", FAMILIES, ids=lambda s: s.name)
def test_variance_preservation(sched):
    rng = np.random.default_rng(11)
    z0 = rng.standard_normal(100_000)
    for t in np.linspace(0.0, 1.0, 21):
        eps = rng.standard_normal(z0.shape)
        z_t = forward_sample(z0, float(t), eps, sched)
        assert 0.97 <= z_t.var() <= 1.03, f"t={t}"


def test_forward_sample_zero_noise():
    z0 = np.ones((2, 3))
    z_t = forward_sample(z0, 0.3, np.zeros_like(z0), TAN9)
    np.testing.assert_allclose(z_t, np.sqrt(alpha(0.3, TAN9)) * z0)


def test_forward_sample_at_clamp_decorrelates():
    rng = np.random.default_rng(5)
    z0 = rng.standard_normal(10_000)
    eps = rng.standard_normal(10_000)
    z_t = forward_sample(z0, 1.0, eps, TAN9)
    corr = np.corrcoef(z0, z_t)[0, 1]
    assert abs(corr) < 0.05


def test_forward_sample_per_example_t():
    rng = np.random.default_rng(6)
    z0 = rng.standard_normal((4, 3, 2))
    eps = rng.standard_normal(z0.shape)
    t = np.array([0.1, 0.4, 0.7, 0.95])
    z_t = forward_sample(z0, t, eps, TAN9)
    for i, ti in enumerate(t):
        np.testing.assert_allclose(z_t[i], forward_sample(z0[i], float(ti), eps[i], TAN9))


def test_forward_sample_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        forward_sample(np.zeros((2, 3)), 0.5, np.zeros((3, 2)), TAN9)


def test_alpha_rejects_out_of_range_t():
    with pytest.raises(ValueError):
        alpha(-0.01, TAN9)
    with pytest.raises(ValueError):
        alpha(1.01, TAN9)


def test_schedule_family_ordering_in_sqrt_alpha():
    # the tan-9 curve keeps less signal than sqrt, which keeps less than cosine
    grid = np.arange(0.06, 0.5, 0.01)
    tan = np.sqrt(alpha(grid, TAN9))
    sq = np.sqrt(alpha(grid, NoiseSchedule(family="sqrt")))
    cos = np.sqrt(alpha(grid, NoiseSchedule(family="cosine")))
    assert np.all(tan < sq) and np.all(sq < cos)


def test_schedule_report_rows_and_endpoints():
    rows = schedule_report(TAN9, [0.0, 1.0])
    for t, sa, oma in rows:
        assert 0.0 <= sa <= 1.0 and 0.0 <= oma <= 1.0
    assert rows[0][1] == pytest.approx(1.0, abs=1e-2)
    assert rows[0][2] == pytest.approx(0.0, abs=1e-2)
    assert rows[1][1] == pytest.approx(0.0, abs=1e-2)
    assert rows[1][2] == pytest.approx(1.0, abs=1e-2)


def test_parse_schedule_strings():
    assert parse_schedule("tan-9").d == 9.0
    assert parse_schedule("tan-7").name == "tan-7"
    assert parse_schedule("cosine").family == "cosine"
    assert parse_schedule("sqrt").family == "sqrt"
    with pytest.raises(ValueError):
        parse_schedule("linear")


def test_invalid_family_rejected():
    with pytest.raises(ValueError):
        NoiseSchedule(family="banana")
