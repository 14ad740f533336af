import numpy as np
import pytest
from scipy.stats import chi2

from uqaudit.errors import UnsupportedRegionError
from uqaudit.regions import (
    BallRegion,
    HpdRegion,
    ball_from_chain,
    ball_radii,
    contains,
    hpd_from_chain,
    hpd_region,
    hpd_thresholds,
)
from uqaudit.streams import substream


def test_hpd_quantile_convention():
    u = np.arange(1, 101, dtype=float)
    assert hpd_from_chain(u, 0.10) == 10.0
    assert np.sum(u < 10.0) <= 0.10 * u.size


def test_hpd_degenerate_and_small_alpha():
    assert hpd_from_chain(np.full(50, 3.0), 0.2) == 3.0
    u = np.random.default_rng(0).random(200)
    assert hpd_from_chain(u, 1e-6) == u.min()
    r = hpd_region(np.full(50, 3.0), 0.2, evaluator=lambda x: 3.0)
    assert contains(r, np.zeros(2))


def test_hpd_thresholds_match_scalar_version(rng):
    u = rng.standard_normal(333)
    alphas = [0.01, 0.1, 0.5, 0.9]
    np.testing.assert_array_equal(hpd_thresholds(u, alphas), [hpd_from_chain(u, a) for a in alphas])


def test_hpd_needs_evaluator():
    with pytest.raises(UnsupportedRegionError):
        HpdRegion(0.0, 0.1).contains(np.zeros(3))


def test_hpd_max_potential_sample_is_member(rng):
    s = rng.standard_normal((200, 3, 3))

    def pot(x):
        return -0.5 * np.sum(np.asarray(x) ** 2)

    u = np.array([pot(x) for x in s])
    best = s[np.argmax(u)]
    for a in (0.01, 0.1, 0.5, 0.99):
        assert hpd_region(u, a, pot).contains(best)


def test_ball_identical_samples():
    s = np.ones((10, 2, 2))
    b = ball_from_chain(s, 0.3)
    assert b.radius == 0.0
    assert b.contains(np.ones((2, 2))) and not b.contains(np.ones((2, 2)) + 1e-12)


def test_ball_two_points():
    s = np.zeros((2, 1, 1))
    s[0, 0, 0], s[1, 0, 0] = 1.0, -1.0
    b = ball_from_chain(s, 0.4)
    assert b.center[0, 0] == 0.0 and b.radius == 1.0


def test_ball_boundary_is_inclusive_then_strict():
    b = BallRegion(np.zeros((1, 1)), 1.0, 0.1)
    assert b.contains(np.ones((1, 1)))
    assert not b.contains(np.full((1, 1), 1.0 + 1e-9))


def test_ball_center_always_member(rng):
    s = rng.standard_normal((100, 4, 4))
    for a in (0.01, 0.5, 0.99):
        b = ball_from_chain(s, a)
        assert b.contains(b.center)


def test_ball_radius_chi_square_oracle():
    s = substream(3).standard_normal((100_000, 16, 16))
    b = ball_from_chain(s, 0.05, center=np.zeros((16, 16)))
    expect = np.sqrt(chi2.ppf(0.95, 256))
    assert abs(b.radius / expect - 1) < 0.03


def test_monotone_in_alpha(rng):
    s = rng.standard_normal((500, 3, 3))
    alphas = [0.01, 0.05, 0.2, 0.5, 0.9]
    _, r = ball_radii(s, alphas)
    assert np.all(np.diff(r) <= 0) and np.all(r >= 0)
    t = hpd_thresholds(rng.standard_normal(500), alphas)
    assert np.all(np.diff(t) >= 0)


def test_ball_needs_two_samples():
    with pytest.raises(ValueError):
        ball_from_chain(np.zeros((1, 2, 2)), 0.1)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
def test_alpha_out_of_range(alpha):
    with pytest.raises(ValueError):
        hpd_from_chain([1.0, 2.0], alpha)
