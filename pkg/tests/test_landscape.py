import math

import numpy as np
import pytest

from bilevel_alm import BilevelProblem
from bilevel_alm.errors import InputError
from bilevel_alm.landscape import INFEASIBLE_SIGNATURE, scan, signature, signature_changes
from helpers import clark_westerberg


def cw_response(x):
    """Closed-form lower solution of the Clark-Westerberg problem; None when infeasible."""
    if x > 6.0:
        return None
    if x < 2.0:
        return 2 * x + 1, 2.0, "0"
    if x <= 4.0:
        return 5.0, 0.0, "none"
    return (14 - x) / 2, -0.5, "2"


def test_signature_format():
    assert signature(()) == "none"
    assert signature((2, 0)) == "0|2"


def test_clark_westerberg_scan_matches_closed_form():
    rows = scan(clark_westerberg(), points=81)
    assert len(rows) == 81 and rows[0].x == 0.0 and rows[-1].x == 8.0
    for r in rows:
        ref = cw_response(r.x)
        if ref is None:
            assert r.signature == INFEASIBLE_SIGNATURE and not r.feasible
            assert math.isnan(r.F) and math.isnan(r.y[0])
            continue
        y, dy, sig = ref
        assert r.y[0] == pytest.approx(y, abs=1e-7)
        assert r.F == pytest.approx((r.x - 3) ** 2 + (y - 2) ** 2, abs=1e-6)
        # breakpoints are one-sided; check the derivative away from them
        if min(abs(r.x - 2.0), abs(r.x - 4.0)) > 1e-9:
            assert r.dy_dx[0] == pytest.approx(dy, abs=1e-8)
            assert r.signature == sig


def test_clark_westerberg_kinks_are_bracketed():
    rows = scan(clark_westerberg(), points=401)
    changes = signature_changes(rows)
    assert [(a, b) for _, _, a, b in changes] == [("0", "none"), ("none", "2")]
    assert changes[0][0] <= 2.0 <= changes[0][1]
    assert changes[1][0] <= 4.0 <= changes[1][1]
    best = min((r for r in rows if r.feasible), key=lambda r: r.F)
    assert best.x == pytest.approx(1.0) and best.F == pytest.approx(5.0)


def test_scan_range_and_errors():
    p = clark_westerberg()
    rows = scan(p, 1.0, 3.0, points=5)
    assert [r.x for r in rows] == [1.0, 1.5, 2.0, 2.5, 3.0]
    with pytest.raises(InputError):
        scan(p, 3.0, 1.0)
    with pytest.raises(InputError):
        scan(p, points=1)
    open_p = BilevelProblem(n=1, m=1, F=lambda x, y: y[0], f=lambda x, y: (y[0] - x[0]) ** 2)
    with pytest.raises(InputError, match="unbounded"):
        scan(open_p)
    two = BilevelProblem(n=2, m=1, F=lambda x, y: y[0], f=lambda x, y: y[0] ** 2)
    with pytest.raises(InputError, match="one-dimensional"):
        scan(two, 0.0, 1.0)


def test_scan_is_deterministic():
    a = scan(clark_westerberg(), points=41)
    b = scan(clark_westerberg(), points=41)
    assert np.array_equal(np.array([r.F for r in a]), np.array([r.F for r in b]), equal_nan=True)
