import numpy as np
import pytest
from hypothesis import given, strategies as st

from polyinj.deformations import Fold, Identity, Shear, Translated, u_composed
from polyinj.degree import (
    BoundaryTrace, DegreeError, StabilizationError, TooCloseError, curve_trace,
    degree_field, degree_stability, injectivity_report, preimage_histogram, trace_of, winding_number,
)
from polyinj.geometry import make_domain

SQUARE = make_domain("unit-square")
SEC5 = make_domain("rectangle", (-1, 1, 0, 1))


def circle(k=1, r=1.0):
    return lambda th: r * np.column_stack([np.cos(k * th), np.sin(k * th)])


def _inside_polygon(P, pts):
    """Even-odd ray casting, an oracle independent of angle sums."""
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    for (x0, y0), (x1, y1) in zip(P[:-1], P[1:]):
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < xi)
    return inside


def test_winding_examples():
    t = curve_trace(circle())
    assert winding_number(t, (0, 0)) == 1
    assert winding_number(t, (5, 5)) == 0
    assert winding_number(curve_trace(circle(2)), (0, 0)) == 2


@pytest.mark.parametrize("k", [-2, -1, 0, 1, 2, 3])
def test_winding_multiple_turns(k):
    t = curve_trace(lambda th: np.column_stack([np.cos(k * th), np.sin(k * th)]) if k else
                    np.column_stack([2 + np.cos(th), np.sin(th)]))
    assert winding_number(t, (0, 0)) == k


def test_winding_errors():
    t = curve_trace(circle())
    with pytest.raises(TooCloseError):
        winding_number(t, (1.0, 0.0))
    coarse = BoundaryTrace(np.array([[1, 0], [0, 1], [-1, 0], [0, -1.0]]), np.arange(4.0))
    assert winding_number(coarse, (0, 0)) == 1
    with pytest.raises(DegreeError):
        trace_of(Identity(), SQUARE, 100)


def test_trace_closed_and_ordered():
    t = trace_of(Identity(), SQUARE, 512)
    assert np.array_equal(t.points[0], t.points[-1])
    assert np.all(np.diff(t.params) > 0)


@given(st.integers(0, 2 ** 31), st.integers(1, 500))
def test_winding_invariant_under_reparametrization(seed, shift):
    r = np.random.default_rng(seed)
    t = trace_of(u_composed(), SEC5, 1024)
    y = r.uniform(-3, 3, 2)
    try:
        w = winding_number(t, y, tol=1e-3)
    except TooCloseError:
        return
    assert winding_number(t.reparametrized(shift), y, tol=1e-3) == w
    assert winding_number(t.resampled(2), y, tol=1e-3) == w


def test_identity_field_matches_point_in_polygon():
    t = trace_of(Identity(), SQUARE, 1024)
    f = degree_field(t, 64)
    c = f.grid.centers()
    inside = _inside_polygon(t.points, c).reshape(f.degree.shape)
    off = ~f.on_curve
    assert np.array_equal(f.degree[off], inside[off].astype(int))
    assert f.gamma == 1
    # exterior ring of the raster is the unbounded component
    assert np.all(f.degree[0, :] == 0) and np.all(f.degree[:, -1] == 0)
    with pytest.raises(DegreeError):
        degree_field(t, 32)


def test_field_unchanged_by_resampling():
    t = trace_of(u_composed(), SEC5, 2048)
    a = degree_field(t, 96)
    b = degree_on_same_grid(t.resampled(2), a.grid)
    assert np.array_equal(a.degree, b.degree)


def degree_on_same_grid(t, grid):
    from polyinj.degree import degree_on_grid
    return degree_on_grid(t, grid)


def test_composed_trace_has_single_gamma():
    f = degree_field(trace_of(u_composed(), SEC5, 4096), 128)
    assert f.gamma in (-1, 1)


def test_threads_do_not_change_field():
    t = trace_of(u_composed(), SEC5, 2048)
    assert np.array_equal(degree_field(t, 128, threads=1).degree, degree_field(t, 128, threads=4).degree)


def test_degree_stability():
    base = curve_trace(circle())
    seq = [BoundaryTrace(base.points + (1 / k), base.params) for k in range(1, 8)]
    res = degree_stability(seq, (-0.3, -0.3), limit=base)
    assert res.target == 1 and all(d == 1 for d in res.degrees[res.k0 - 1:])
    assert res.degrees[:2] == [0, 0] and res.k0 == 3
    assert degree_stability([base] * 5, (0, 0)).k0 == 1
    with pytest.raises(StabilizationError):
        degree_stability([base, base], (0.9, 0.0), limit=curve_trace(circle(r=0.5)))


def _interior_cells(h, lo=(0, 0), hi=(1, 1)):
    """Cells lying fully inside the box image (partially covered edge cells excluded)."""
    c = h.grid.centers().reshape(h.grid.nx, h.grid.ny, 2)
    m = np.hypot(h.grid.dx, h.grid.dy)
    return np.all((c > np.add(lo, m)) & (c < np.subtract(hi, m)), axis=-1)


def test_histogram_identity(rng):
    h = preimage_histogram(Identity(), SQUARE, 10 ** 5, 64, rng=rng)
    pop = h.resolved() & _interior_cells(h)
    assert pop.sum() > 500
    assert np.all(np.rint(h.n_u[pop]) == 1)
    assert h.mass_rel_error < 0.02

    class Broken(Identity):
        def singular(self, x):
            return np.arange(len(x)) % 10 == 0  # 10% of evaluations fail

    with pytest.raises(DegreeError):
        preimage_histogram(Broken(), SQUARE, 10 ** 5, 64, rng=rng)


def test_histogram_fold_counts_two(rng):
    # N_u = 2 needs about 100 hits per cell before the standard error drops below 0.2
    h = preimage_histogram(Fold(), SEC5, 10 ** 6, 64, rng=rng)
    pop = h.resolved() & _interior_cells(h)
    assert pop.sum() > 500
    assert np.all(np.rint(h.n_u[pop]) == 2)
    assert h.mass_rel_error < 0.02


def test_histogram_mass_at_1e6():
    h = preimage_histogram(Shear(0.3), SEC5, 10 ** 6, 128, rng=3)
    assert h.mass_rel_error < 0.02


@pytest.mark.parametrize("m", [Identity(), Shear(0.1), Translated(Shear(0.2), (1.0, -2.0))], ids=lambda m: m.name)
def test_injectivity_report_smooth(m):
    rep = injectivity_report(m, SEC5, 2 * 10 ** 5, 64, rng=0)
    assert rep.injective_ae and rep.overlap_area == 0.0
    assert rep.deg_equals_Nu and rep.agreement >= 0.95 and rep.compared_cells > 500
    assert rep.gamma == 1 and rep.min_det > 0


def test_injectivity_report_fold():
    rep = injectivity_report(Fold(), SEC5, 10 ** 6, 64, rng=0)
    assert not rep.injective_ae and rep.max_Nu == 2
    assert not rep.deg_equals_Nu  # the fold trace has degree 0 where N_u = 2


def test_injectivity_report_rejects_foreign_trace():
    t = trace_of(Shear(0.3), SEC5, 1024)
    with pytest.raises(DegreeError):
        injectivity_report(Identity(), SEC5, 10 ** 5, 64, trace=t)


COUNTEREXAMPLE_DEFECT = ("with the printed formulas the composed map is injective a.e.: the leaked material never "
                         "rotates onto the main part, so no N_u = 2 region exists (see the decision ledger)")


@pytest.mark.xfail(strict=True, reason=COUNTEREXAMPLE_DEFECT)
def test_composed_histogram_has_double_cover():
    h = preimage_histogram(u_composed(), SEC5, 10 ** 6, 128, rng=0)
    assert h.max_count() == 2 and h.overlap_area() > 0


@pytest.mark.xfail(strict=True, reason=COUNTEREXAMPLE_DEFECT)
def test_composed_report_non_injective():
    rep = injectivity_report(u_composed(), SEC5, 10 ** 6, 128, rng=0)
    assert not rep.injective_ae and rep.overlap_area > 0


def test_composed_report_what_does_reproduce():
    rep = injectivity_report(u_composed(), SEC5, 10 ** 6, 128, rng=0)
    assert rep.gamma == 1 and rep.min_det > 0
    # the leaked material sits outside the topological image: deg 0 where N_u = 1
    assert rep.disagreement_area > 0.1 and rep.agreement < 0.99
