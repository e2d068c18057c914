import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polyinj.energy import BulkDensity, InfeasibleStateError, MembraneDensity, PressureDensity, U_coercive
from polyinj.geometry import GeometryError, make_domain
from polyinj.minimize import (
    QUALITY_MIN, Constraint, DiscreteDeformation, SolveOptions, assemble_energy_and_gradient, boundary_selection,
    constraint_residual, initial_guess, minimize, null_lagrangian_check, project_constraint, triangulate,
)

SQUARE = make_domain("unit-square")
SEC5 = make_domain("rectangle", (-1, 1, 0, 1))
LSHAPE = make_domain("polygon", [(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)])


def bilinear(x):
    """Boundary data that is affine along every edge of the unit square."""
    x = np.asarray(x, dtype=float)
    return np.column_stack([x[:, 0] + 0.2 * x[:, 0] * x[:, 1], x[:, 1] + 0.1 * x[:, 0] * x[:, 1]])


# -- meshes ---------------------------------------------------------------------

def test_triangulate_examples():
    m = triangulate(SQUARE, 0.5)
    assert len(m.tris) >= 8 and abs(m.areas.sum() - 1.0) <= 1e-12
    m = triangulate(SEC5, 0.1)
    assert abs(m.perimeter() - 6.0) <= 1e-12
    assert m.quality().min() >= QUALITY_MIN and m.diameters().max() <= 0.1 + 1e-12


def test_polygon_mesh_quality():
    m = triangulate(LSHAPE, 0.25)
    assert m.quality().min() >= QUALITY_MIN
    assert m.diameters().max() <= 0.25 + 1e-12
    assert abs(m.areas.sum() - 3.0) <= 1e-10
    assert abs(m.perimeter() - 8.0) <= 1e-10
    assert m.corner.sum() == 6


def test_mesh_boundary_closed_and_ordered():
    m = triangulate(SEC5, 0.2)
    assert np.all(np.diff(m.boundary_params) > 0)
    # each boundary edge belongs to exactly one triangle
    edges = {}
    for t in m.tris:
        for i, j in ((0, 1), (1, 2), (2, 0)):
            k = (min(t[i], t[j]), max(t[i], t[j]))
            edges[k] = edges.get(k, 0) + 1
    outer = {k for k, c in edges.items() if c == 1}
    assert outer == {(min(a, b), max(a, b)) for a, b in m.edges}


def test_triangulate_errors():
    with pytest.raises(GeometryError):
        triangulate(make_domain("unit-disk"), 0.2)
    with pytest.raises(ValueError):
        triangulate(SQUARE, 0.0)


# -- assembly -------------------------------------------------------------------

def test_identity_energy_and_stationarity():
    m = triangulate(SQUARE, 0.1)
    E, g = assemble_energy_and_gradient(DiscreteDeformation(m, m.vertices.copy()), BulkDensity())
    assert E == pytest.approx(4.0, abs=1e-12)
    assert np.linalg.norm(g[m.interior_vertices()]) <= 1e-8


def _fd_check(uh, W, U, rng, n_dirs=None):
    E, g = assemble_energy_and_gradient(uh, W, U)
    h = 1e-6
    fd = np.zeros_like(uh.u)
    idx = range(uh.u.size) if n_dirs is None else rng.choice(uh.u.size, n_dirs, replace=False)
    for k in idx:
        i, j = divmod(int(k), 2)
        up, dn = uh.u.copy(), uh.u.copy()
        up[i, j] += h
        dn[i, j] -= h
        fd[i, j] = (assemble_energy_and_gradient(DiscreteDeformation(uh.mesh, up), W, U)[0]
                    - assemble_energy_and_gradient(DiscreteDeformation(uh.mesh, dn), W, U)[0]) / (2 * h)
    mask = np.zeros(uh.u.size, dtype=bool)
    mask[list(idx)] = True
    mask = mask.reshape(uh.u.shape)
    return float(np.linalg.norm((fd - g)[mask]) / max(np.linalg.norm(g[mask]), 1e-12))


@pytest.mark.parametrize("U", [None, PressureDensity(pi0=0.7), MembraneDensity(eps0=0.5),
                               U_coercive(PressureDensity(), 1.0)], ids=["zero", "pressure", "membrane", "coercive"])
def test_gradient_matches_fd(U, rng):
    m = triangulate(SQUARE, 0.25)
    W = BulkDensity(p=3.0)
    for _ in range(10):
        u = m.vertices + 0.01 * rng.standard_normal(m.vertices.shape)
        uh = DiscreteDeformation(m, u)
        assert uh.dets().min() > 0
        assert _fd_check(uh, W, U, rng) <= 1e-5


def test_gradient_fd_polygon_mesh(rng):
    m = triangulate(LSHAPE, 0.4)
    uh = DiscreteDeformation(m, 1.1 * m.vertices + 0.02 * rng.standard_normal(m.vertices.shape))
    assert _fd_check(uh, BulkDensity(), MembraneDensity(), rng) <= 1e-5


def test_quadratic_part_scales_by_four(rng):
    """With the h(det) contribution removed, the |F|^2 part is 2-homogeneous."""
    m = triangulate(SQUARE, 0.2)
    W = BulkDensity()
    u = m.vertices + 0.02 * rng.standard_normal(m.vertices.shape)

    def quad_part(v):
        uh = DiscreteDeformation(m, v)
        return assemble_energy_and_gradient(uh, W)[0] - float(m.areas @ W.h_value(uh.dets()))

    assert quad_part(2 * u) == pytest.approx(4 * quad_part(u), rel=1e-12)


def test_infeasible_state_reports_triangles():
    m = triangulate(SQUARE, 0.5)
    u = m.vertices.copy()
    u[:, 0] *= -1
    with pytest.raises(InfeasibleStateError) as ei:
        assemble_energy_and_gradient(DiscreteDeformation(m, u), BulkDensity())
    assert len(ei.value.where) == len(m.tris)


# -- constraints ----------------------------------------------------------------

def test_projection_examples():
    m = triangulate(SQUARE, 0.5)
    c = np.tile([3.0, -2.0], (m.n_vertices, 1))
    a2 = Constraint("a2")
    assert np.abs(project_constraint(c, m, a2)).max() <= 1e-15
    a1 = Constraint("a1", m.boundary, m.vertices[m.boundary])
    u = project_constraint(m.vertices + 1.0, m, a1)
    assert np.array_equal(u[m.boundary], m.vertices[m.boundary])
    disk = Constraint("a3", K=("disk", (0.0, 0.0), 1.0))
    v = np.zeros((m.n_vertices, 2))
    v[0] = (2.0, 0.0)
    assert np.allclose(project_constraint(v, m, disk)[0], [1.0, 0.0])
    with pytest.raises(ValueError):
        Constraint("a1", np.array([], dtype=int))
    with pytest.raises(ValueError):
        Constraint("a3")
    with pytest.raises(ValueError):
        Constraint("a4")


@given(st.integers(0, 2 ** 31), st.sampled_from(["a2", "box", "disk"]))
def test_projection_residual(seed, kind):
    r = np.random.default_rng(seed)
    m = triangulate(SEC5, 0.4)
    con = Constraint("a2") if kind == "a2" else Constraint(
        "a3", K=("box", (-0.5, 0.0), (0.5, 0.7)) if kind == "box" else ("disk", (0.1, 0.2), 0.6))
    u = project_constraint(r.normal(0, 3, (m.n_vertices, 2)), m, con)
    assert constraint_residual(u, m, con) <= 1e-12
    # projections are idempotent
    assert np.allclose(project_constraint(u, m, con), u, atol=1e-14)


def test_boundary_selection_edges():
    m = triangulate(SQUARE, 0.25)
    ids = boundary_selection(m, SQUARE, "0")
    assert np.allclose(m.vertices[ids, 1], 0.0) and len(ids) >= 2
    assert len(boundary_selection(m, SQUARE, "all")) == len(m.boundary)


# -- solver ---------------------------------------------------------------------

def test_a1_identity_converges():
    dom, trace = minimize(SQUARE, 0.1, BulkDensity(), None, "a1")
    assert trace.converged and trace.rows[-1].energy <= 4 + 1e-6
    assert dom.dets().min() >= 0.5


def test_a1_scaled_identity_volume():
    uh, trace = minimize(SQUARE, 0.1, BulkDensity(), None, "a1", u0=lambda x: 0.8 * np.asarray(x))
    assert abs(uh.volume() - 0.64) <= 1e-10
    assert all(abs(r.volume - 0.64) <= 1e-10 for r in trace.rows)


def test_trace_invariants_from_perturbed_start(rng):
    m = triangulate(SQUARE, 0.1)
    u = bilinear(m.vertices)
    inner = m.interior_vertices()
    u[inner] += 0.01 * rng.standard_normal((len(inner), 2))
    W = BulkDensity()
    uh, tr = minimize(SQUARE, 0.1, W, None, "a1", SolveOptions(max_iter=300), u0=bilinear, mesh=m, u_init=u)
    E = tr.energies()
    assert np.all(np.diff(E) <= 0)
    assert min(r.min_det for r in tr.rows) > 1e-8
    vol = np.array([r.volume for r in tr.rows])
    assert np.abs(vol - vol[0]).max() <= 1e-10
    assert max(r.residual for r in tr.rows) <= 1e-12
    rows = list(tr.csv_rows())
    assert rows[0] == ("iter", "energy", "grad_norm", "min_det") and len(rows) == len(tr.rows) + 1


def test_refinement_energy_non_increasing():
    energies = []
    for h in (0.4, 0.2, 0.1):
        _, tr = minimize(SQUARE, h, BulkDensity(), None, "a1", SolveOptions(max_iter=2000), u0=bilinear)
        energies.append(tr.rows[-1].energy)
    assert np.all(np.diff(energies) <= 1e-6)


def test_a3_vertices_in_K():
    K = ("box", (0.2, 0.2), (0.8, 0.8))
    uh, tr = minimize(SQUARE, 0.2, BulkDensity(), None, "a3", SolveOptions(max_iter=200), K=K)
    assert np.all(uh.u >= 0.2 - 1e-15) and np.all(uh.u <= 0.8 + 1e-15)
    assert np.all(np.diff(tr.energies()) <= 0)
    disk = ("disk", (0.0, 0.0), 0.3)
    uh, _ = minimize(SQUARE, 0.25, BulkDensity(), MembraneDensity(), "a3", SolveOptions(max_iter=100), K=disk)
    assert np.linalg.norm(uh.u, axis=1).max() <= 0.3 + 1e-12


def test_a2_boundary_mean_zero():
    uh, tr = minimize(SEC5, 0.2, BulkDensity(), U_coercive(PressureDensity(), 1.0), "a2", SolveOptions(max_iter=200))
    assert constraint_residual(uh.u, uh.mesh, uh.constraint) <= 1e-12
    assert np.all(np.diff(tr.energies()) <= 0)


def test_infeasible_initial_guess():
    m = triangulate(SQUARE, 0.25)
    flip = lambda x: np.column_stack([-np.asarray(x)[:, 0], np.asarray(x)[:, 1]])
    con = Constraint("a1", m.boundary, flip(m.vertices[m.boundary]))
    with pytest.raises(InfeasibleStateError):
        initial_guess(m, con, flip)


@settings(max_examples=20)
@given(st.integers(0, 2 ** 31))
def test_null_lagrangian(seed):
    r = np.random.default_rng(seed)
    m = triangulate(SQUARE, 0.2)
    base = 0.8 * m.vertices
    fields = [DiscreteDeformation(m, base)]
    for _ in range(2):
        u = base.copy()
        inner = m.interior_vertices()
        u[inner] += 0.05 * r.standard_normal((len(inner), 2))
        fields.append(DiscreteDeformation(m, u))
    assert null_lagrangian_check(fields, 0.64) <= 1e-10
    assert null_lagrangian_check(fields) <= 1e-10


def test_null_lagrangian_rejects_different_boundaries():
    m = triangulate(SQUARE, 0.5)
    with pytest.raises(ValueError):
        null_lagrangian_check([DiscreteDeformation(m, m.vertices), DiscreteDeformation(m, 1.1 * m.vertices)])


def test_injectivity_of_discrete_minimizer():
    from polyinj.degree import injectivity_report
    uh, _ = minimize(SQUARE, 0.1, BulkDensity(), None, "a1", SolveOptions(max_iter=300), u0=bilinear)
    rep = injectivity_report(uh, SQUARE, 2 * 10 ** 5, 64, rng=0)
    assert rep.injective_ae and rep.gamma == 1
