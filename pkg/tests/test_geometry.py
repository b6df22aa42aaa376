"""Boundary parametrization, coefficient fields, and the parametric mesh."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thermtomo import geometry as geo

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def shape():
    return geo.ShapeConfig()


@pytest.fixture(scope="module")
def param(shape):
    return geo.BodyParametrization(shape=shape)


def test_spline_partition_of_unity(shape):
    rng = np.random.default_rng(0)
    phi = rng.uniform(0, TWO_PI, 1000)
    total = sum(geo.spline_basis(i, phi, shape.spline_count) for i in range(shape.spline_count))
    assert np.max(np.abs(total - 1.0)) <= 1e-12


def test_splines_nonnegative(shape):
    phi = np.linspace(0, TWO_PI, 2000, endpoint=False)
    for i in range(shape.spline_count):
        assert np.all(geo.spline_basis(i, phi, shape.spline_count) >= 0)


def test_spline_translation_structure(shape):
    n = shape.spline_count
    rng = np.random.default_rng(1)
    phi = rng.uniform(0, TWO_PI, 50)
    for i in range(n):
        shifted = geo.spline_basis(0, (phi - TWO_PI * i / n) % TWO_PI, n)
        assert geo.spline_basis(i, phi, n) == pytest.approx(shifted, abs=1e-12)


def test_spline_derivative_finite_difference(shape):
    n = shape.spline_count
    phi = np.linspace(0.01, TWO_PI - 0.01, 137)
    h = 1e-7
    for i in (0, 3, n - 1):
        fd = (geo.spline_basis(i, phi + h, n) - geo.spline_basis(i, phi - h, n)) / (2 * h)
        assert geo.spline_basis_deriv(i, phi, n) == pytest.approx(fd, abs=1e-6)


def test_radius_reference_values(shape):
    theta = np.zeros(shape.spline_count)
    assert geo.radius(1.234, theta, shape) == 1.0
    up = np.full(shape.spline_count, 0.5)
    down = np.full(shape.spline_count, -0.5)
    phi = np.linspace(0, TWO_PI, 100)
    assert geo.radius(phi, up, shape) == pytest.approx(1.2, abs=1e-12)
    assert geo.radius(phi, down, shape) == pytest.approx(0.8, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_radius_stays_in_bounds(seed):
    shape = geo.ShapeConfig()
    rng = np.random.default_rng(seed)
    theta = rng.uniform(-0.5, 0.5, shape.spline_count)
    phi = np.linspace(0, TWO_PI, 500)
    r = geo.radius(phi, theta, shape)
    assert np.all(r >= shape.rho_minus - 1e-12)
    assert np.all(r <= shape.rho_plus + 1e-12)


def test_homeomorphism_identity_at_zero(shape):
    theta = np.zeros(shape.spline_count)
    pts = np.array([[0.3, 0.4], [-0.2, 0.7], [0.0, 0.0]])
    assert geo.map_to_reference(pts, theta, shape) == pytest.approx(pts)
    assert geo.inverse_map(pts, theta, shape) == pytest.approx(pts)


def test_homeomorphism_boundary_to_circle(shape):
    rng = np.random.default_rng(3)
    theta = rng.uniform(-0.5, 0.5, shape.spline_count)
    phi = rng.uniform(0, TWO_PI, 200)
    r = geo.radius(phi, theta, shape)
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    ref = geo.map_to_reference(pts, theta, shape)
    assert np.hypot(ref[:, 0], ref[:, 1]) == pytest.approx(shape.rho0, abs=1e-12)


def test_homeomorphism_roundtrip(shape):
    rng = np.random.default_rng(5)
    theta = rng.uniform(-0.5, 0.5, shape.spline_count)
    pts = []
    while len(pts) < 1000:
        cand = rng.uniform(-1.3, 1.3, 2)
        phi = math.atan2(cand[1], cand[0]) % TWO_PI
        if math.hypot(*cand) <= geo.radius(phi, theta, shape):
            pts.append(cand)
    pts = np.asarray(pts)
    back = geo.inverse_map(geo.map_to_reference(pts, theta, shape), theta, shape)
    assert np.max(np.abs(back - pts)) <= 1e-12


def test_map_rejects_outside_point(shape):
    theta = np.zeros(shape.spline_count)
    with pytest.raises(ValueError):
        geo.map_to_reference(np.array([1.5, 0.0]), theta, shape)


def test_heater_layout_reference(shape):
    theta = np.zeros(shape.spline_count)
    segs = geo.heater_segments(theta, shape)
    eta = shape.heater_width
    for j, (a, b) in enumerate(segs):
        assert a == pytest.approx(TWO_PI * j / 8, abs=1e-12)
        assert b - a == pytest.approx(eta, abs=1e-12)
    sensors = geo.sensor_positions(theta, shape)
    ang = np.arctan2(sensors[:, 1], sensors[:, 0]) % TWO_PI
    for j in range(8):
        gap_mid = 0.5 * (segs[j][1] + TWO_PI * (j + 1) / 8)
        assert ang[j] == pytest.approx(gap_mid, abs=1e-12)


def test_heater_arclength_oracle(shape):
    rng = np.random.default_rng(11)
    for _ in range(3):
        theta = rng.uniform(-0.5, 0.5, shape.spline_count)
        for a, b in geo.heater_segments(theta, shape)[:3]:
            xs = np.linspace(a, b, 40001)
            arc = np.trapezoid(geo.boundary_speed(xs, theta, shape), xs)
            assert arc == pytest.approx(shape.heater_width, abs=1e-8)


def test_total_boundary_length_unit_circle(shape):
    theta = np.zeros(shape.spline_count)
    assert geo.arclength(0.0, TWO_PI, theta, shape) == pytest.approx(TWO_PI, abs=1e-12)


def test_layout_rotation_invariance(shape):
    # rotating by 2*pi/J maps the reference layout onto itself, index-shifted
    theta = np.zeros(shape.spline_count)
    segs = geo.heater_segments(theta, shape)
    rot = TWO_PI / shape.heater_count
    for j in range(shape.heater_count):
        nxt = segs[(j + 1) % shape.heater_count]
        assert (segs[j][0] + rot) % TWO_PI == pytest.approx(nxt[0] % TWO_PI, abs=1e-12)


def test_field_defaults_and_extremes(param):
    theta = param.split(np.zeros(param.dim))
    pts = np.array([[0.1, 0.2], [-0.5, 0.1], [0.0, -0.8]])
    assert geo.field_a(pts, theta, param) == pytest.approx([0.55] * 3)
    assert geo.field_b(pts, theta, param) == pytest.approx([0.55] * 3)
    hi = param.split(np.concatenate([np.full(40, 0.5), np.zeros(64)]))
    assert geo.field_a(pts, hi, param) == pytest.approx([1.0] * 3)
    lo = param.split(np.concatenate([np.full(40, -0.5), np.zeros(64)]))
    assert geo.field_a(pts, lo, param) == pytest.approx([0.1] * 3)


def test_field_single_pixel_support(param):
    centers = geo.pixel_centers(param.pixel_layout)
    pix = 7
    flat = np.zeros(param.dim)
    flat[pix] = 0.5
    theta = param.split(flat)
    inside = geo.field_a(centers[pix], theta, param)
    outside = geo.field_a(centers[(pix + 3) % 40], theta, param)
    assert inside == pytest.approx(0.55 + 0.45)
    assert outside == pytest.approx(0.55)


def test_pixel_partition_of_unity(param):
    # every reference point belongs to exactly one pixel
    rng = np.random.default_rng(8)
    r = np.sqrt(rng.uniform(0, 1, 2000))
    phi = rng.uniform(0, TWO_PI, 2000)
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    ids = geo.pixel_of(pts, param.pixel_layout)
    assert ids.min() >= 0 and ids.max() < param.pixel_count
    # equal-area rings: empirical counts are roughly uniform
    counts = np.bincount(ids, minlength=param.pixel_count)
    assert counts.min() > 0


def test_field_c_values(param):
    theta = param.split(np.zeros(param.dim))
    segs = geo.heater_segments(theta.shape, param.shape)
    mid_heater = 0.5 * (segs[0][0] + segs[0][1])
    on_heater = np.array([np.cos(mid_heater), np.sin(mid_heater)])
    assert geo.field_c(on_heater, theta, param) == pytest.approx(10.0)
    gap_mid = 0.5 * (segs[0][1] + segs[1][0])
    in_gap = np.array([np.cos(gap_mid), np.sin(gap_mid)])
    assert geo.field_c(in_gap, theta, param) == pytest.approx(0.11)
    flat = np.zeros(param.dim)
    flat[80] = -0.5  # c block starts after the two 40-pixel blocks
    low = param.split(flat)
    assert geo.field_c(in_gap, low, param) == pytest.approx(0.02)


def test_parameter_vector_roundtrip(param):
    rng = np.random.default_rng(2)
    flat = rng.uniform(-0.5, 0.5, param.dim)
    theta = param.split(flat)
    assert theta.flat() == pytest.approx(flat)
    assert theta.a.shape == (40,) and theta.c.shape == (8,) and theta.shape.shape == (16,)


def test_frozen_blocks_reduce_dimension(shape):
    frozen = geo.BodyParametrization(shape=shape, frozen=("c",))
    assert frozen.dim == 104 - 8
    theta = frozen.split(np.ones(frozen.dim) * 0.1)
    assert np.all(theta.c == 0.0)
    both = geo.BodyParametrization(shape=shape, frozen=("c", "shape"))
    assert both.dim == 80


def test_positivity_guard():
    with pytest.raises(ValueError):
        geo.BodyParametrization(a_mean=0.4, a_amp=0.5)


def test_mesh_reference_disk(param):
    mesh = geo.generate_mesh(param, np.zeros(16), 2000)
    assert 0.8 * 2000 <= len(mesh.nodes) <= 1.2 * 2000
    areas = mesh.signed_areas()
    assert np.all(areas > 0)
    assert areas.sum() == pytest.approx(math.pi, rel=5e-3)


def test_mesh_positive_orientation_random_shapes(param):
    rng = np.random.default_rng(4)
    for _ in range(5):
        theta = rng.uniform(-0.5, 0.5, 16)
        mesh = geo.generate_mesh(param, theta, 2000)
        assert np.all(mesh.signed_areas() > 0)


def test_mesh_boundary_nodes_on_curve(param):
    rng = np.random.default_rng(9)
    theta = rng.uniform(-0.5, 0.5, 16)
    mesh = geo.generate_mesh(param, theta, 2000)
    pts = mesh.nodes[mesh.boundary_nodes]
    phi = np.arctan2(pts[:, 1], pts[:, 0]) % TWO_PI
    r = np.hypot(pts[:, 0], pts[:, 1])
    assert r == pytest.approx(geo.radius(phi, theta, param.shape), abs=1e-10)


def test_mesh_contains_heater_endpoints_and_sensors(param):
    rng = np.random.default_rng(10)
    theta = rng.uniform(-0.5, 0.5, 16)
    mesh = geo.generate_mesh(param, theta, 2000)
    pts = mesh.nodes[mesh.boundary_nodes]
    ang = np.arctan2(pts[:, 1], pts[:, 0]) % TWO_PI
    for a, b in geo.heater_segments(theta, param.shape):
        for target in (a % TWO_PI, b % TWO_PI):
            gap = np.min(np.abs(((ang - target + math.pi) % TWO_PI) - math.pi))
            assert gap <= 1e-9
    sensors = geo.sensor_positions(theta, param.shape)
    assert np.max(np.abs(mesh.nodes[mesh.sensor_nodes] - sensors)) <= 1e-12


def test_mesh_edge_labels_consistent(param):
    theta = np.zeros(16)
    mesh = geo.generate_mesh(param, theta, 2000)
    J = param.shape.heater_count
    # every edge labelled heater j must lie inside heater j's angular range
    segs = geo.heater_segments(theta, param.shape)
    edges = mesh.boundary_edges
    for (n0, n1), lab in zip(edges, mesh.edge_label):
        mid = 0.5 * (mesh.nodes[n0] + mesh.nodes[n1])
        phi = math.atan2(mid[1], mid[0]) % TWO_PI
        if lab < J:
            a, b = segs[lab]
            assert a - 1e-9 <= phi <= b + 1e-9 or a - 1e-9 <= phi + TWO_PI <= b + 1e-9
    heater_len = sum(
        np.linalg.norm(mesh.nodes[n1] - mesh.nodes[n0])
        for (n0, n1), lab in zip(edges, mesh.edge_label)
        if lab < J
    )
    assert heater_len == pytest.approx(J * param.shape.heater_width, rel=1e-3)


def test_mesh_topology_independent_of_shape(param):
    rng = np.random.default_rng(12)
    m1 = geo.generate_mesh(param, np.zeros(16), 2000)
    m2 = geo.generate_mesh(param, rng.uniform(-0.5, 0.5, 16), 2000)
    assert np.array_equal(m1.triangles, m2.triangles)
    assert np.array_equal(m1.boundary_nodes, m2.boundary_nodes)
    assert np.array_equal(m1.sensor_nodes, m2.sensor_nodes)


def test_mesh_resolution_guard(param):
    with pytest.raises(ValueError):
        geo.generate_mesh(param, np.zeros(16), 10)


def test_mesh_export(tmp_path, param):
    mesh = geo.generate_mesh(param, np.zeros(16), 2000)
    out = tmp_path / "mesh.txt"
    geo.export_mesh(mesh, out)
    text = out.read_text().splitlines()
    assert text[0] == "# thermtomo mesh v1"
    assert sum(1 for line in text if line.startswith("node ")) == len(mesh.nodes)
    assert sum(1 for line in text if line.startswith("triangle ")) == len(mesh.triangles)
    assert sum(1 for line in text if line.startswith("sensor ")) == 8
