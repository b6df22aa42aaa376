"""Finite element forward solver for the transient measurement model.

Piecewise linear elements on the parametric disk mesh discretize the weak
form of b du/dt - div(a grad u) = 0 with the Robin condition
a du/dn = c (f - u): a stiffness matrix weighted by the conductivity, a mass
matrix weighted by the capacity, a boundary mass matrix weighted by the
surface conductance, and one boundary load vector per heater.  The resulting
ODE system is integrated with Crank-Nicolson, one heater active at a time
from a cold start, and the measurement vector collects the sensor-node values
at the scheduled times, ordered heater-major, then sensor, then time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.sparse import coo_matrix, csc_matrix
from scipy.sparse.linalg import splu

from thermtomo.geometry import BodyParametrization, MeshedDomain, ParameterVector, generate_mesh

__all__ = [
    "MeasurementSchedule",
    "SystemMatrices",
    "ForwardModel",
    "assemble",
    "assemble_from_values",
    "crank_nicolson_solve",
    "measure",
    "forward_map",
    "flat_index",
    "write_measurements",
    "read_measurements",
]


@dataclass(frozen=True)
class MeasurementSchedule:
    """Heating horizon, time discretization and measurement instants.

    Measurements are taken at t_i = i*T/n_times for i = 1..n_times; the step
    count must make those instants exact step multiples (no interpolation in
    time).  The active heater is driven by g(t) = heating_slope * t.
    """

    horizon: float = 2.0
    steps: int = 60
    n_times: int = 6
    heating_slope: float = 5.0

    def __post_init__(self):
        if self.steps % self.n_times != 0:
            raise ValueError("measurement times must be integer multiples of the time step")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def measurement_steps(self) -> np.ndarray:
        stride = self.steps // self.n_times
        return np.arange(1, self.n_times + 1) * stride

    @property
    def times(self) -> np.ndarray:
        return self.measurement_steps * self.dt

    def g(self, t: float) -> float:
        return self.heating_slope * t


def flat_index(j: int, r: int, i: int, sensor_count: int, n_times: int) -> int:
    """Measurement vector position of (heater j, sensor r, time index i)."""
    return (j * sensor_count + r) * n_times + i


@dataclass
class SystemMatrices:
    """Sparse FE blocks of the semi-discrete system B u' + (A + C) u = f."""

    stiffness: csc_matrix  # A, weighted by a
    mass: csc_matrix  # B, weighted by b
    boundary_mass: csc_matrix  # C, weighted by c
    heater_loads: np.ndarray  # (J, n) spatial part of (c f, v), f = chi_j


def _edge_values(mesh: MeshedDomain, theta: ParameterVector, param: BodyParametrization):
    """Surface conductance per boundary edge from the edge labels."""
    J = mesh.heater_count
    gap_vals = param.c_values(theta.c)
    vals = np.empty(len(mesh.edge_label))
    heater = mesh.edge_label < J
    vals[heater] = param.c_heater
    vals[~heater] = gap_vals[mesh.edge_label[~heater] - J]
    return vals, heater


def assemble(mesh: MeshedDomain, theta: ParameterVector, param: BodyParametrization) -> SystemMatrices:
    """P1 matrices for the weak form, with a and b constant per element (pixel
    value at the pulled-back centroid) and c constant per boundary edge."""
    a_elem = param.a_values(theta.a)[mesh.triangle_pixel]
    b_elem = param.b_values(theta.b)[mesh.triangle_pixel]
    c_edge, _ = _edge_values(mesh, theta, param)
    return assemble_from_values(mesh, a_elem, b_elem, c_edge, param.c_heater)


def assemble_from_values(
    mesh: MeshedDomain,
    a_elem: np.ndarray,
    b_elem: np.ndarray,
    c_edge: np.ndarray,
    c_heater: float,
) -> SystemMatrices:
    """Assembly from per-element conductivity/capacity and per-edge
    conductance values (the analytic-target simulation path uses this
    directly, bypassing the pixel parametrization)."""
    nodes, tris = mesh.nodes, mesh.triangles
    n = len(nodes)
    a_elem = np.asarray(a_elem, dtype=float)
    b_elem = np.asarray(b_elem, dtype=float)
    c_edge = np.asarray(c_edge, dtype=float)
    if np.any(a_elem <= 0) or np.any(b_elem <= 0):
        raise ValueError("conductivity/capacity lost positivity")

    p = nodes[tris]  # (nt, 3, 2)
    # gradient coefficients of the P1 basis: grad phi_i = (b_i, c_i) / (2 area)
    bvec = p[:, [1, 2, 0], 1] - p[:, [2, 0, 1], 1]
    cvec = p[:, [2, 0, 1], 0] - p[:, [1, 2, 0], 0]
    area = mesh.signed_areas()
    local_stiff = (
        bvec[:, :, None] * bvec[:, None, :] + cvec[:, :, None] * cvec[:, None, :]
    ) * (a_elem / (4.0 * area))[:, None, None]
    local_mass = (np.ones((3, 3)) + np.eye(3))[None, :, :] * (b_elem * area / 12.0)[:, None, None]

    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    stiffness = coo_matrix((local_stiff.ravel(), (rows, cols)), shape=(n, n)).tocsc()
    mass = coo_matrix((local_mass.ravel(), (rows, cols)), shape=(n, n)).tocsc()

    edges = mesh.boundary_edges
    if np.any(c_edge <= 0):
        raise ValueError("surface conductance lost positivity")
    lens = np.linalg.norm(nodes[edges[:, 1]] - nodes[edges[:, 0]], axis=1)
    local_bmass = np.array([[2.0, 1.0], [1.0, 2.0]])[None] * (c_edge * lens / 6.0)[:, None, None]
    erows = np.repeat(edges, 2, axis=1).ravel()
    ecols = np.tile(edges, (1, 2)).ravel()
    boundary_mass = coo_matrix((local_bmass.ravel(), (erows, ecols)), shape=(n, n)).tocsc()

    loads = np.zeros((mesh.heater_count, n))
    half = c_heater * lens / 2.0
    on_heater = mesh.edge_label < mesh.heater_count
    for e in np.nonzero(on_heater)[0]:
        j = mesh.edge_label[e]
        loads[j, edges[e, 0]] += half[e]
        loads[j, edges[e, 1]] += half[e]
    return SystemMatrices(stiffness, mass, boundary_mass, loads)


def crank_nicolson_solve(
    system: SystemMatrices,
    schedule: MeasurementSchedule,
    heater,
    g: Callable[[float], float] | None = None,
    initial: np.ndarray | None = None,
) -> np.ndarray:
    """Integrate the semi-discrete system for one heating pattern.

    ``heater`` is a heater index or a custom load vector (test harness).
    Returns the nodal states at the measurement times, shape (n_times, n).
    """
    load = system.heater_loads[heater] if np.isscalar(heater) else np.asarray(heater)
    if g is None:
        g = schedule.g
    dt = schedule.dt
    s_half = 0.5 * (system.stiffness + system.boundary_mass)
    lhs = (system.mass / dt + s_half).tocsc()
    rhs_op = (system.mass / dt - s_half).tocsc()
    lu = splu(lhs)
    u = np.zeros(lhs.shape[0]) if initial is None else np.asarray(initial, dtype=float).copy()
    record = np.empty((schedule.n_times, lhs.shape[0]))
    targets = {int(s): i for i, s in enumerate(schedule.measurement_steps)}
    for step in range(1, schedule.steps + 1):
        t_prev, t_new = (step - 1) * dt, step * dt
        rhs = rhs_op @ u + 0.5 * (g(t_new) + g(t_prev)) * load
        u = lu.solve(rhs)
        if step in targets:
            record[targets[step]] = u
    return record


def measure(states: np.ndarray, mesh: MeshedDomain, schedule: MeasurementSchedule) -> np.ndarray:
    """One heater's measurement block: sensor-node values at all measurement
    times, flattened sensor-major."""
    return states[:, mesh.sensor_nodes].T.ravel()


@dataclass(frozen=True)
class ForwardModel:
    """Configured parametric forward map theta -> U.

    Picklable (so surrogate builds can farm evaluations out to worker
    processes); the sparse factorization is rebuilt per call and shared by
    the heater loop.
    """

    param: BodyParametrization
    schedule: MeasurementSchedule = field(default_factory=MeasurementSchedule)
    resolution: int = 2000

    @property
    def out_dim(self) -> int:
        shape = self.param.shape
        return shape.heater_count * shape.sensor_count * self.schedule.n_times

    @property
    def dim(self) -> int:
        return self.param.dim

    def fingerprint(self) -> str:
        from dataclasses import asdict

        payload = {
            "param": asdict(self.param),
            "schedule": asdict(self.schedule),
            "resolution": self.resolution,
        }
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def __call__(self, theta_flat, strict: bool = False) -> np.ndarray:
        theta_flat = np.asarray(theta_flat, dtype=float)
        if strict and np.any((theta_flat < -0.5) | (theta_flat > 0.5)):
            raise ValueError("parameter vector outside Xi^N in strict mode")
        theta = self.param.split(theta_flat)
        mesh = generate_mesh(self.param, theta.shape, self.resolution)
        system = assemble(mesh, theta, self.param)
        blocks = []
        for j in range(mesh.heater_count):
            states = crank_nicolson_solve(system, self.schedule, j)
            blocks.append(measure(states, mesh, self.schedule))
        return np.concatenate(blocks)


def forward_map(
    theta_flat,
    param: BodyParametrization,
    schedule: MeasurementSchedule | None = None,
    resolution: int = 2000,
) -> np.ndarray:
    """One-shot functional form of :class:`ForwardModel`."""
    model = ForwardModel(param, schedule or MeasurementSchedule(), resolution)
    return model(theta_flat)


# ---------------------------------------------------------------------------
# measurement CSV interface
# ---------------------------------------------------------------------------

def write_measurements(path, values: np.ndarray, schedule: MeasurementSchedule, sensor_count: int) -> None:
    """CSV with columns heater,sensor,time_index,time,value; rows in flat
    measurement order (heater-major, then sensor, then time)."""
    values = np.asarray(values, dtype=float)
    n_times = schedule.n_times
    if values.size % (sensor_count * n_times) != 0:
        raise ValueError("measurement vector length does not match the schedule")
    heater_count = values.size // (sensor_count * n_times)
    times = schedule.times
    with open(path, "w") as fh:
        fh.write("heater,sensor,time_index,time,value\n")
        m = 0
        for j in range(heater_count):
            for r in range(sensor_count):
                for i in range(n_times):
                    fh.write(f"{j},{r},{i},{float(times[i])!r},{float(values[m])!r}\n")
                    m += 1


def read_measurements(path) -> np.ndarray:
    """Read a measurement CSV back into the flat vector, verifying the
    documented row order."""
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "heater,sensor,time_index,time,value":
            raise ValueError(f"unexpected measurement CSV header: {header!r}")
        for line in fh:
            j, r, i, _t, v = line.strip().split(",")
            rows.append((int(j), int(r), int(i), float(v)))
    if not rows:
        raise ValueError("empty measurement file")
    n_times = max(r[2] for r in rows) + 1
    sensor_count = max(r[1] for r in rows) + 1
    out = np.empty(len(rows))
    for pos, (j, r, i, v) in enumerate(rows):
        expected = flat_index(j, r, i, sensor_count, n_times)
        if expected != pos:
            raise ValueError("measurement rows out of order")
        out[pos] = v
    return out
