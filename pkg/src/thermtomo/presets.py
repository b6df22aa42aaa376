"""Named simulation targets for the data-generation command.

Two kinds: parameter targets, exactly representable by the parametrization
(a flat vector), and analytic targets, whose conductivity/capacity are given
as functions on the reference disk rather than pixel fields (consumed only by
the simulator; the boundary stays in the spline family).  The analytic
targets approximate published example configurations and are labeled as
approximations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from thermtomo.config import ExperimentConfig
from thermtomo.forward import assemble_from_values, crank_nicolson_solve, measure
from thermtomo.geometry import generate_mesh, map_to_reference

__all__ = ["ParameterTarget", "AnalyticTarget", "resolve_target", "simulate_target", "TARGETS"]


@dataclass
class ParameterTarget:
    name: str
    theta: np.ndarray


@dataclass
class AnalyticTarget:
    """Fields given directly on the reference disk; not representable by the
    pixel parametrization."""

    name: str
    a_fn: Callable[[np.ndarray], np.ndarray]
    b_fn: Callable[[np.ndarray], np.ndarray]
    c_gaps: np.ndarray
    theta_shape: np.ndarray


def _theta_zero(cfg: ExperimentConfig) -> ParameterTarget:
    return ParameterTarget("theta-zero", np.zeros(cfg.geometry.dim))


def _fig2_contact(cfg: ExperimentConfig) -> ParameterTarget:
    """Constant unit-disk body whose contact conductance takes two values:
    the low extreme on the first half of the gaps, the high extreme on the
    rest."""
    param = cfg.geometry
    sizes = param.block_sizes()
    if sizes["c"] == 0:
        raise ValueError("fig2-contact needs an active conductance block")
    theta = np.zeros(param.dim)
    pos = sizes["a"] + sizes["b"]
    J = sizes["c"]
    theta[pos : pos + J // 2] = -0.5
    theta[pos + J // 2 : pos + J] = +0.5
    return ParameterTarget("fig2-contact", theta)


def _fig4_boundary(cfg: ExperimentConfig) -> ParameterTarget:
    """Constant fields on a perturbed body: one outward and one inward bump,
    placed at fixed fractions of the circumference."""
    param = cfg.geometry
    sizes = param.block_sizes()
    if sizes["shape"] == 0:
        raise ValueError("fig4-boundary needs an active shape block")
    n_om = sizes["shape"]
    theta = np.zeros(param.dim)
    pos = sizes["a"] + sizes["b"] + sizes["c"]
    for frac, amp in ((0.125, 0.45), (0.1875, 0.45), (0.625, -0.45), (0.6875, -0.45)):
        theta[pos + int(round(frac * n_om)) % n_om] = amp
    return ParameterTarget("fig4-boundary", theta)


def _gaussian_bump(center, width):
    cx, cy = center
    return lambda p: np.exp(
        -((p[:, 0] - cx) ** 2 + (p[:, 1] - cy) ** 2) / (2.0 * width**2)
    )


def _fig5_smooth(cfg: ExperimentConfig) -> AnalyticTarget:
    """Smooth inclusions (approximation of a published smooth example)."""
    param = cfg.geometry
    hot = _gaussian_bump((0.35, 0.25), 0.28)
    cold = _gaussian_bump((-0.4, -0.2), 0.24)
    hot_b = _gaussian_bump((-0.3, 0.35), 0.3)
    cold_b = _gaussian_bump((0.3, -0.35), 0.26)
    a_fn = lambda p: np.clip(0.55 + 0.35 * hot(p) - 0.35 * cold(p), 0.1, 1.0)
    b_fn = lambda p: np.clip(0.55 + 0.3 * hot_b(p) - 0.3 * cold_b(p), 0.1, 1.0)
    J = param.shape.heater_count
    c_gaps = 0.11 + 0.05 * np.sin(2.0 * math.pi * np.arange(J) / J)
    n_om = param.shape.spline_count
    theta_shape = 0.3 * np.sin(2.0 * math.pi * np.arange(n_om) / n_om)
    return AnalyticTarget("fig5-smooth", a_fn, b_fn, c_gaps, theta_shape)


def _fig6_piecewise(cfg: ExperimentConfig) -> AnalyticTarget:
    """Piecewise constant inclusions (approximation of a published example
    that is incompatible with the smoothness prior)."""
    param = cfg.geometry

    def a_fn(p):
        vals = np.full(len(p), 0.55)
        vals[(p[:, 0] - 0.4) ** 2 + (p[:, 1] - 0.3) ** 2 < 0.25**2] = 0.9
        vals[(p[:, 0] + 0.35) ** 2 + (p[:, 1] + 0.3) ** 2 < 0.3**2] = 0.2
        return vals

    def b_fn(p):
        vals = np.full(len(p), 0.55)
        vals[(p[:, 0] + 0.35) ** 2 + (p[:, 1] - 0.3) ** 2 < 0.28**2] = 0.95
        vals[(p[:, 0] - 0.3) ** 2 + (p[:, 1] + 0.35) ** 2 < 0.22**2] = 0.15
        return vals

    J = param.shape.heater_count
    c_gaps = np.where(np.arange(J) % 2 == 0, 0.05, 0.17)
    n_om = param.shape.spline_count
    theta_shape = np.zeros(n_om)
    theta_shape[: max(1, n_om // 8)] = 0.4
    theta_shape[n_om // 2 : n_om // 2 + max(1, n_om // 8)] = -0.4
    return AnalyticTarget("fig6-piecewise", a_fn, b_fn, c_gaps, theta_shape)


TARGETS = {
    "theta-zero": _theta_zero,
    "fig2-contact": _fig2_contact,
    "fig4-boundary": _fig4_boundary,
    "fig5-smooth": _fig5_smooth,
    "fig6-piecewise": _fig6_piecewise,
}


def resolve_target(name: str, cfg: ExperimentConfig):
    """A named preset, or ``@file.json`` holding {"theta": [...]}."""
    if name.startswith("@"):
        with open(name[1:]) as fh:
            payload = json.load(fh)
        theta = np.asarray(payload["theta"] if isinstance(payload, dict) else payload, dtype=float)
        if theta.shape != (cfg.geometry.dim,):
            raise ValueError(
                f"target vector has length {theta.size}, config needs {cfg.geometry.dim}"
            )
        return ParameterTarget(name[1:], theta)
    try:
        builder = TARGETS[name]
    except KeyError:
        raise ValueError(f"unknown target preset {name!r}; choose from {sorted(TARGETS)}") from None
    return builder(cfg)


def simulate_target(target, cfg: ExperimentConfig, fidelity: str = "fine") -> np.ndarray:
    """Noiseless measurement vector for a target at the requested fidelity."""
    if isinstance(target, ParameterTarget):
        return cfg.forward_model(fidelity)(target.theta)
    param = cfg.geometry
    schedule = cfg.solver.schedule(fidelity)
    mesh = generate_mesh(param, target.theta_shape, cfg.solver.resolution(fidelity))
    centroids = mesh.nodes[mesh.triangles].mean(axis=1)
    ref = map_to_reference(centroids, target.theta_shape, param.shape, tol=1e-6)
    a_elem = target.a_fn(ref)
    b_elem = target.b_fn(ref)
    J = mesh.heater_count
    c_edge = np.empty(len(mesh.edge_label))
    heater = mesh.edge_label < J
    c_edge[heater] = param.c_heater
    c_edge[~heater] = np.asarray(target.c_gaps)[mesh.edge_label[~heater] - J]
    system = assemble_from_values(mesh, a_elem, b_elem, c_edge, param.c_heater)
    blocks = [
        measure(crank_nicolson_solve(system, schedule, j), mesh, schedule)
        for j in range(J)
    ]
    return np.concatenate(blocks)
