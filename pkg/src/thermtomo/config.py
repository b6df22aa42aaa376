"""Experiment configuration: dataclass sections with JSON (de)serialization.

A config file is a JSON object with four sections mirroring the dataclasses
below; ``load_config`` accepts either a path or the name of a shipped preset
(``table1-n104``, ``table1-n984``, ``desk-n28``, ``smoke-n12``).  Defaults
reproduce the reference measurement setup: unit disk, 8 heaters and sensors,
fields in [0.1, 1], conductance 10 on heaters and [0.02, 0.2] in the gaps,
heating profile 5t over a horizon of 2.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from thermtomo.forward import ForwardModel, MeasurementSchedule
from thermtomo.geometry import BodyParametrization, ShapeConfig

__all__ = [
    "SolverSettings",
    "SurrogateSettings",
    "InversionSettings",
    "ExperimentConfig",
    "PRESETS",
    "load_config",
    "preset_config",
]


@dataclass(frozen=True)
class SolverSettings:
    """Fidelity tiers of the forward solver (node counts and step counts)."""

    standard_resolution: int = 3000
    standard_steps: int = 60
    fine_resolution: int = 24000
    fine_steps: int = 96
    horizon: float = 2.0
    n_times: int = 6
    heating_slope: float = 5.0

    def schedule(self, fidelity: str = "standard") -> MeasurementSchedule:
        steps = {"standard": self.standard_steps, "fine": self.fine_steps}[fidelity]
        return MeasurementSchedule(
            horizon=self.horizon,
            steps=steps,
            n_times=self.n_times,
            heating_slope=self.heating_slope,
        )

    def resolution(self, fidelity: str = "standard") -> int:
        return {"standard": self.standard_resolution, "fine": self.fine_resolution}[fidelity]


@dataclass(frozen=True)
class SurrogateSettings:
    budget: int = 5565
    max_degree: int | None = None
    grouping: str = "common"
    total_order: int | None = None
    workers: int = 1


@dataclass(frozen=True)
class InversionSettings:
    delta: float = 1e-2
    reg_variance: float = 0.5  # variance prefactor of the smoothness prior
    corr_length: float = 1.0 / 3.0
    sampler_sigma: float = 0.5  # std of the log-normal sampler's normal field
    noise_rel_std: float = 5e-3
    max_iterations: int = 500
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: BodyParametrization = field(default_factory=BodyParametrization)
    solver: SolverSettings = field(default_factory=SolverSettings)
    surrogate: SurrogateSettings = field(default_factory=SurrogateSettings)
    inversion: InversionSettings = field(default_factory=InversionSettings)

    def forward_model(self, fidelity: str = "standard") -> ForwardModel:
        return ForwardModel(
            self.geometry, self.solver.schedule(fidelity), self.solver.resolution(fidelity)
        )

    @property
    def measurement_count(self) -> int:
        shape = self.geometry.shape
        return shape.heater_count * shape.sensor_count * self.solver.n_times

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(asdict(self), indent=indent, sort_keys=True)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        geo_data = dict(data.get("geometry", {}))
        shape_data = dict(geo_data.pop("shape", {}))
        for key in ("heater_anchors", "sensor_anchors"):
            if key in shape_data:
                shape_data[key] = tuple(shape_data[key])
        if "pixel_layout" in geo_data:
            geo_data["pixel_layout"] = tuple(geo_data["pixel_layout"])
        if "frozen" in geo_data:
            geo_data["frozen"] = tuple(geo_data["frozen"])
        return cls(
            geometry=BodyParametrization(shape=ShapeConfig(**shape_data), **geo_data),
            solver=SolverSettings(**data.get("solver", {})),
            surrogate=SurrogateSettings(**data.get("surrogate", {})),
            inversion=InversionSettings(**data.get("inversion", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


def _table1_n104() -> ExperimentConfig:
    return ExperimentConfig()


def _table1_n984() -> ExperimentConfig:
    return ExperimentConfig(
        geometry=BodyParametrization(pixel_layout=(32, 32, 32, 64, 64, 64, 64, 64, 64)),
        surrogate=SurrogateSettings(
            budget=485605, max_degree=4, grouping="per-group=heater-pairs"
        ),
    )


def _desk_n28() -> ExperimentConfig:
    return ExperimentConfig(
        geometry=BodyParametrization(
            shape=ShapeConfig(spline_count=4), pixel_layout=(8,)
        ),
        solver=SolverSettings(standard_resolution=800, fine_resolution=4000),
        surrogate=SurrogateSettings(budget=200, max_degree=4),
    )


def _smoke_n12() -> ExperimentConfig:
    # shape-heavy parameter split: at this scale the adaptive algorithm then
    # genuinely departs from the total order set within small budgets
    return ExperimentConfig(
        geometry=BodyParametrization(
            shape=ShapeConfig(heater_count=3, sensor_count=3, spline_count=5),
            pixel_layout=(2,),
        ),
        solver=SolverSettings(
            standard_resolution=300, standard_steps=30, fine_resolution=1500, fine_steps=96
        ),
        surrogate=SurrogateSettings(budget=150, max_degree=4),
    )


PRESETS = {
    "table1-n104": _table1_n104,
    "table1-n984": _table1_n984,
    "desk-n28": _desk_n28,
    "smoke-n12": _smoke_n12,
}


def preset_config(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(
            f"unknown config preset {name!r}; choose from {sorted(PRESETS)}"
        ) from None


def load_config(path_or_name: str) -> ExperimentConfig:
    """A preset name, or a path to a JSON config file."""
    if path_or_name in PRESETS:
        return PRESETS[path_or_name]()
    with open(path_or_name) as fh:
        return ExperimentConfig.from_json(fh.read())
