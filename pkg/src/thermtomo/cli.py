"""Command-line pipeline: surrogate construction, data simulation, inversion,
validation, and plotting.

Exit codes: 0 success, 1 usage/argument error, 2 runtime failure.  All
commands are deterministic given a config file and the seeds passed on the
command line.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from thermtomo.config import PRESETS, ExperimentConfig, load_config, preset_config
from thermtomo.forward import read_measurements, write_measurements
from thermtomo.geometry import BodyParametrization, ShapeConfig, heater_segments, sensor_positions
from thermtomo.inversion import (
    add_noise,
    build_regularizer,
    error_metrics,
    sample_parameters,
    solve_lsq,
)
from thermtomo.presets import resolve_target, simulate_target
from thermtomo.sparsegrid import (
    CachedForward,
    adaptive_spam,
    build_from_index_set,
    load_surrogate,
    save_surrogate,
    surrogate_truncate,
    total_order_set,
)

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_grouping(spec: str, cfg: ExperimentConfig):
    """Returns (grouping_mode, groups or None)."""
    if spec in ("common", "per-component"):
        return spec, None
    if spec.startswith("per-group="):
        detail = spec[len("per-group=") :]
        shape = cfg.geometry.shape
        block = shape.sensor_count * cfg.solver.n_times
        if detail == "heater-pairs":
            if shape.heater_count % 2:
                raise ValueError("heater-pairs grouping needs an even heater count")
            groups = [
                list(range(2 * g * block, (2 * g + 2) * block))
                for g in range(shape.heater_count // 2)
            ]
            return "per-group", groups
        if detail.startswith("@"):
            with open(detail[1:]) as fh:
                groups = json.load(fh)
            return "per-group", groups
        raise ValueError(f"unknown per-group spec {detail!r}")
    raise ValueError(f"unknown grouping {spec!r}")


def _group_summary(surrogate) -> str:
    counts = surrogate.poly_counts
    if len(counts) <= 4:
        return str(counts)
    return f"[{counts[0]}, ...] x {len(counts)}"


def cmd_init_config(args) -> int:
    cfg = preset_config(args.preset)
    cfg.save(args.out)
    print(f"wrote {args.preset} config to {args.out}")
    return 0


def cmd_build_surrogate(args) -> int:
    cfg = load_config(args.config)
    surr_cfg = cfg.surrogate
    if args.budget is not None:
        surr_cfg = replace(surr_cfg, budget=args.budget)
    if args.cap is not None:
        surr_cfg = replace(surr_cfg, max_degree=args.cap)
    if args.grouping is not None:
        surr_cfg = replace(surr_cfg, grouping=args.grouping)
    if args.total_order is not None:
        surr_cfg = replace(surr_cfg, total_order=args.total_order)
    if args.workers is not None:
        surr_cfg = replace(surr_cfg, workers=args.workers)

    model = cfg.forward_model("standard")
    cached = CachedForward(model, model.dim, model.out_dim)
    grouping, groups = _parse_grouping(surr_cfg.grouping, cfg)
    provenance = {
        "forward_fingerprint": model.fingerprint(),
        "geometry": asdict(cfg.geometry),
        "solver": asdict(cfg.solver),
        "grouping_spec": surr_cfg.grouping,
    }
    started = time.perf_counter()
    pool = ProcessPoolExecutor(surr_cfg.workers) if surr_cfg.workers > 1 else None
    try:
        if surr_cfg.total_order is not None:
            index_set = total_order_set(surr_cfg.total_order, model.dim)
            surrogate = build_from_index_set(
                cached, model.dim, model.out_dim, index_set,
                grouping=grouping, groups=groups, pool=pool, provenance=provenance,
            )
        else:
            surrogate = adaptive_spam(
                cached, model.dim, model.out_dim, surr_cfg.budget,
                max_degree=surr_cfg.max_degree, grouping=grouping, groups=groups,
                pool=pool, provenance=provenance,
            )
    finally:
        if pool is not None:
            pool.shutdown()
    elapsed = time.perf_counter() - started

    degrees = np.concatenate(
        [np.bincount(g.entry_row, weights=g.entry_deg, minlength=g.poly_count) for g in surrogate.groups]
    )
    total = degrees.size
    second_order = float(np.count_nonzero(degrees == 2)) / total
    save_surrogate(surrogate, args.out)
    print(
        f"built surrogate in {elapsed:.1f}s: N={surrogate.dim} M={surrogate.out_dim} "
        f"grouping={surrogate.grouping} polynomials={_group_summary(surrogate)}"
    )
    print(
        f"forward evaluations: {cached.eval_count}; max total degree: {int(degrees.max())}; "
        f"second-order share: {100.0 * second_order:.1f}%"
    )
    print(f"wrote {args.out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    target = resolve_target(args.target, cfg)
    clean = simulate_target(target, cfg, args.fidelity)
    noisy = add_noise(clean, seed=args.noise_seed, rel_std=cfg.inversion.noise_rel_std)
    shape = cfg.geometry.shape
    schedule = cfg.solver.schedule(args.fidelity)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    clean_path = prefix.with_name(prefix.name + "_clean.csv")
    noisy_path = prefix.with_name(prefix.name + "_noisy.csv")
    write_measurements(clean_path, clean, schedule, shape.sensor_count)
    write_measurements(noisy_path, noisy, schedule, shape.sensor_count)
    print(f"simulated target {target.name!r} at {args.fidelity} fidelity "
          f"({clean.size} measurements)")
    print(f"wrote {clean_path} and {noisy_path}")
    return 0


def _geometry_from_provenance(surrogate) -> BodyParametrization:
    data = dict(surrogate.provenance["geometry"])
    shape_data = dict(data.pop("shape"))
    for key in ("heater_anchors", "sensor_anchors"):
        shape_data[key] = tuple(shape_data[key])
    data["pixel_layout"] = tuple(data["pixel_layout"])
    data["frozen"] = tuple(data["frozen"])
    return BodyParametrization(shape=ShapeConfig(**shape_data), **data)


def cmd_invert(args) -> int:
    cfg = load_config(args.config)
    surrogate = load_surrogate(args.surrogate)
    data = read_measurements(args.data)
    if data.size != surrogate.out_dim:
        raise ValueError(
            f"data has {data.size} rows but the surrogate produces {surrogate.out_dim}"
        )
    param = _geometry_from_provenance(surrogate)
    delta = cfg.inversion.delta if args.delta is None else args.delta
    reg = build_regularizer(
        param, delta=delta,
        variance=cfg.inversion.reg_variance, corr_length=cfg.inversion.corr_length,
    )
    started = time.perf_counter()
    result = solve_lsq(
        surrogate, data, reg,
        max_iterations=cfg.inversion.max_iterations, param=param,
    )
    elapsed = time.perf_counter() - started
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fields = result.fields
    report = {
        "theta": result.theta.tolist(),
        "residual_norm": result.residual_norm,
        "regularization_norm": result.regularization_norm,
        "objective": result.objective,
        "iterations": result.iterations,
        "converged": result.converged,
        "message": result.message,
        "clamped_for_reporting": fields.clamped,
        "delta": delta,
        "wall_time_seconds": elapsed,
    }
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    for name, values in (("a", fields.a_pixels), ("b", fields.b_pixels)):
        with open(out / f"{name}.csv", "w") as fh:
            fh.write("pixel,value\n")
            for i, v in enumerate(values):
                fh.write(f"{i},{float(v)!r}\n")
    with open(out / "c.csv", "w") as fh:
        fh.write("gap,value\n")
        for i, v in enumerate(fields.c_gaps):
            fh.write(f"{i},{float(v)!r}\n")
    with open(out / "boundary.csv", "w") as fh:
        fh.write("angle,radius,x,y\n")
        for ang, r in zip(fields.boundary_angles, fields.boundary_radii):
            fh.write(
                f"{float(ang)!r},{float(r)!r},"
                f"{float(r * np.cos(ang))!r},{float(r * np.sin(ang))!r}\n"
            )
    print(
        f"inversion finished in {elapsed:.2f}s: {result.iterations} iterations, "
        f"residual {result.residual_norm:.3e}, objective {result.objective:.3e} "
        f"({result.message})"
    )
    print(f"wrote report and rasters to {out}/")
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    surrogates = [(Path(p).name, load_surrogate(p)) for p in args.surrogate]
    base_param = _geometry_from_provenance(surrogates[0][1])
    for name, s in surrogates[1:]:
        if s.dim != surrogates[0][1].dim:
            raise ValueError(f"surrogate {name} has mismatched parameter dimension")
    thetas = sample_parameters(
        base_param, args.dist, args.samples, seed=args.seed,
        sigma=cfg.inversion.sampler_sigma, corr_length=cfg.inversion.corr_length,
    )
    model = cfg.forward_model("standard")
    if model.dim != surrogates[0][1].dim:
        raise ValueError("config geometry does not match the surrogate dimension")
    cached = CachedForward(model, model.dim, model.out_dim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, surrogate in surrogates:
        _, mu, var = error_metrics(surrogate, cached, thetas)
        rows.append((name, args.dist, args.samples, mu, var))
        print(f"{name}: dist={args.dist} Q={args.samples} mean_error={mu:.6f} variance={var:.6f}")
    with open(out / "errors.csv", "w") as fh:
        fh.write("surrogate,distribution,samples,mean_error,variance\n")
        for row in rows:
            fh.write(",".join(map(str, row)) + "\n")
    if args.truncation_sweep:
        counts = sorted({int(c) for c in args.truncation_sweep.split(",")})
        with open(out / "sweep.csv", "w") as fh:
            fh.write("surrogate,retained,mean_error\n")
            for name, surrogate in surrogates:
                usable = [c for c in counts if c <= min(surrogate.poly_counts)]
                for c in usable + [min(surrogate.poly_counts)]:
                    truncated = surrogate_truncate(surrogate, c)
                    _, mu, _ = error_metrics(truncated, cached, thetas)
                    fh.write(f"{name},{c},{mu!r}\n")
        print(f"wrote truncation sweep to {out / 'sweep.csv'}")
    print(f"wrote {out / 'errors.csv'} ({cached.eval_count} forward evaluations)")
    return 0


def _deterministic_savefig(fig, path):
    import matplotlib

    matplotlib.rcParams["svg.hashsalt"] = "thermtomo"
    fig.savefig(path, format="svg", metadata={"Date": None})


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    made_any = False

    if args.geometry_config:
        cfg = load_config(args.geometry_config)
        param = cfg.geometry
        n_om = param.shape.spline_count
        if args.theta:
            with open(args.theta) as fh:
                payload = json.load(fh)
            flat = np.asarray(payload["theta"] if isinstance(payload, dict) else payload)
            theta_shape = param.split(flat).shape
        else:
            theta_shape = np.zeros(n_om)
        from thermtomo.geometry import radius

        fig, ax = plt.subplots(figsize=(5, 5))
        phi = np.linspace(0, 2 * np.pi, 720)
        r = np.asarray(radius(phi, theta_shape, param.shape))
        ax.plot(r * np.cos(phi), r * np.sin(phi), "k-", lw=1)
        for a, b in heater_segments(theta_shape, param.shape):
            seg = np.linspace(a, b, 60)
            rs = np.asarray(radius(seg, theta_shape, param.shape))
            ax.plot(rs * np.cos(seg), rs * np.sin(seg), "k-", lw=4)
        sensors = sensor_positions(theta_shape, param.shape)
        ax.plot(sensors[:, 0], sensors[:, 1], "o", mfc="white", mec="black", ms=8)
        ax.set_aspect("equal")
        ax.axis("off")
        _deterministic_savefig(fig, out / "geometry.svg")
        plt.close(fig)
        print(f"wrote {out / 'geometry.svg'}")
        made_any = True

    if args.fields:
        cfg = load_config(args.config) if args.config else None
        if cfg is None:
            raise ValueError("--fields needs --config for the pixel layout")
        layout = cfg.geometry.pixel_layout
        from matplotlib.collections import PatchCollection
        from matplotlib.patches import Wedge

        from thermtomo.geometry import _ring_edges

        fields_dir = Path(args.fields)
        for name in ("a", "b"):
            path = fields_dir / f"{name}.csv"
            vals = np.array(
                [float(line.split(",")[1]) for line in path.read_text().splitlines()[1:]]
            )
            edges = _ring_edges(layout) * cfg.geometry.shape.rho0
            patches, colors = [], []
            idx = 0
            for k, sectors in enumerate(layout):
                for m in range(sectors):
                    t0 = 360.0 * m / sectors
                    t1 = 360.0 * (m + 1) / sectors
                    patches.append(
                        Wedge((0, 0), edges[k + 1], t0, t1, width=edges[k + 1] - edges[k])
                    )
                    colors.append(vals[idx])
                    idx += 1
            fig, ax = plt.subplots(figsize=(5, 5))
            coll = PatchCollection(patches, cmap="viridis")
            coll.set_array(np.asarray(colors))
            coll.set_clim(0.1, 1.0)
            ax.add_collection(coll)
            fig.colorbar(coll, ax=ax, shrink=0.8)
            ax.set_xlim(-1.05, 1.05)
            ax.set_ylim(-1.05, 1.05)
            ax.set_aspect("equal")
            ax.axis("off")
            _deterministic_savefig(fig, out / f"field_{name}.svg")
            plt.close(fig)
            print(f"wrote {out / f'field_{name}.svg'}")
        c_path = fields_dir / "c.csv"
        vals = np.array([float(line.split(",")[1]) for line in c_path.read_text().splitlines()[1:]])
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.bar(np.arange(len(vals)), vals, color="steelblue")
        ax.set_xlabel("gap")
        ax.set_ylabel("conductance")
        _deterministic_savefig(fig, out / "field_c.svg")
        plt.close(fig)
        print(f"wrote {out / 'field_c.svg'}")
        made_any = True

    if args.convergence:
        lines = Path(args.convergence).read_text().splitlines()
        rows = [line.split(",") for line in lines[1:] if line.strip()]
        if not rows:
            raise ValueError(f"convergence file {args.convergence} has no data rows")
        by_name: dict[str, list] = {}
        for name, retained, mu in rows:
            by_name.setdefault(name, []).append((int(retained), float(mu)))
        fig, ax = plt.subplots(figsize=(5, 4))
        for name, pts in sorted(by_name.items()):
            pts.sort()
            ax.loglog([p[0] for p in pts], [p[1] for p in pts], "o-", label=name)
        ax.set_xlabel("retained polynomials")
        ax.set_ylabel("mean error")
        ax.legend(fontsize=8)
        _deterministic_savefig(fig, out / "convergence.svg")
        plt.close(fig)
        print(f"wrote {out / 'convergence.svg'}")
        made_any = True

    if not made_any:
        raise ValueError("nothing to plot: pass --geometry-config, --fields, or --convergence")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="thermtomo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-config", help="write a preset config file")
    p.add_argument("--preset", default="table1-n104", choices=sorted(PRESETS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_config)

    p = sub.add_parser("build-surrogate", help="offline phase: build a polynomial surrogate")
    p.add_argument("--config", required=True, help="config path or preset name")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--grouping", default=None,
                   help="common | per-component | per-group=heater-pairs | per-group=@file")
    p.add_argument("--cap", type=int, default=None, help="max univariate degree")
    p.add_argument("--total-order", type=int, default=None,
                   help="bypass adaptivity with a total order index set")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_surrogate)

    p = sub.add_parser("simulate", help="generate measurement data for a target")
    p.add_argument("--config", required=True)
    p.add_argument("--target", required=True,
                   help="preset name or @file.json with a parameter vector")
    p.add_argument("--fidelity", default="fine", choices=("standard", "fine"))
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output prefix for _clean/_noisy CSVs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("invert", help="online phase: least squares reconstruction")
    p.add_argument("--config", required=True)
    p.add_argument("--surrogate", required=True)
    p.add_argument("--data", required=True, help="measurement CSV")
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("validate", help="surrogate accuracy against the training solver")
    p.add_argument("--config", required=True)
    p.add_argument("--surrogate", action="append", required=True)
    p.add_argument("--dist", default="lognormal", choices=("uniform", "lognormal"))
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--truncation-sweep", default=None,
                   help="comma-separated retained polynomial counts")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plot", help="render geometry, field, and convergence figures")
    p.add_argument("--geometry-config", default=None)
    p.add_argument("--theta", default=None, help="parameter vector JSON for the geometry plot")
    p.add_argument("--config", default=None, help="config for the pixel layout of --fields")
    p.add_argument("--fields", default=None, help="directory produced by invert")
    p.add_argument("--convergence", default=None, help="sweep.csv from validate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args) or 0
    except (ValueError, FileNotFoundError) as exc:
        print(f"thermtomo: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"thermtomo: runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
