#!/usr/bin/env python3
"""Build the full-scale N = 104 surrogates used by the batch-tier experiments.

Five containers are produced in the artifact directory (the same files the
batch-tier acceptance tests look for):

    n104-t2.npz                  total order 2 (5565 polynomials)
    n104-adapt.npz               adaptive, common basis, budget 5565
    n104-mcomp.npz               adaptive, per-component bases, cap 4
    n104-adapt-frozen-c.npz      adaptive, conductance block frozen
    n104-adapt-frozen-shape.npz  adaptive, shape block frozen

The first three share one node-keyed forward cache, so the marginal cost of
the adaptive builds on top of the total order build is limited to the nodes
of the extra multi-indices they explore.  Expect a few hours of wall time on
a two-core desktop; rerunning skips containers that already exist.
"""

import argparse
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from thermtomo.config import preset_config
from thermtomo.sparsegrid import (
    CachedForward,
    adaptive_spam,
    build_from_index_set,
    save_surrogate,
    total_order_set,
)

DEFAULT_ARTIFACTS = Path(__file__).resolve().parents[1] / "tests" / "_batch_artifacts"


def log(msg):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def build(which, artifacts: Path, workers: int):
    artifacts.mkdir(parents=True, exist_ok=True)
    cfg = preset_config("table1-n104")
    model = cfg.forward_model("standard")
    provenance = {
        "forward_fingerprint": model.fingerprint(),
        "geometry": asdict(cfg.geometry),
        "solver": asdict(cfg.solver),
    }
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    cache = CachedForward(model, model.dim, model.out_dim)
    try:
        if "t2" in which and not (artifacts / "n104-t2.npz").exists():
            log("building n104-t2 (total order 2, 5565 polynomials)")
            surr = build_from_index_set(
                cache, model.dim, model.out_dim, total_order_set(2, model.dim),
                pool=pool, provenance=provenance,
            )
            save_surrogate(surr, artifacts / "n104-t2.npz")
            log(f"n104-t2 done ({cache.eval_count} cumulative forward evaluations)")
        if "adapt" in which and not (artifacts / "n104-adapt.npz").exists():
            log("building n104-adapt (adaptive common basis, budget 5565)")
            surr = adaptive_spam(
                cache, model.dim, model.out_dim, budget=5565,
                pool=pool, provenance=provenance,
            )
            save_surrogate(surr, artifacts / "n104-adapt.npz")
            log(f"n104-adapt done ({surr.poly_counts[0]} polynomials, "
                f"{cache.eval_count} cumulative evaluations)")
        if "mcomp" in which and not (artifacts / "n104-mcomp.npz").exists():
            log("building n104-mcomp (per-component bases, cap 4, budget 5565)")
            surr = adaptive_spam(
                cache, model.dim, model.out_dim, budget=5565, max_degree=4,
                grouping="per-component", pool=pool, provenance=provenance,
            )
            save_surrogate(surr, artifacts / "n104-mcomp.npz")
            log(f"n104-mcomp done ({cache.eval_count} cumulative evaluations)")
        for block, name in (("c", "n104-adapt-frozen-c"), ("shape", "n104-adapt-frozen-shape")):
            if f"frozen-{block}" not in which or (artifacts / f"{name}.npz").exists():
                continue
            log(f"building {name} (adaptive, {block} block frozen)")
            frozen_cfg = replace(cfg, geometry=replace(cfg.geometry, frozen=(block,)))
            (artifacts / f"n104-frozen-{block}.json").write_text(frozen_cfg.to_json() + "\n")
            fmodel = frozen_cfg.forward_model("standard")
            fcache = CachedForward(fmodel, fmodel.dim, fmodel.out_dim)
            fprov = {
                "forward_fingerprint": fmodel.fingerprint(),
                "geometry": asdict(frozen_cfg.geometry),
                "solver": asdict(frozen_cfg.solver),
            }
            surr = adaptive_spam(
                fcache, fmodel.dim, fmodel.out_dim, budget=5565,
                pool=pool, provenance=fprov,
            )
            save_surrogate(surr, artifacts / f"{name}.npz")
            log(f"{name} done ({fcache.eval_count} evaluations)")
    finally:
        if pool is not None:
            pool.shutdown()
    log("all requested artifacts present")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--artifacts", type=Path, default=DEFAULT_ARTIFACTS)
    parser.add_argument("--workers", type=int, default=2)
    parser.add_argument(
        "--which", default="t2,adapt,mcomp,frozen-c,frozen-shape",
        help="comma-separated subset of t2,adapt,mcomp,frozen-c,frozen-shape",
    )
    args = parser.parse_args()
    build(set(args.which.split(",")), args.artifacts, args.workers)


if __name__ == "__main__":
    main()
