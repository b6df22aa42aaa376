#!/usr/bin/env python3
"""Mean-error table for the three N = 104 surrogates (batch experiment).

For each random-parameter distribution (uniform on the hypercube, truncated
log-normal pixel fields) draws Q vectors, evaluates the standard forward
solver and each surrogate, and reports the mean Euclidean error and sample
variance.  Requires the containers produced by build_paper_surrogates.py.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from thermtomo.config import preset_config
from thermtomo.inversion import error_metrics, sample_parameters
from thermtomo.sparsegrid import CachedForward, load_surrogate

DEFAULT_ARTIFACTS = Path(__file__).resolve().parents[1] / "tests" / "_batch_artifacts"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--artifacts", type=Path, default=DEFAULT_ARTIFACTS)
    parser.add_argument("--samples", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=None)
    args = parser.parse_args()

    cfg = preset_config("table1-n104")
    surrogates = {
        "T2": load_surrogate(args.artifacts / "n104-t2.npz"),
        "adapt": load_surrogate(args.artifacts / "n104-adapt.npz"),
        "m-adapt": load_surrogate(args.artifacts / "n104-mcomp.npz"),
    }
    model = cfg.forward_model("standard")
    cached = CachedForward(model, model.dim, model.out_dim)
    rows = []
    for dist in ("uniform", "lognormal"):
        thetas = sample_parameters(cfg.geometry, dist, args.samples, seed=args.seed)
        started = time.time()
        for name, surrogate in surrogates.items():
            _, mu, var = error_metrics(surrogate, cached, thetas)
            rows.append((dist, name, mu, var))
            print(f"{dist:>10} {name:>8}: mean error {1e2 * mu:7.3f}e-2, "
                  f"variance {1e2 * var:7.3f}e-2")
        print(f"  ({time.time() - started:.0f}s, {cached.eval_count} cumulative solves)")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("distribution,surrogate,mean_error,variance\n")
            for dist, name, mu, var in rows:
                fh.write(f"{dist},{name},{mu!r},{var!r}\n")
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
