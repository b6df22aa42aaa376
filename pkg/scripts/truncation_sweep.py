#!/usr/bin/env python3
"""Mean error as a function of the retained polynomial count (batch experiment).

For each of the three N = 104 surrogates, keeps the n polynomials with the
largest coefficient norms and recomputes the mean error over a fixed
log-normal sample (the convergence-curve experiment).  Writes a sweep CSV
consumable by ``thermtomo plot --convergence``.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from thermtomo.config import preset_config
from thermtomo.inversion import error_metrics, sample_parameters
from thermtomo.sparsegrid import CachedForward, load_surrogate, surrogate_truncate

DEFAULT_ARTIFACTS = Path(__file__).resolve().parents[1] / "tests" / "_batch_artifacts"
DEFAULT_COUNTS = "50,100,200,500,1000,2000,3500,5565"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--artifacts", type=Path, default=DEFAULT_ARTIFACTS)
    parser.add_argument("--samples", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--counts", default=DEFAULT_COUNTS)
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
    thetas = sample_parameters(cfg.geometry, "lognormal", args.samples, seed=args.seed)
    counts = sorted({int(c) for c in args.counts.split(",")})
    out = args.out or (args.artifacts / "truncation-sweep.csv")
    with open(out, "w") as fh:
        fh.write("surrogate,retained,mean_error\n")
        for name, surrogate in surrogates.items():
            top = min(surrogate.poly_counts)
            for count in [c for c in counts if c <= top] + [top]:
                _, mu, _ = error_metrics(surrogate_truncate(surrogate, count), cached, thetas)
                fh.write(f"{name},{count},{mu!r}\n")
                print(f"{name:>8} retained {count:>6}: mean error {mu:.5f}")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
