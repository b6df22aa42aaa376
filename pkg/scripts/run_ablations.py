#!/usr/bin/env python3
"""Ablation study: what ignoring the contact conductance or the body shape
does to the reconstructions (batch experiment).

Simulates fine-solver data for the two-valued-conductance target and for the
perturbed-boundary target, then inverts each with the full surrogate and with
the matching frozen-block surrogate, comparing pixel-space errors of the
conductivity and capacity.  Requires the containers from
build_paper_surrogates.py.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from thermtomo.config import preset_config
from thermtomo.inversion import add_noise, build_regularizer, reconstruct_fields, solve_lsq
from thermtomo.presets import resolve_target, simulate_target
from thermtomo.sparsegrid import load_surrogate

DEFAULT_ARTIFACTS = Path(__file__).resolve().parents[1] / "tests" / "_batch_artifacts"


def pixel_errors(theta, param, target_a, target_b):
    fields = reconstruct_fields(theta, param)
    return (
        float(np.linalg.norm(fields.a_pixels - target_a)),
        float(np.linalg.norm(fields.b_pixels - target_b)),
    )


def run_case(label, target_name, frozen_block, artifacts, cfg, seed):
    param = cfg.geometry
    full = load_surrogate(artifacts / "n104-adapt.npz")
    ablated = load_surrogate(artifacts / f"n104-adapt-frozen-{frozen_block}.npz")
    data_file = artifacts / f"{label}-data.npy"
    if data_file.exists():
        noisy = np.load(data_file)
    else:
        target = resolve_target(target_name, cfg)
        noisy = add_noise(
            simulate_target(target, cfg, "fine"), seed=seed,
            rel_std=cfg.inversion.noise_rel_std,
        )
        np.save(data_file, noisy)
    target_ab = np.full(param.pixel_count, 0.55)

    reg_full = build_regularizer(param, delta=cfg.inversion.delta)
    res_full = solve_lsq(full, noisy, reg_full)
    frozen_param = replace(param, frozen=(frozen_block,))
    reg_abl = build_regularizer(frozen_param, delta=cfg.inversion.delta)
    res_abl = solve_lsq(ablated, noisy, reg_abl)

    ea_f, eb_f = pixel_errors(res_full.theta, param, target_ab, target_ab)
    ea_a, eb_a = pixel_errors(res_abl.theta, frozen_param, target_ab, target_ab)
    print(f"{label}: target {target_name}, ablation freezes {frozen_block!r}")
    print(f"  full model : a error {ea_f:.4f}, b error {eb_f:.4f} "
          f"({res_full.iterations} iterations)")
    print(f"  ablation   : a error {ea_a:.4f}, b error {eb_a:.4f} "
          f"({res_abl.iterations} iterations)")
    print(f"  full model better on a: {ea_f < ea_a}, on b: {eb_f < eb_a}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--artifacts", type=Path, default=DEFAULT_ARTIFACTS)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()
    cfg = preset_config("table1-n104")
    run_case("fig2", "fig2-contact", "c", args.artifacts, cfg, args.seed)
    run_case("fig4", "fig4-boundary", "shape", args.artifacts, cfg, args.seed + 1)


if __name__ == "__main__":
    main()
