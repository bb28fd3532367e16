#!/usr/bin/env python3
"""Regenerate the shipped example assets under configs/.

Two 2D eel bases (a long flat one and a short tall one) share a 24x10 grid,
each with a left/right mid-body muscle pair and an antagonistic caudal
group.  A 12x8 variant of the same task is emitted for the gradient audit,
which caps problem size.  Run from anywhere; paths resolve relative to the
repository root.
"""

import json
import os
import sys

import numpy as np

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, "src"))

from aquadesign.actuators import ActuatorGaussian, save_actuators  # noqa: E402
from aquadesign.grid import GridSpec, save_field  # noqa: E402

CONFIGS = os.path.join(ROOT, "configs")
BASES = os.path.join(CONFIGS, "bases")


def superellipse_density(grid, a, b, power=4):
    """Smooth plateaued blob: exp(-(x/a)^p - (y/b)^p), normalized."""
    centers = grid.cell_centers()
    x, y = centers[..., 0], centers[..., 1]
    values = np.exp(-np.abs(x / a) ** power - np.abs(y / b) ** power)
    return values / values.sum()


def eel_actuators(scale_x):
    """Muscle layout for an eel body of half-length ``scale_x``.

    The head faces +x; the mid-body pair sits just behind the center and
    the antagonistic caudal group near the tail.
    """
    mid_x = -0.12 * scale_x / 0.45
    tail_x = -0.62 * scale_x
    return [
        ActuatorGaussian(category="left_fin", mu=[mid_x, 0.05],
                         angles=[0.0], eigenvalues=[0.010, 0.002]),
        ActuatorGaussian(category="right_fin", mu=[mid_x, -0.05],
                         angles=[0.0], eigenvalues=[0.010, 0.002]),
        ActuatorGaussian(category="caudal_fin", mu=[tail_x, 0.0],
                         angles=[0.0], eigenvalues=[0.009, 0.004]),
    ]


def write_eel_bases():
    grid = GridSpec(dims=(24, 10), cell_size=0.05)
    flat = superellipse_density(grid, a=0.45, b=0.10)
    tall = superellipse_density(grid, a=0.30, b=0.16)
    save_field(os.path.join(BASES, "eel_flat.txt"), grid, flat)
    save_field(os.path.join(BASES, "eel_tall.txt"), grid, tall)
    save_actuators(os.path.join(BASES, "eel_flat_actuators.txt"),
                   eel_actuators(scale_x=0.45))
    save_actuators(os.path.join(BASES, "eel_tall_actuators.txt"),
                   eel_actuators(scale_x=0.30))


def write_gradcheck_bases():
    grid = GridSpec(dims=(12, 8), cell_size=0.05)
    a = superellipse_density(grid, a=0.22, b=0.08)
    b = superellipse_density(grid, a=0.15, b=0.12)
    save_field(os.path.join(BASES, "small_a.txt"), grid, a)
    save_field(os.path.join(BASES, "small_b.txt"), grid, b)
    acts = [
        ActuatorGaussian(category="left_fin", mu=[-0.05, 0.04],
                         angles=[0.0], eigenvalues=[0.006, 0.002]),
        ActuatorGaussian(category="right_fin", mu=[-0.05, -0.04],
                         angles=[0.0], eigenvalues=[0.006, 0.002]),
        ActuatorGaussian(category="caudal_fin", mu=[-0.14, 0.0],
                         angles=[0.0], eigenvalues=[0.005, 0.003]),
    ]
    save_actuators(os.path.join(BASES, "small_a_actuators.txt"), acts)
    acts_b = [
        ActuatorGaussian(category="left_fin", mu=[-0.03, 0.05],
                         angles=[0.0], eigenvalues=[0.005, 0.002]),
        ActuatorGaussian(category="right_fin", mu=[-0.03, -0.05],
                         angles=[0.0], eigenvalues=[0.005, 0.002]),
        ActuatorGaussian(category="caudal_fin", mu=[-0.10, 0.0],
                         angles=[0.0], eigenvalues=[0.004, 0.003]),
    ]
    save_actuators(os.path.join(BASES, "small_b_actuators.txt"), acts_b)


# Traveling-wave gait: the mid-body pair lags the caudal pair by 1.6 rad,
# which pushes the eel toward +x; amplitudes leave headroom below the
# activation clamp so the optimizer can strengthen the stroke.
OPEN_LOOP_INIT = [[0.6, 18.0, -1.6],
                  [0.6, 18.0, 1.5415926535897931],
                  [0.7, 18.0, 0.0]]

EEL2D = {
    "grid": {"dims": [24, 10], "cell_size": 0.05},
    "bases": ["bases/eel_flat.txt", "bases/eel_tall.txt"],
    "actuators": ["bases/eel_flat_actuators.txt",
                  "bases/eel_tall_actuators.txt"],
    "controller": {"type": "open_loop", "params": OPEN_LOOP_INIT},
    "sim": {"h": 0.0033, "n_steps": 150, "e0": 100000.0, "e_min": 1000.0,
            "sigma_max": 20000.0, "damping": [0.5, 0.0], "obj_stride": 10},
    "loss": {"kind": "distance"},
    "optimizer": {"iterations": 50, "mode": "simultaneous",
                  "lr_geometry": 0.01},
    "pareto": {"weights": [0.0, 0.5, 1.0]},
    "seed": 0,
    "out": "out/eel2d",
}

GRADCHECK = {
    "grid": {"dims": [12, 8], "cell_size": 0.05},
    "bases": ["bases/small_a.txt", "bases/small_b.txt"],
    "actuators": ["bases/small_a_actuators.txt",
                  "bases/small_b_actuators.txt"],
    "controller": {"type": "mlp", "period_steps": 25},
    "sim": {"h": 0.0033, "n_steps": 8, "e0": 100000.0, "e_min": 1000.0,
            "sigma_max": 20000.0, "damping": [0.5, 0.0]},
    "loss": {"kind": "weighted", "w_s": 0.7},
    "optimizer": {"iterations": 5},
    "seed": 0,
    "out": "out/gradcheck",
}


def main():
    os.makedirs(BASES, exist_ok=True)
    write_eel_bases()
    write_gradcheck_bases()
    for name, doc in (("eel2d.json", EEL2D), ("gradcheck.json", GRADCHECK)):
        with open(os.path.join(CONFIGS, name), "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    print(f"assets written under {CONFIGS}")


if __name__ == "__main__":
    main()
