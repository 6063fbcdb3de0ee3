#!/usr/bin/env python3
"""Produce the `planar3-v1` gain preset for the bundled 3-link arm.

The 7-joint preset targets a mechanism whose distal links weigh
~0.18 kg*m^2, so its reflected-inertia entries (kr) are two orders of
magnitude too heavy for this arm's wrist (diagonal inertia ~1.3e-3,
effective inertia after accounting for inertial coupling ~4.8e-4). With
a mismatched kr the task torque slams the light wrist through its target
long before the sluggish nominal state reacts, so kr must be sized per
joint near the plant's own inertia scale.

Design recipe, per joint with diagonal inertia I_d and worst-case
effective (Schur-complement) inertia I_e:

* coupling stiffness S = kr*kl*klp: sized from I_e with omega*dt <= 0.3
  at the 500 Hz loop rate (semi-implicit integration margin);
* coupling damping D = kr*kl: capped at 0.4*I_e/dt (explicit relative
  damping on the light side of the spring is unstable past ~I/dt);
* kp: static compliance (an unsensed torque delta rests at delta/kp);
* kd = 2*zeta*sqrt(kp*(I_d + kr)): when the coupling is stiff the
  nominal and plant move as one body of inertia I_d + kr, so damping is
  sized against the pair;
* filter_alpha = 0.05: ~40 ms sensed-torque smoothing without the phase
  lag that destabilizes the nominal loop at 0.01.

A compact grid around the recipe is verified on per-joint step
references; every joint must settle within 2 s with < 20 % overshoot
(the fastest worst-joint settle wins). Cross-coupling kick and
disturbance compliance are printed for information.

Run from the repository root:  python3 scripts/tune_planar_gains.py
"""

import itertools
import json
from pathlib import Path

import numpy as np

from peelbench.arm import DEFAULT_ARM, JointState, mass_matrix
from peelbench.controller import ControllerGains
from peelbench.errors import IntegrationDivergedError
from peelbench.loop import simulate_jointspace

PRESET_PATH = Path(__file__).resolve().parents[1] / "src" / "peelbench" / "presets" / "planar3-v1.json"

DT = 0.002
Q_HOME = np.array([0.6, -0.9, 0.3])
STEPS = np.array([0.25, 0.20, 0.15])
PROBE_POSES = [Q_HOME, np.array([1.2, -0.5, 0.8]), np.array([0.3, 0.5, -0.6])]


def effective_inertias() -> np.ndarray:
    """Worst-case per-joint inertia with the other joints free (Schur)."""
    rows = []
    for q in PROBE_POSES:
        M = mass_matrix(DEFAULT_ARM, q)
        row = []
        for j in range(3):
            idx = [i for i in range(3) if i != j]
            row.append(M[j, j] - M[j, idx] @ np.linalg.solve(M[np.ix_(idx, idx)], M[idx, j]))
        rows.append(row)
    return np.asarray(rows).min(axis=0)


def build(kr: np.ndarray, S: np.ndarray, D: np.ndarray, kp: np.ndarray, zeta: float,
          alpha: float, idiag: np.ndarray) -> ControllerGains:
    kd = 2.0 * zeta * np.sqrt(kp * (idiag + kr))
    return ControllerGains(
        kp=tuple(np.round(kp, 4)),
        kd=tuple(np.round(kd, 4)),
        kr=tuple(kr),
        kl=tuple(np.round(D / kr, 4)),
        klp=tuple(np.round(S / D, 4)),
        filter_alpha=alpha,
    )


def per_joint_steps(gains: ControllerGains):
    """Step each joint alone; return (settle, overshoot) per joint or None."""
    out = []
    for j in range(3):
        target = Q_HOME.copy()
        target[j] += STEPS[j]
        try:
            tr = simulate_jointspace(
                DEFAULT_ARM, gains, Q_HOME, lambda t: JointState(target, np.zeros(3)), 3.0
            )
        except IntegrationDivergedError:
            return None
        if not np.all(np.isfinite(tr.q)):
            return None
        err = np.abs(tr.q[:, j] - target[j])
        band = max(0.02 * STEPS[j], 1e-3)
        outside = err > band
        settle = float(tr.t[outside][-1] + DT) if outside.any() else 0.0
        overshoot = max(float(np.max((tr.q[:, j] - target[j]) * np.sign(STEPS[j])) / STEPS[j]), 0.0)
        out.append((settle, overshoot))
    return out


def verify(gains: ControllerGains) -> None:
    """Informational checks: simultaneous step and unsensed-load compliance."""
    target = Q_HOME + STEPS
    tr = simulate_jointspace(DEFAULT_ARM, gains, Q_HOME, lambda t: JointState(target, np.zeros(3)), 3.0)
    print(f"  simultaneous-step final error: {np.max(np.abs(tr.q[-1] - target)):.2e} rad")
    delta = np.array([0.5, 0.5, 0.1])
    tr = simulate_jointspace(
        DEFAULT_ARM, gains, Q_HOME, lambda t: JointState(Q_HOME, np.zeros(3)), 4.0,
        disturbance=lambda t: delta, disturbance_sensed=False,
    )
    offs = tr.q[-1] - Q_HOME
    print(f"  unsensed-load offset: {np.round(offs, 5)} (expect ~delta/kp = {np.round(delta/np.array(gains.kp), 5)})")


def main():
    ieff = effective_inertias()
    idiag = np.diag(mass_matrix(DEFAULT_ARM, Q_HOME))
    print(f"diagonal inertia {np.round(idiag, 5)}, effective {np.round(ieff, 5)}")

    omega = 0.3 / DT
    S_base = ieff * omega**2
    D_base = np.minimum(2.0 * np.sqrt(S_base * ieff), 0.4 * ieff / DT)

    rows = []
    for kr3, s3, kp3, zeta in itertools.product(
        (0.002, 0.005, 0.01), (10.0, 20.0), (20.0, 40.0), (1.0, 1.1)
    ):
        kr = np.array([0.3, 0.3, kr3])
        S = np.array([S_base[0], S_base[1], s3])
        D = np.array([D_base[0], D_base[1], 0.09])
        kp = np.array([150.0, 100.0, kp3])
        gains = build(kr, S, D, kp, zeta, 0.05, idiag)
        res = per_joint_steps(gains)
        tag = f"kr3={kr3} S3={s3} kp3={kp3} zeta={zeta}"
        if res is None:
            print(f"{tag} -> diverged")
            continue
        worst_settle = max(r[0] for r in res)
        worst_over = max(r[1] for r in res)
        print(f"{tag} -> worst settle={worst_settle:.3f}s worst overshoot={100*worst_over:.1f}%")
        if worst_settle < 2.0 and worst_over < 0.20:
            rows.append((worst_settle, worst_over, tag, gains))

    if not rows:
        raise SystemExit("no candidate met the settle/overshoot bar")
    best = min(rows, key=lambda r: (r[0], r[1]))
    print(f"\nselected: {best[2]} (settle={best[0]:.3f}s, overshoot={100*best[1]:.1f}%)")
    verify(best[3])
    PRESET_PATH.write_text(json.dumps(best[3].to_dict(), indent=2, sort_keys=True) + "\n")
    print(f"wrote {PRESET_PATH}")


if __name__ == "__main__":
    main()
