"""Build the bundled demo cases (demo2, demo10).

Constructs machine constants and a reduced admittance matrix, solves for the
internal equilibrium (the only genuine constraint is e'_d = (x_q - x_qp) i_q
for fourth-order machines, linear in e'_d), derives consistent terminal
phasors, and writes the case JSON.  Also prints a stability report so the
fixtures can be tuned: the linearization should have no eigenvalue with a
positive real part beyond the uniform-angle-shift zero mode.

Run from the repo root:  python tools/generate_cases.py
"""

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from pmuplace.model import (  # noqa: E402
    InputVector, dynamics_rhs, initialize_equilibrium, load_case, simulate,
)

OMEGA0 = 2.0 * np.pi * 60.0
OUT_DIR = Path(__file__).resolve().parents[1] / "src" / "pmuplace" / "cases"


def solve_equilibrium(machines, y, s_b, delta, eqp_target):
    """Internal equilibrium for chosen angles and q-axis voltages.

    e'_d of fourth-order machines satisfies a linear fixed point through the
    network; classical machines keep e'_d = 0.
    """
    g = len(machines)
    t4 = np.array([m["model_order"] == "transient4" for m in machines])
    kappa = np.array([s_b / m["S_N"] for m in machines])
    x_q = np.array([m.get("x_q", m["x_qp"]) for m in machines])
    x_qp = np.array([m["x_qp"] for m in machines])

    rot = np.exp(1j * delta)
    psi0 = eqp_target * rot
    # i_q = kappa * Re(e^{-j delta} Y (psi0 - j e'_d e^{j delta}))
    base = y @ psi0
    b = kappa * (np.conj(rot) * base).real
    coupling = kappa[:, None] * (y * rot[None, :] * np.conj(rot)[:, None]).imag

    sel = np.flatnonzero(t4)
    gain = (x_q - x_qp)[sel]
    a_mat = np.eye(sel.size) - gain[:, None] * coupling[np.ix_(sel, sel)]
    edp = np.zeros(g)
    edp[sel] = np.linalg.solve(a_mat, gain * b[sel])

    psi = (eqp_target - 1j * edp) * rot
    i_sys = y @ psi
    i_mach = kappa * i_sys
    c_dq = i_mach * np.conj(rot)
    i_q = c_dq.real
    i_d = -c_dq.imag

    x_dp = np.array([m["x_dp"] for m in machines])
    e_q = eqp_target - x_dp * i_d
    e_d = edp + x_qp * i_q
    e_t = (e_q - 1j * e_d) * rot
    return edp, e_t, i_sys


def build_case(machines, y, s_b, delta, eqp_target):
    edp, e_t, i_sys = solve_equilibrium(machines, y, s_b, delta, eqp_target)
    doc = {
        "machines": machines,
        "y_reduced": [[float(v.real), float(v.imag)] for v in y.ravel()],
        "s_b": s_b,
        "omega_0_rad_s": OMEGA0,
        "terminal": [
            [float(e.real), float(e.imag), float(i.real), float(i.imag)]
            for e, i in zip(e_t, i_sys)
        ],
    }
    return doc


def check_case(name, doc):
    case = load_case(doc)
    x0, u0 = initialize_equilibrium(case)
    res = np.max(np.abs(dynamics_rhs(case, x0, u0)))
    print(f"{name}: g={case.g} n={case.n_dynamic} equilibrium residual {res:.2e}")

    # numerical Jacobian over the dynamic coordinates
    n = case.n_dynamic
    idx = case.dynamic_indices
    jac = np.zeros((n, n))
    eps = 1e-7
    for col in range(n):
        xp = x0.copy(); xp[idx[col]] += eps
        xm = x0.copy(); xm[idx[col]] -= eps
        jac[:, col] = (dynamics_rhs(case, xp, u0)
                       - dynamics_rhs(case, xm, u0))[idx] / (2 * eps)
    eig = np.linalg.eigvals(jac)
    eig_sorted = np.sort(eig.real)[::-1]
    print(f"  max Re(eig) = {eig_sorted[0]:+.4e}, "
          f"2nd max = {eig_sorted[1]:+.4e}")

    # bounded response to a representative perturbation
    xp = x0.copy()
    xp[: case.g] += 0.05
    traj = simulate(case, xp, u0, 5.0, 1.0 / 60.0)
    drift = np.max(np.abs(traj.final - xp))
    span = np.max(np.abs(traj.states - x0), axis=0)
    print(f"  perturbed run: max deviation {span.max():.3f}, "
          f"final drift {drift:.3f}")
    return eig_sorted[1] < 1e-6


def demo2():
    machines = [
        {"index": 0, "model_order": "transient4", "H": 6.5, "K_D": 2.0,
         "T_d0p": 8.0, "T_q0p": 0.8, "x_d": 1.8, "x_q": 1.7,
         "x_dp": 0.30, "x_qp": 0.55, "S_N": 200.0},
        {"index": 1, "model_order": "classical2", "H": 3.5, "K_D": 1.5,
         "x_dp": 0.25, "x_qp": 0.25, "S_N": 100.0},
    ]
    y = np.array([
        [0.30 - 2.00j, 0.05 + 1.00j],
        [0.05 + 1.00j, 0.20 - 2.20j],
    ])
    delta = np.array([0.50, 0.28])
    eqp = np.array([1.08, 1.02])
    return build_case(machines, y, 100.0, delta, eqp)


def demo10():
    rng = np.random.default_rng(7)
    machines = []
    orders = ["transient4"] * 6 + ["classical2"] * 4
    h_vals = [4.0] * 10
    kd_vals = [2.0] * 10
    sn_vals = [100.0] * 10
    for k in range(10):
        m = {"index": k, "model_order": orders[k], "H": h_vals[k],
             "K_D": kd_vals[k], "S_N": sn_vals[k]}
        if orders[k] == "transient4":
            m.update({
                "T_d0p": float(3.0 + 0.3 * k), "T_q0p": float(0.4 + 0.08 * k),
                "x_d": float(1.6 + 0.04 * k), "x_q": float(1.5 + 0.04 * k),
                "x_dp": float(0.25 + 0.015 * k), "x_qp": float(0.45 + 0.02 * k),
            })
        else:
            xp = float(0.22 + 0.01 * k)
            m.update({"x_dp": xp, "x_qp": xp})
        machines.append(m)

    # sparse ring plus one peripheral machine: PMU coverage genuinely
    # varies with placement (the spur is weakly observable unless covered),
    # mirroring a geographically sparse interconnection at desk scale
    b_mat = np.zeros((10, 10))

    def couple(i, j, b):
        b_mat[i, j] = b_mat[j, i] = b

    # alternate fourth-order and classical machines around the ring so that
    # no arc is systematically easier to observe
    ring = [0, 6, 1, 7, 2, 8, 3, 9, 4]
    for pos, i in enumerate(ring):
        couple(i, ring[(pos + 1) % len(ring)], 0.65)
    couple(5, 8, 0.30)  # peripheral spur

    y = (0.0 + 0.0j) * np.zeros((10, 10))
    y = y + 1j * b_mat
    diag_real = np.full(10, 0.2)
    diag_imag = -(b_mat.sum(axis=1) + 2.0)
    for k in range(10):
        y[k, k] = diag_real[k] + 1j * diag_imag[k]

    delta = np.array([0.42, 0.28, 0.50, 0.22, 0.33, 0.46,
                      0.25, 0.38, 0.20, 0.30])
    eqp = np.array([1.08, 1.02, 1.10, 0.98, 1.04, 1.06,
                    1.00, 1.03, 0.97, 1.01])
    return build_case(machines, y, 100.0, delta, eqp)


def main():
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    for name, doc in (("demo2", demo2()), ("demo10", demo10())):
        ok = check_case(name, doc)
        if not ok:
            print(f"  WARNING: {name} looks unstable; tune constants")
        path = OUT_DIR / f"{name}.json"
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        print(f"  wrote {path}")


if __name__ == "__main__":
    main()
