"""Build the bundled New England 39-bus network file.

Source data is the standard published parameter set: 34 lines, 12
transformers (modeled at unity tap), 19 loads, 10 classical machines with
transient reactances and inertias on the 100 MVA system base.

The dynamic model in this package holds each machine's EMF magnitude fixed
behind xd_prime, so the file must carry e_prime_mag values consistent with
the dispatch. This script runs a conventional power flow with the published
terminal voltage setpoints, computes E' = V + j xd' I for every machine, and
writes those magnitudes (and the solved slack dispatch) into the file. The
packaged network is therefore a self-consistent operating snapshot.

Run from the repository root:

    python scripts/make_ieee39.py [out_path]
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from tsakit.grid_model import (
    Bus,
    CompositeLoad,
    Generator,
    Line,
    MotorParams,
    Network,
    build_admittance,
    save_network,
    validate_network,
)
from tsakit.tds import KIND_PQ, KIND_PV, KIND_SLACK, newton_power_flow, solve_equilibrium

# Branch data, 1-indexed buses: (from, to, r, x, b_total). Lines first.
LINES = [
    (1, 2, 0.0035, 0.0411, 0.6987),
    (1, 39, 0.0010, 0.0250, 0.7500),
    (2, 3, 0.0013, 0.0151, 0.2572),
    (2, 25, 0.0070, 0.0086, 0.1460),
    (3, 4, 0.0013, 0.0213, 0.2214),
    (3, 18, 0.0011, 0.0133, 0.2138),
    (4, 5, 0.0008, 0.0128, 0.1342),
    (4, 14, 0.0008, 0.0129, 0.1382),
    (5, 6, 0.0002, 0.0026, 0.0434),
    (5, 8, 0.0008, 0.0112, 0.1476),
    (6, 7, 0.0006, 0.0092, 0.1130),
    (6, 11, 0.0007, 0.0082, 0.1389),
    (7, 8, 0.0004, 0.0046, 0.0780),
    (8, 9, 0.0023, 0.0363, 0.3804),
    (9, 39, 0.0010, 0.0250, 1.2000),
    (10, 11, 0.0004, 0.0043, 0.0729),
    (10, 13, 0.0004, 0.0043, 0.0729),
    (13, 14, 0.0009, 0.0101, 0.1723),
    (14, 15, 0.0018, 0.0217, 0.3660),
    (15, 16, 0.0009, 0.0094, 0.1710),
    (16, 17, 0.0007, 0.0089, 0.1342),
    (16, 19, 0.0016, 0.0195, 0.3040),
    (16, 21, 0.0008, 0.0135, 0.2548),
    (16, 24, 0.0003, 0.0059, 0.0680),
    (17, 18, 0.0007, 0.0082, 0.1319),
    (17, 27, 0.0013, 0.0173, 0.3216),
    (21, 22, 0.0008, 0.0140, 0.2565),
    (22, 23, 0.0006, 0.0096, 0.1846),
    (23, 24, 0.0022, 0.0350, 0.3610),
    (25, 26, 0.0032, 0.0323, 0.5130),
    (26, 27, 0.0014, 0.0147, 0.2396),
    (26, 28, 0.0043, 0.0474, 0.7802),
    (26, 29, 0.0057, 0.0625, 1.0290),
    (28, 29, 0.0014, 0.0151, 0.2490),
]

TRANSFORMERS = [
    (12, 11, 0.0016, 0.0435, 0.0),
    (12, 13, 0.0016, 0.0435, 0.0),
    (6, 31, 0.0, 0.0250, 0.0),
    (10, 32, 0.0, 0.0200, 0.0),
    (19, 33, 0.0007, 0.0142, 0.0),
    (20, 34, 0.0009, 0.0180, 0.0),
    (22, 35, 0.0, 0.0143, 0.0),
    (23, 36, 0.0005, 0.0272, 0.0),
    (25, 37, 0.0006, 0.0232, 0.0),
    (2, 30, 0.0, 0.0181, 0.0),
    (29, 38, 0.0008, 0.0156, 0.0),
    (19, 20, 0.0007, 0.0138, 0.0),
]

# Loads, 1-indexed bus: (P MW, Q MVAr).
LOADS = {
    3: (322.0, 2.4),
    4: (500.0, 184.0),
    7: (233.8, 84.0),
    8: (522.0, 176.0),
    12: (8.5, 88.0),
    15: (320.0, 153.0),
    16: (329.0, 32.3),
    18: (158.0, 30.0),
    20: (680.0, 103.0),
    21: (274.0, 115.0),
    23: (247.5, 84.6),
    24: (308.6, -92.2),
    25: (224.0, 47.2),
    26: (139.0, 17.0),
    27: (281.0, 75.5),
    28: (206.0, 27.6),
    29: (283.5, 26.9),
    31: (9.2, 4.6),
    39: (1104.0, 250.0),
}

# Machines, 1-indexed bus: (P MW, terminal |V| setpoint, H s on 100 MVA,
# xd_prime pu). Bus 31 is the slack; its P is solved.
MACHINES = {
    30: (250.0, 1.0499, 42.0, 0.0310),
    31: (0.0, 0.9820, 30.3, 0.0697),
    32: (650.0, 0.9841, 35.8, 0.0531),
    33: (632.0, 0.9972, 28.6, 0.0436),
    34: (508.0, 1.0123, 26.0, 0.1320),
    35: (650.0, 1.0494, 34.8, 0.0500),
    36: (560.0, 1.0636, 26.4, 0.0490),
    37: (540.0, 1.0275, 24.3, 0.0570),
    38: (830.0, 1.0265, 34.5, 0.0570),
    39: (1000.0, 1.0300, 500.0, 0.0060),
}

SLACK_BUS = 31
BASE_MVA = 100.0
NOMINAL_HZ = 60.0
GEN_DAMPING = 2.0

# One motor parameter set for every composite load (machine base). Deep-bar
# cage values typical for aggregated industrial load, torque ~ speed squared.
MOTOR = MotorParams(
    stator_r=0.02,
    stator_x=0.10,
    rotor_r=0.02,
    rotor_x=0.12,
    magnetizing_x=3.0,
    inertia_h=0.6,
    load_torque_exponent=2.0,
)
DEFAULT_MOTOR_FRACTION = 0.6


def terminal_power_flow():
    """Conventional power flow: PV at machine terminals, loads as PQ."""
    n = 39
    y = np.zeros((n, n), dtype=complex)
    for f, t, r, x, b in LINES + TRANSFORMERS:
        f -= 1
        t -= 1
        ys = 1.0 / complex(r, x)
        y[f, f] += ys + 1j * b / 2.0
        y[t, t] += ys + 1j * b / 2.0
        y[f, t] -= ys
        y[t, f] -= ys
    kinds = np.full(n, KIND_PQ)
    p_spec = np.zeros(n)
    q_spec = np.zeros(n)
    vm = np.ones(n)
    va = np.zeros(n)
    for bus, (p, q) in LOADS.items():
        p_spec[bus - 1] -= p / BASE_MVA
        q_spec[bus - 1] -= q / BASE_MVA
    for bus, (p, vset, _, _) in MACHINES.items():
        i = bus - 1
        kinds[i] = KIND_SLACK if bus == SLACK_BUS else KIND_PV
        p_spec[i] += p / BASE_MVA
        vm[i] = vset
    v, mismatch, iters, ok = newton_power_flow(y, kinds, p_spec, q_spec, vm, va, tol=1e-12)
    if not ok:
        raise SystemExit(f"terminal power flow did not converge (mismatch {mismatch:.3e})")
    print(f"terminal power flow: {iters} iterations, mismatch {mismatch:.3e}")
    print(f"voltage range: {np.abs(v).min():.4f} .. {np.abs(v).max():.4f} pu")
    return y, v


def main(out_path: str) -> None:
    y, v = terminal_power_flow()
    # Internal EMFs from the solved terminal state: E' = V + j xd' I_gen.
    injections = v * np.conj(y @ v)
    e_prime = {}
    p_gen = {}
    for bus, (p, _, _, xdp) in MACHINES.items():
        i = bus - 1
        s_load = complex(*LOADS.get(bus, (0.0, 0.0))) / BASE_MVA
        s_gen = injections[i] + s_load
        i_gen = np.conj(s_gen / v[i])
        e = v[i] + 1j * xdp * i_gen
        e_prime[bus] = abs(e)
        p_gen[bus] = s_gen.real
        print(f"bus {bus}: Pg {s_gen.real:7.4f} pu  |E'| {abs(e):.6f}  angle {np.degrees(np.angle(e)):7.3f} deg")

    buses = tuple(
        Bus(id=i, base_kv=345.0, bus_kind="slack" if i == SLACK_BUS - 1 else "pq")
        for i in range(39)
    )
    lines = tuple(
        Line(f - 1, t - 1, complex(r, x), b, has_transformer=False)
        for f, t, r, x, b in LINES
    ) + tuple(
        Line(f - 1, t - 1, complex(r, x), b, has_transformer=True)
        for f, t, r, x, b in TRANSFORMERS
    )
    gens = tuple(
        Generator(
            bus=bus - 1,
            inertia_h=MACHINES[bus][2],
            damping_d=GEN_DAMPING,
            xd_prime=MACHINES[bus][3],
            p_mech=p_gen[bus],
            e_prime_mag=e_prime[bus],
        )
        for bus in sorted(MACHINES)
    )
    loads = tuple(
        CompositeLoad(
            bus=bus - 1,
            p_total=p / BASE_MVA,
            q_total=q / BASE_MVA,
            motor_fraction=DEFAULT_MOTOR_FRACTION,
            motor_params=MOTOR,
        )
        for bus, (p, q) in sorted(LOADS.items())
    )
    network = Network(
        buses=buses,
        lines=lines,
        generators=gens,
        loads=loads,
        base_mva=BASE_MVA,
        nominal_hz=NOMINAL_HZ,
    )
    validate_network(network)

    # Cross-check: the packaged file must give a converged dynamic equilibrium
    # whose terminal voltages agree with the conventional solution above.
    eq = solve_equilibrium(network)
    # The two solutions use different angle references (slack terminal vs
    # slack machine internal node); align frames before comparing.
    shift = np.angle(v[SLACK_BUS - 1]) - np.angle(eq.v_bus[SLACK_BUS - 1])
    dv = np.max(np.abs(eq.v_bus * np.exp(1j * shift) - v))
    print(f"dynamic equilibrium: {eq.iterations} iterations, mismatch {eq.mismatch_norm:.3e}")
    print(f"terminal voltage agreement: {dv:.3e} pu")
    if dv > 1e-6:
        raise SystemExit("equilibrium voltages disagree with the terminal power flow")

    save_network(network, out_path)
    print(f"wrote {out_path}")


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else str(
        Path(__file__).resolve().parent.parent / "src" / "tsakit" / "data" / "ieee39.net"
    )
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    main(out)
