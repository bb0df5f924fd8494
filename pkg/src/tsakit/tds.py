"""Time-domain simulation: network equilibrium and transient dynamics.

Machine model is the classical second-order swing equation (constant EMF
behind transient reactance). Composite loads are a first-order induction
motor (slip dynamics, steady-state equivalent circuit) plus a constant
impedance remainder. The network is algebraic: at every integrator stage the
complex nodal equation Y(s) V = I(delta) is solved directly, with generator
internal sources folded in as Norton equivalents and motor admittances
refreshed from the current slips.

Integration is fixed-step RK4. Topology switches (fault on, fault cleared)
that fall inside a step split that step into exact sub-intervals, so the
recorded grid stays uniform while discontinuities land on stage boundaries.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np

from .grid_model import (
    CompositeLoad,
    FaultSpec,
    Network,
    build_admittance,
    validate_fault,
)

# Operating slip assigned to every motor at equilibrium. The motor's MVA scale
# is then chosen so it draws exactly its share of the bus load at this slip.
NOMINAL_SLIP = 0.02

# Guard against division by slip ~ 0 in the rotor branch.
_SLIP_EPS = 1e-9


class PowerFlowError(RuntimeError):
    """Equilibrium solve failed to converge or the network equations are singular."""


@dataclass(frozen=True)
class Scenario:
    """One fault case: where, how the load is composed, and how fast it clears.

    clearing_cycles is a float so continuation searches can probe between the
    integer grid values. motor_fraction None means "keep the shares already in
    the network file".
    """

    fault: FaultSpec | None
    motor_fraction: float | None
    clearing_cycles: float
    fault_start_s: float = 1.0
    duration_s: float = 10.0
    step_s: float = 0.01


def clearing_time_s(scenario: Scenario, nominal_hz: float) -> float:
    """Fault duration in seconds for a clearing time given in cycles."""
    if nominal_hz <= 0.0:
        raise ValueError("nominal frequency must be positive")
    return scenario.clearing_cycles / nominal_hz


@dataclass
class Trace:
    """Sampled trajectory of one simulation on the grid t = 0, step, ..., duration."""

    times: np.ndarray  # (n_steps,)
    rotor_angles: np.ndarray  # (n_steps, n_gen), rad, continuous
    bus_v_mag: np.ndarray  # (n_steps, n_bus), pu
    bus_v_ang: np.ndarray  # (n_steps, n_bus), rad, wrapped
    motor_slips: np.ndarray  # (n_steps, n_motor)
    step_s: float
    slack_bus: int
    load_buses: np.ndarray  # bus ids carrying load, for the voltage criterion
    fault_start_s: float | None
    clear_time_s: float | None  # absolute time the fault is removed
    diverged: bool = False
    diverged_step: int | None = None

    @property
    def n_steps(self) -> int:
        return self.times.shape[0]


# ---------------------------------------------------------------------------
# Induction motor equivalent circuit (machine base)
# ---------------------------------------------------------------------------


def _guard_slip(slip):
    s = np.asarray(slip, dtype=float)
    return np.where(np.abs(s) < _SLIP_EPS, np.where(s < 0.0, -_SLIP_EPS, _SLIP_EPS), s)


def motor_input_admittance(rs, xs, rr, xr, xm, slip):
    """Admittance seen from the stator terminals at a given slip."""
    s = _guard_slip(slip)
    z_rot = rr / s + 1j * np.asarray(xr, dtype=float)
    z_mag = 1j * np.asarray(xm, dtype=float)
    z_in = (np.asarray(rs, dtype=float) + 1j * np.asarray(xs, dtype=float)) + (
        z_mag * z_rot
    ) / (z_mag + z_rot)
    return 1.0 / z_in


def motor_torque(rs, xs, rr, xr, xm, slip, v_term):
    """Electrical (air-gap) torque in machine pu for terminal voltage v_term.

    Uses the Thevenin reduction across the magnetizing branch; torque equals
    air-gap power in pu at synchronous-speed base.
    """
    s = _guard_slip(slip)
    z_st = np.asarray(rs, dtype=float) + 1j * np.asarray(xs, dtype=float)
    z_mag = 1j * np.asarray(xm, dtype=float)
    v_th = np.asarray(v_term) * z_mag / (z_st + z_mag)
    z_th = z_st * z_mag / (z_st + z_mag)
    i_rot = v_th / (z_th + rr / s + 1j * np.asarray(xr, dtype=float))
    return np.abs(i_rot) ** 2 * rr / s


# ---------------------------------------------------------------------------
# Newton power flow (generic node-type formulation)
# ---------------------------------------------------------------------------

KIND_SLACK, KIND_PV, KIND_PQ = 0, 1, 2


def newton_power_flow(
    y_mat: np.ndarray,
    kinds: np.ndarray,
    p_spec: np.ndarray,
    q_spec: np.ndarray,
    vm: np.ndarray,
    va: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 50,
):
    """Full-Newton polar power flow on an arbitrary node set.

    kinds: per node, 0 slack (V, angle fixed), 1 PV (P, |V| fixed),
    2 PQ (P, Q fixed). Returns (V, mismatch_inf, iterations, converged).
    """
    kinds = np.asarray(kinds)
    vm = np.array(vm, dtype=float)
    va = np.array(va, dtype=float)
    pvpq = np.flatnonzero(kinds != KIND_SLACK)
    pq = np.flatnonzero(kinds == KIND_PQ)
    npvpq = pvpq.size
    v = vm * np.exp(1j * va)
    mismatch = np.inf
    for iteration in range(max_iter + 1):
        i_bus = y_mat @ v
        s_calc = v * np.conj(i_bus)
        f = np.concatenate(
            [s_calc.real[pvpq] - p_spec[pvpq], s_calc.imag[pq] - q_spec[pq]]
        )
        mismatch = float(np.max(np.abs(f))) if f.size else 0.0
        if mismatch < tol:
            return v, mismatch, iteration, True
        if iteration == max_iter:
            break
        v_norm = v / np.abs(v)
        ds_dva = 1j * v[:, None] * np.conj(np.diag(i_bus) - y_mat * v[None, :])
        ds_dvm = v[:, None] * np.conj(y_mat * v_norm[None, :])
        ds_dvm[np.diag_indices_from(ds_dvm)] += np.conj(i_bus) * v_norm
        jac = np.block(
            [
                [ds_dva.real[np.ix_(pvpq, pvpq)], ds_dvm.real[np.ix_(pvpq, pq)]],
                [ds_dva.imag[np.ix_(pq, pvpq)], ds_dvm.imag[np.ix_(pq, pq)]],
            ]
        )
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"singular Jacobian at iteration {iteration}") from exc
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        v = vm * np.exp(1j * va)
    return v, mismatch, max_iter, False


# ---------------------------------------------------------------------------
# Equilibrium
# ---------------------------------------------------------------------------


@dataclass
class EquilibriumState:
    """Consistent pre-fault operating point of the dynamic model.

    Machine powers and the load admittance split are re-derived from the
    solved voltages, so the dynamic equations are stationary at this point to
    rounding accuracy rather than just to power-flow tolerance.
    """

    v_bus: np.ndarray  # (n_bus,) complex terminal voltages
    gen_delta: np.ndarray  # (n_gen,) internal angles, rad
    gen_e_prime: np.ndarray  # (n_gen,) EMF magnitudes
    gen_p_mech: np.ndarray  # (n_gen,) mechanical powers at equilibrium
    motor_bus: np.ndarray  # (n_motor,) bus id per motor
    motor_slip: np.ndarray  # (n_motor,) operating slips
    motor_scale: np.ndarray  # (n_motor,) MVA scale to system base
    motor_torque0: np.ndarray  # (n_motor,) load torque at zero-speed-deviation base
    static_admittance: np.ndarray  # (n_bus,) constant load admittance
    mismatch_norm: float
    iterations: int
    motor_fraction: float | None


def _motor_loads(network: Network) -> list[CompositeLoad]:
    return [ld for ld in network.loads if ld.motor_fraction * ld.p_total > 0.0]


def solve_equilibrium(
    network: Network, tol: float = 1e-10, max_iter: int = 50
) -> EquilibriumState:
    """Solve the pre-fault equilibrium of the full differential-algebraic model.

    The network equations are augmented with one internal node per generator,
    held at its EMF magnitude behind xd_prime (PV node, P = p_mech). The
    machine at the slack bus provides the reference node and absorbs the power
    imbalance. Loads enter as PQ injections and are split into motor and
    static parts afterwards at the solved voltage.
    """
    n = network.n_bus
    gens = network.generators
    ng = len(gens)
    if ng == 0:
        raise PowerFlowError("network has no generators")
    slack = network.slack_bus
    slack_gen = next((i for i, g in enumerate(gens) if g.bus == slack), None)
    if slack_gen is None:
        raise PowerFlowError("no generator at the slack bus")

    size = n + ng
    y_aug = np.zeros((size, size), dtype=complex)
    y_aug[:n, :n] = build_admittance(network, "prefault")
    gb = np.array([g.bus for g in gens])
    y_gen = np.array([1.0 / (1j * g.xd_prime) for g in gens])
    for i, g in enumerate(gens):
        node = n + i
        y_aug[node, node] += y_gen[i]
        y_aug[g.bus, g.bus] += y_gen[i]
        y_aug[node, g.bus] -= y_gen[i]
        y_aug[g.bus, node] -= y_gen[i]

    kinds = np.full(size, KIND_PQ)
    kinds[n:] = KIND_PV
    kinds[n + slack_gen] = KIND_SLACK
    p_spec = np.zeros(size)
    q_spec = np.zeros(size)
    for ld in network.loads:
        p_spec[ld.bus] -= ld.p_total
        q_spec[ld.bus] -= ld.q_total
    for i, g in enumerate(gens):
        p_spec[n + i] = g.p_mech
    vm = np.ones(size)
    vm[n:] = [g.e_prime_mag for g in gens]
    va = np.zeros(size)

    v_aug, mismatch, iterations, converged = newton_power_flow(
        y_aug, kinds, p_spec, q_spec, vm, va, tol=tol, max_iter=max_iter
    )
    if not converged:
        raise PowerFlowError(
            f"equilibrium did not converge in {max_iter} iterations "
            f"(mismatch {mismatch:.3e})"
        )

    v_bus = v_aug[:n]
    e_int = v_aug[n:]
    i_gen = (e_int - v_bus[gb]) * y_gen
    p_mech = np.real(e_int * np.conj(i_gen))

    # Split each load at the solved voltage: the motor draws its power share at
    # the nominal slip, the remainder becomes constant admittance. Consumption
    # at v_bus then matches the specified load exactly.
    motor_bus, motor_slip, motor_scale, motor_t0 = [], [], [], []
    y_static = np.zeros(n, dtype=complex)
    for ld in network.loads:
        v_here = v_bus[ld.bus]
        v2 = abs(v_here) ** 2
        s_total = complex(ld.p_total, ld.q_total)
        s_motor = 0j
        p_motor = ld.motor_fraction * ld.p_total
        if p_motor > 0.0:
            mp = ld.motor_params
            y_machine = motor_input_admittance(
                mp.stator_r, mp.stator_x, mp.rotor_r, mp.rotor_x, mp.magnetizing_x, NOMINAL_SLIP
            )
            scale = p_motor / (v2 * y_machine.real)
            s_motor = v2 * np.conj(scale * y_machine)
            torque = motor_torque(
                mp.stator_r, mp.stator_x, mp.rotor_r, mp.rotor_x, mp.magnetizing_x,
                NOMINAL_SLIP, v_here,
            )
            motor_bus.append(ld.bus)
            motor_slip.append(NOMINAL_SLIP)
            motor_scale.append(scale)
            motor_t0.append(float(torque) / (1.0 - NOMINAL_SLIP) ** mp.load_torque_exponent)
        y_static[ld.bus] += np.conj(s_total - s_motor) / v2

    fractions = {ld.motor_fraction for ld in network.loads}
    uniform = fractions.pop() if len(fractions) == 1 else None
    return EquilibriumState(
        v_bus=v_bus,
        gen_delta=np.angle(e_int),
        gen_e_prime=np.abs(e_int),
        gen_p_mech=p_mech,
        motor_bus=np.array(motor_bus, dtype=int),
        motor_slip=np.array(motor_slip, dtype=float),
        motor_scale=np.array(motor_scale, dtype=float),
        motor_torque0=np.array(motor_t0, dtype=float),
        static_admittance=y_static,
        mismatch_norm=mismatch,
        iterations=iterations,
        motor_fraction=uniform,
    )


# ---------------------------------------------------------------------------
# Transient simulation
# ---------------------------------------------------------------------------

_PRE, _FAULT, _POST = 0, 1, 2


class _DynamicModel:
    """Precomputed arrays and per-phase admittance bases for one scenario."""

    def __init__(self, network: Network, init: EquilibriumState, fault: FaultSpec | None):
        self.n = network.n_bus
        gens = network.generators
        self.gen_bus = np.array([g.bus for g in gens])
        self.y_gen = np.array([1.0 / (1j * g.xd_prime) for g in gens])
        self.e_mag = init.gen_e_prime.copy()
        self.p_mech = init.gen_p_mech.copy()
        self.h2 = np.array([2.0 * g.inertia_h for g in gens])
        self.damping = np.array([g.damping_d for g in gens])
        self.omega_s = 2.0 * np.pi * network.nominal_hz
        self.n_gen = len(gens)

        motors = _motor_loads(network)
        if len(motors) != init.motor_bus.size or any(
            m.bus != b for m, b in zip(motors, init.motor_bus)
        ):
            raise ValueError("equilibrium state does not match the network's motor loads")
        self.motor_bus = init.motor_bus
        self.motor_scale = init.motor_scale
        self.motor_t0 = init.motor_torque0
        self.m_rs = np.array([m.motor_params.stator_r for m in motors])
        self.m_xs = np.array([m.motor_params.stator_x for m in motors])
        self.m_rr = np.array([m.motor_params.rotor_r for m in motors])
        self.m_xr = np.array([m.motor_params.rotor_x for m in motors])
        self.m_xm = np.array([m.motor_params.magnetizing_x for m in motors])
        self.m_h2 = np.array([2.0 * m.motor_params.inertia_h for m in motors])
        self.m_exp = np.array([m.motor_params.load_torque_exponent for m in motors])
        self.n_motor = len(motors)

        def base(state: str) -> np.ndarray:
            y = build_admittance(network, state, fault)
            y[np.arange(self.n), np.arange(self.n)] += init.static_admittance
            np.add.at(y, (self.gen_bus, self.gen_bus), self.y_gen)
            return y

        self.y_base = {_PRE: base("prefault")}
        if fault is not None:
            self.y_base[_FAULT] = base("faulted")
            self.y_base[_POST] = base("postfault")

    def solve_network(self, phase: int, delta: np.ndarray, slips: np.ndarray):
        """Algebraic solve for nodal voltages given machine angles and slips."""
        y = self.y_base[phase].copy()
        if self.n_motor:
            y_motor = self.motor_scale * motor_input_admittance(
                self.m_rs, self.m_xs, self.m_rr, self.m_xr, self.m_xm, slips
            )
            y[self.motor_bus, self.motor_bus] += y_motor
        e_src = self.e_mag * np.exp(1j * delta)
        inj = np.zeros(y.shape[0], dtype=complex)
        np.add.at(inj, self.gen_bus, e_src * self.y_gen)
        v = np.linalg.solve(y, inj)
        return v, e_src

    def rhs(self, phase: int, x: np.ndarray) -> np.ndarray:
        ng, nm = self.n_gen, self.n_motor
        delta = x[:ng]
        omega = x[ng : 2 * ng]
        slips = x[2 * ng :]
        v, e_src = self.solve_network(phase, delta, slips)
        i_gen = (e_src - v[self.gen_bus]) * self.y_gen
        p_elec = np.real(e_src * np.conj(i_gen))
        d_delta = self.omega_s * omega
        d_omega = (self.p_mech - p_elec - self.damping * omega) / self.h2
        if nm:
            t_elec = motor_torque(
                self.m_rs, self.m_xs, self.m_rr, self.m_xr, self.m_xm,
                slips, v[self.motor_bus],
            )
            t_load = self.motor_t0 * np.clip(1.0 - slips, 0.0, None) ** self.m_exp
            d_slip = (t_load - t_elec) / self.m_h2
            # a stalled rotor stays at standstill instead of spinning backwards
            d_slip = np.where(slips >= 1.0, np.minimum(d_slip, 0.0), d_slip)
        else:
            d_slip = np.empty(0)
        return np.concatenate([d_delta, d_omega, d_slip])


def _rk4_span(model: _DynamicModel, phase: int, h: float, x: np.ndarray) -> np.ndarray:
    k1 = model.rhs(phase, x)
    k2 = model.rhs(phase, x + 0.5 * h * k1)
    k3 = model.rhs(phase, x + 0.5 * h * k2)
    k4 = model.rhs(phase, x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def run_simulation(
    network: Network,
    init: EquilibriumState,
    fault: FaultSpec | None = None,
    clear_s: float | None = None,
    fault_start_s: float = 1.0,
    duration_s: float = 10.0,
    step_s: float = 0.01,
) -> Trace:
    """Integrate the scenario and return the sampled trace.

    With fault=None the pre-fault topology runs for the whole window, which is
    the configuration used to check that the equilibrium is stationary.
    """
    if duration_s <= 0.0 or step_s <= 0.0:
        raise ValueError("duration and step must be positive")
    if fault is not None:
        validate_fault(network, fault)
        if clear_s is None or clear_s <= 0.0:
            raise ValueError("a faulted run needs a positive clearing duration")
        if fault_start_s < 0.0 or fault_start_s >= duration_s:
            raise ValueError("fault start must lie inside the simulation window")

    model = _DynamicModel(network, init, fault)
    n_steps = int(round(duration_s / step_s)) + 1
    t_fault = None if fault is None else fault_start_s
    t_clear = None if fault is None else fault_start_s + clear_s

    def snap(t: float | None) -> float | None:
        if t is None:
            return None
        on_grid = round(t / step_s) * step_s
        return on_grid if abs(t - on_grid) < 1e-9 else t

    t_fault = snap(t_fault)
    t_clear = snap(t_clear)
    switches = [t for t in (t_fault, t_clear) if t is not None]

    def phase_at(t: float) -> int:
        if t_fault is None or t < t_fault:
            return _PRE
        if t_clear is None or t < t_clear:
            return _FAULT
        return _POST

    ng, nm, n = model.n_gen, model.n_motor, model.n
    times = np.arange(n_steps) * step_s
    rotor = np.zeros((n_steps, ng))
    v_mag = np.zeros((n_steps, n))
    v_ang = np.zeros((n_steps, n))
    slips = np.zeros((n_steps, nm))
    x = np.concatenate([init.gen_delta, np.zeros(ng), init.motor_slip])
    diverged = False
    diverged_step = None

    for k in range(n_steps):
        t_k = k * step_s
        ok = bool(np.all(np.isfinite(x)))
        v = None
        if ok:
            try:
                v, _ = model.solve_network(phase_at(t_k), x[:ng], x[2 * ng :])
                ok = bool(np.all(np.isfinite(v)))
            except np.linalg.LinAlgError:
                ok = False
        if not ok:
            if k == 0:
                raise PowerFlowError("network solve failed at t = 0; initial state inconsistent")
            rotor[k:] = rotor[k - 1]
            v_mag[k:] = v_mag[k - 1]
            v_ang[k:] = v_ang[k - 1]
            slips[k:] = slips[k - 1]
            diverged = True
            diverged_step = k
            break
        rotor[k] = x[:ng]
        v_mag[k] = np.abs(v[:n])
        v_ang[k] = np.angle(v[:n])
        slips[k] = x[2 * ng :]
        if k == n_steps - 1:
            break
        t_next = (k + 1) * step_s
        points = [t_k] + [s for s in switches if t_k < s < t_next] + [t_next]
        for a, b in zip(points[:-1], points[1:]):
            x = _rk4_span(model, phase_at(a), b - a, x)

    load_buses = np.unique([ld.bus for ld in network.loads]).astype(int)
    return Trace(
        times=times,
        rotor_angles=rotor,
        bus_v_mag=v_mag,
        bus_v_ang=v_ang,
        motor_slips=slips,
        step_s=step_s,
        slack_bus=network.slack_bus,
        load_buses=load_buses,
        fault_start_s=t_fault,
        clear_time_s=t_clear,
        diverged=diverged,
        diverged_step=diverged_step,
    )


def simulate(network: Network, scenario: Scenario, init: EquilibriumState) -> Trace:
    """Run one scenario from a matching equilibrium state."""
    net = network
    if scenario.motor_fraction is not None:
        if init.motor_fraction is None or not np.isclose(
            init.motor_fraction, scenario.motor_fraction, rtol=0.0, atol=1e-12
        ):
            raise ValueError(
                "equilibrium was solved for a different motor fraction than the scenario"
            )
        net = network.with_motor_fraction(scenario.motor_fraction)
    clear_s = None
    if scenario.fault is not None:
        clear_s = clearing_time_s(scenario, network.nominal_hz)
    return run_simulation(
        net,
        init,
        fault=scenario.fault,
        clear_s=clear_s,
        fault_start_s=scenario.fault_start_s,
        duration_s=scenario.duration_s,
        step_s=scenario.step_s,
    )


# ---------------------------------------------------------------------------
# Trace serialization
# ---------------------------------------------------------------------------

_TRACE_MAGIC = b"TSA1"
_TRACE_VERSION = 1


def save_trace(trace: Trace, path: str | Path) -> None:
    """Write the trace as little-endian float32 binary with a TSA1 header."""
    n_steps, n_gen = trace.rotor_angles.shape
    n_bus = trace.bus_v_mag.shape[1]
    n_motor = trace.motor_slips.shape[1]
    head = struct.pack(
        "<4sIIIIII",
        _TRACE_MAGIC,
        _TRACE_VERSION,
        n_steps,
        n_bus,
        n_gen,
        n_motor,
        trace.load_buses.size,
    )
    head += struct.pack(
        "<fffBiI",
        trace.step_s,
        np.nan if trace.fault_start_s is None else trace.fault_start_s,
        np.nan if trace.clear_time_s is None else trace.clear_time_s,
        int(trace.diverged),
        -1 if trace.diverged_step is None else trace.diverged_step,
        trace.slack_bus,
    )
    body = trace.load_buses.astype("<u4").tobytes()
    for arr in (trace.times, trace.rotor_angles, trace.bus_v_mag, trace.bus_v_ang, trace.motor_slips):
        body += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(head + body)


def load_trace(path: str | Path) -> Trace:
    """Read a TSA1 trace. Values come back at float32 precision."""
    raw = Path(path).read_bytes()
    if raw[:4] != _TRACE_MAGIC:
        raise ValueError(f"{path}: not a TSA1 trace file")
    (version, n_steps, n_bus, n_gen, n_motor, n_load) = struct.unpack_from("<IIIIII", raw, 4)
    if version != _TRACE_VERSION:
        raise ValueError(f"{path}: unsupported trace version {version}")
    off = 4 + 24
    step_s, fault_start, clear_time, diverged, diverged_step, slack = struct.unpack_from(
        "<fffBiI", raw, off
    )
    off += struct.calcsize("<fffBiI")
    load_buses = np.frombuffer(raw, dtype="<u4", count=n_load, offset=off).astype(int)
    off += 4 * n_load

    def take(count, shape):
        nonlocal off
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=off).astype(float)
        off += 4 * count
        return arr.reshape(shape)

    times = take(n_steps, (n_steps,))
    rotor = take(n_steps * n_gen, (n_steps, n_gen))
    v_mag = take(n_steps * n_bus, (n_steps, n_bus))
    v_ang = take(n_steps * n_bus, (n_steps, n_bus))
    slips = take(n_steps * n_motor, (n_steps, n_motor))
    return Trace(
        times=times,
        rotor_angles=rotor,
        bus_v_mag=v_mag,
        bus_v_ang=v_ang,
        motor_slips=slips,
        step_s=float(step_s),
        slack_bus=int(slack),
        load_buses=load_buses,
        fault_start_s=None if np.isnan(fault_start) else float(fault_start),
        clear_time_s=None if np.isnan(clear_time) else float(clear_time),
        diverged=bool(diverged),
        diverged_step=None if diverged_step < 0 else int(diverged_step),
    )


def trace_to_csv(trace: Trace, path: str | Path) -> None:
    """Human-readable export: one row per step, columns for every channel."""
    n_gen = trace.rotor_angles.shape[1]
    n_bus = trace.bus_v_mag.shape[1]
    n_motor = trace.motor_slips.shape[1]
    cols = (
        ["t"]
        + [f"delta_{i}" for i in range(n_gen)]
        + [f"v_mag_{i}" for i in range(n_bus)]
        + [f"v_ang_{i}" for i in range(n_bus)]
        + [f"slip_{i}" for i in range(n_motor)]
    )
    data = np.hstack(
        [
            trace.times[:, None],
            trace.rotor_angles,
            trace.bus_v_mag,
            trace.bus_v_ang,
            trace.motor_slips,
        ]
    )
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in data:
            fh.write(",".join(f"{v:.10g}" for v in row) + "\n")


def write_stream(trace: Trace, fh: IO[str]) -> None:
    """Write the monitoring stream format: t, bus magnitudes, bus angles.

    Values use full float precision so a replayed stream reproduces the
    simulated voltages bit for bit.
    """
    for k in range(trace.n_steps):
        vals = [trace.times[k], *trace.bus_v_mag[k], *trace.bus_v_ang[k]]
        fh.write(",".join(f"{v:.17g}" for v in vals) + "\n")
