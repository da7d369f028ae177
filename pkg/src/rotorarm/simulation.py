"""Closed-loop flight simulation for rotating-arm multirotors.

The loop per control tick: sweep trajectory -> pose PID -> wrench demand ->
allocator (Newton-KKT or pseudoinverse) -> actuator models (delayed,
rate-limited arm servos; clamped throttles) -> rigid-body integration.
Everything is deterministic unless wrench noise is explicitly enabled,
so repeated runs produce bit-identical logs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats as scipy_stats

from .allocation import (
    AllocatorInput,
    AllocatorSolution,
    AllocatorState,
    DroneModel,
    PenaltyWeights,
    SolverError,
    _thrust_dirs,
    pinv_allocate,
    sqp_allocate,
    wrap_angle,
)
from .spatial import Quaternion, integrate_orientation, orientation_error

TWO_PI = 2.0 * math.pi

SERVO_RATE_LIMIT = 2.4 * TWO_PI  # rad/s, arm servo slew bound
SERVO_DELAY = 0.036  # s, command-to-motion latency

_GRAVITY_DIR = np.array([0.0, 0.0, -1.0])
_AXIS_VECTORS = {
    "roll": np.array([1.0, 0.0, 0.0]),
    "pitch": np.array([0.0, 1.0, 0.0]),
    "yaw": np.array([0.0, 0.0, 1.0]),
    "x": np.array([1.0, 0.0, 0.0]),
    "y": np.array([0.0, 1.0, 0.0]),
    "z": np.array([0.0, 0.0, 1.0]),
}
_ORIENTATION_AXES = ("yaw", "pitch", "roll")
_POSITION_AXES = ("x", "y", "z")


# ---------------------------------------------------------------------------
# actuators


@dataclass(frozen=True)
class ServoState:
    """Arm servo with FIFO command latency and a slew-rate bound."""

    angle: float = 0.0
    pending: tuple = ()
    rate_limit: float = SERVO_RATE_LIMIT
    delay: float = SERVO_DELAY


def servo_update(state: ServoState, setpoint: float, dt: float) -> ServoState:
    """Advance the servo one tick toward the delayed setpoint, never overshooting."""
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    n_delay = int(round(state.delay / dt))
    pending = state.pending + (float(setpoint),)
    if len(pending) > n_delay:
        # commands issued n_delay ticks ago become visible now
        target = pending[len(pending) - n_delay - 1]
        pending = pending[len(pending) - n_delay:] if n_delay else ()
    else:
        target = state.angle
    max_step = state.rate_limit * dt
    step = min(max(target - state.angle, -max_step), max_step)
    return replace(state, angle=state.angle + step, pending=pending)


# ---------------------------------------------------------------------------
# rigid body


@dataclass
class RigidBodyState:
    position: np.ndarray
    velocity: np.ndarray
    orientation: Quaternion
    angular_velocity: np.ndarray  # body frame

    @classmethod
    def at_rest(cls) -> "RigidBodyState":
        return cls(np.zeros(3), np.zeros(3), Quaternion.identity(), np.zeros(3))


def rigid_body_step(
    state: RigidBodyState, forces: np.ndarray, torques: np.ndarray, model: DroneModel, dt: float
) -> RigidBodyState:
    """Semi-implicit Euler step under per-arm body-frame forces and torques.

    Velocity and angular rate update first, then position and attitude use
    the updated rates. Gyroscopic coupling w x Iw is included; the attitude
    quaternion is renormalized by construction every step.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    body_force = np.asarray(forces, dtype=float).reshape(-1, 3).sum(axis=0)
    body_torque = np.asarray(torques, dtype=float).reshape(-1, 3).sum(axis=0)

    world_force = state.orientation.rotate(body_force) + model.mass * model.gravity * _GRAVITY_DIR
    velocity = state.velocity + (world_force / model.mass) * dt
    position = state.position + velocity * dt

    momentum = model.inertia @ state.angular_velocity
    torque_net = body_torque - np.cross(state.angular_velocity, momentum)
    angular_velocity = state.angular_velocity + np.linalg.solve(model.inertia, torque_net) * dt
    orientation = integrate_orientation(state.orientation, angular_velocity, dt)
    return RigidBodyState(position, velocity, orientation, angular_velocity)


# ---------------------------------------------------------------------------
# pose controller


@dataclass
class PidGains:
    kp_pos: float = 40.0
    ki_pos: float = 6.0
    kd_pos: float = 16.0
    i_max_pos: float = 8.0  # N, integrator clamp in output units
    kp_ori: float = 1.6
    ki_ori: float = 0.4
    kd_ori: float = 0.28
    i_max_ori: float = 0.8  # Nm
    proportional_on_measurement: bool = False


class PidController:
    """Pose PID producing a world-frame wrench demand with weight feedforward.

    Derivative terms act on measured rates. With proportional_on_measurement
    the proportional term is accumulated from measured motion instead of the
    error, which removes setpoint kick on steps (best for regulation, not for
    tracking moving setpoints).
    """

    def __init__(self, gains: PidGains, mass: float, gravity: float):
        self.gains = gains
        self.mass = float(mass)
        self.gravity = float(gravity)
        self.reset()

    def reset(self) -> None:
        self._i_pos = np.zeros(3)
        self._i_ori = np.zeros(3)
        self._pom_pos = np.zeros(3)
        self._pom_ori = np.zeros(3)

    def update(self, pos_error, ori_error, velocity, angular_velocity, accel_ff, dt: float):
        """World-frame (force, torque) demand for one control tick.

        pos_error/ori_error are setpoint-minus-state in the world frame
        (ori_error as an axis*angle vector); velocity/angular_velocity are
        measured world-frame rates; accel_ff is a feedforward acceleration.
        """
        if dt <= 0.0:
            raise ValueError(f"dt must be positive, got {dt}")
        g = self.gains
        pos_error = np.asarray(pos_error, dtype=float)
        ori_error = np.asarray(ori_error, dtype=float)
        velocity = np.asarray(velocity, dtype=float)
        angular_velocity = np.asarray(angular_velocity, dtype=float)
        accel_ff = np.asarray(accel_ff, dtype=float)

        self._i_pos = np.clip(self._i_pos + g.ki_pos * pos_error * dt, -g.i_max_pos, g.i_max_pos)
        self._i_ori = np.clip(self._i_ori + g.ki_ori * ori_error * dt, -g.i_max_ori, g.i_max_ori)

        if g.proportional_on_measurement:
            self._pom_pos -= g.kp_pos * velocity * dt
            self._pom_ori -= g.kp_ori * angular_velocity * dt
            p_pos, p_ori = self._pom_pos, self._pom_ori
        else:
            p_pos, p_ori = g.kp_pos * pos_error, g.kp_ori * ori_error

        weight_ff = self.mass * self.gravity * np.array([0.0, 0.0, 1.0])
        force = p_pos + self._i_pos - g.kd_pos * velocity + self.mass * accel_ff + weight_ff
        torque = p_ori + self._i_ori - g.kd_ori * angular_velocity
        return force, torque


# ---------------------------------------------------------------------------
# sweep trajectories


@dataclass
class PoseSetpoint:
    position: np.ndarray
    orientation: Quaternion
    accel: np.ndarray  # feedforward linear acceleration, world frame


@dataclass
class SweepSpec:
    """Stepwise sweep through single-axis pose offsets, or a continuous roll.

    Orientation/position sweeps run +A then -A on each axis in turn, always
    returning to the origin pose in between: 4 * len(axes) trapezoidal steps
    of step_duration seconds each. kind "continuous_roll" spins about body x
    at a constant rate instead, and "hover" holds the origin.
    """

    kind: str  # "orientation" | "position" | "continuous_roll" | "hover"
    amplitude: float = math.pi
    step_duration: float = 6.0
    accel_fraction: float = 1.0 / 3.0  # lead-in/lead-out share of each step
    axes: tuple = _ORIENTATION_AXES
    start_delay: float = 2.0
    revolutions: float = 10.0
    seconds_per_rev: float = 8.0

    def __post_init__(self):
        if self.kind not in ("orientation", "position", "continuous_roll", "hover"):
            raise ValueError(f"unknown sweep kind {self.kind!r}")
        valid = _ORIENTATION_AXES if self.kind == "orientation" else _POSITION_AXES
        if self.kind in ("orientation", "position"):
            for label in self.axes:
                if label not in valid:
                    raise ValueError(f"unknown axis label {label!r} for a {self.kind} sweep")
        if self.step_duration <= 0.0 or not (0.0 < self.accel_fraction < 0.5):
            raise ValueError("step_duration must be positive and accel_fraction in (0, 0.5)")

    @property
    def duration(self) -> float:
        if self.kind == "continuous_roll":
            return self.start_delay + self.revolutions * self.seconds_per_rev
        if self.kind == "hover":
            return self.start_delay
        return self.start_delay + 4 * len(self.axes) * self.step_duration

    def step_targets(self) -> list[tuple[str, float]]:
        """Per-step (axis, target value); each step starts from the previous target."""
        out: list[tuple[str, float]] = []
        for sign in (1.0, -1.0):
            for label in self.axes:
                out.append((label, sign * self.amplitude))
                out.append((label, 0.0))
        return out


def orientation_sweep(amplitude: float = math.pi, **kwargs) -> SweepSpec:
    return SweepSpec("orientation", amplitude=amplitude, axes=kwargs.pop("axes", _ORIENTATION_AXES), **kwargs)


def position_sweep(amplitude: float = 0.5, **kwargs) -> SweepSpec:
    return SweepSpec("position", amplitude=amplitude, axes=kwargs.pop("axes", _POSITION_AXES), **kwargs)


def continuous_roll(revolutions: float = 10.0, seconds_per_rev: float = 8.0, **kwargs) -> SweepSpec:
    # rolling starts at t=0 so the unwrapped angle is t / seconds_per_rev turns
    kwargs.setdefault("start_delay", 0.0)
    return SweepSpec("continuous_roll", revolutions=revolutions, seconds_per_rev=seconds_per_rev, **kwargs)


def trapezoid_profile(t: float, distance: float, duration: float, accel_fraction: float):
    """Scalar trapezoidal motion: returns (value, rate, accel) at time t.

    Acceleration and deceleration phases each take accel_fraction of the
    duration; the profile is symmetric, so half the distance is covered at
    half the duration.
    """
    sign = 1.0 if distance >= 0.0 else -1.0
    d = abs(distance)
    if d < 1e-15:
        return 0.0, 0.0, 0.0
    t_acc = accel_fraction * duration
    v_max = d / (duration - t_acc)
    a_max = v_max / t_acc
    if t <= 0.0:
        return 0.0, 0.0, 0.0
    if t < t_acc:
        return sign * 0.5 * a_max * t * t, sign * a_max * t, sign * a_max
    if t < duration - t_acc:
        return sign * (0.5 * v_max * t_acc + v_max * (t - t_acc)), sign * v_max, 0.0
    if t < duration:
        remain = duration - t
        return sign * (d - 0.5 * a_max * remain * remain), sign * a_max * remain, -sign * a_max
    return sign * d, 0.0, 0.0


def continuous_roll_angle(t: float, spec: SweepSpec) -> float:
    """Unwrapped roll angle of a continuous-roll sweep at time t."""
    if spec.kind != "continuous_roll":
        raise ValueError("continuous_roll_angle needs a continuous_roll sweep")
    tau = min(max(t - spec.start_delay, 0.0), spec.revolutions * spec.seconds_per_rev)
    return TWO_PI * tau / spec.seconds_per_rev


def sweep_setpoint(t: float, spec: SweepSpec) -> PoseSetpoint:
    """Pose setpoint of the sweep at time t (origin before start and after the end)."""
    origin = PoseSetpoint(np.zeros(3), Quaternion.identity(), np.zeros(3))
    if spec.kind == "hover" or t < spec.start_delay:
        return origin
    if spec.kind == "continuous_roll":
        angle = continuous_roll_angle(t, spec)
        return PoseSetpoint(np.zeros(3), Quaternion.from_axis_angle(_AXIS_VECTORS["roll"], angle), np.zeros(3))

    tau = t - spec.start_delay
    targets = spec.step_targets()
    step = int(tau // spec.step_duration)
    if step >= len(targets):
        return origin
    label, target = targets[step]
    start = targets[step - 1][1] if step > 0 else 0.0
    value, _, accel = trapezoid_profile(
        tau - step * spec.step_duration, target - start, spec.step_duration, spec.accel_fraction
    )
    value += start
    axis = _AXIS_VECTORS[label]
    if spec.kind == "position":
        return PoseSetpoint(value * axis, Quaternion.identity(), accel * axis)
    if abs(value) < 1e-15:
        return origin
    return PoseSetpoint(np.zeros(3), Quaternion.from_axis_angle(axis, value), np.zeros(3))


# ---------------------------------------------------------------------------
# flight scenario and loop


@dataclass
class Scenario:
    model: DroneModel
    sweep: SweepSpec
    allocator: str = "sqp"  # "sqp" | "pinv"
    gains: PidGains = field(default_factory=PidGains)
    weights: PenaltyWeights = field(default_factory=PenaltyWeights)
    duration: float | None = None  # defaults to sweep duration plus a 2 s tail
    tol_objective: float = 1e-4
    tol_constraint: float = 1e-5
    max_iterations: int = 30
    throttle_step_limit: float = 0.1
    angle_step_limit: float = 0.2
    servo_rate_limit: float = SERVO_RATE_LIMIT
    servo_delay: float = SERVO_DELAY
    motor_lag: float = 0.0  # s, first-order throttle lag; 0 = instant
    noise_std: float = 0.0  # N / Nm, optional body-wrench disturbance
    seed: int = 0

    def __post_init__(self):
        if self.allocator not in ("sqp", "pinv"):
            raise ValueError(f"unknown allocator {self.allocator!r}, expected 'sqp' or 'pinv'")
        if self.duration is None:
            self.duration = self.sweep.duration + 2.0


@dataclass
class FlightLog:
    """Time-sampled closed-loop record; every field is a numpy array over ticks."""

    t: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    orientation: np.ndarray  # (n, 4) quaternion components, scalar first
    angular_velocity: np.ndarray
    sp_position: np.ndarray
    sp_orientation: np.ndarray
    throttle_cmd: np.ndarray  # (n, n_arms)
    angle_cmd: np.ndarray
    throttle_act: np.ndarray
    angle_act: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    converged: np.ndarray
    pos_error: np.ndarray
    ori_error: np.ndarray
    dt: float
    allocator: str

    @property
    def n_arms(self) -> int:
        return self.throttle_cmd.shape[1]

    def table(self) -> tuple[list[str], np.ndarray]:
        """Column names and a dense (ticks, columns) float matrix of the log."""
        n_arms = self.n_arms
        header = ["t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz",
                  "wx", "wy", "wz", "sp_px", "sp_py", "sp_pz",
                  "sp_qw", "sp_qx", "sp_qy", "sp_qz"]
        for prefix in ("u_cmd", "a_cmd", "u_act", "a_act"):
            header.extend(f"{prefix}_{i}" for i in range(n_arms))
        header.extend(["iterations", "residual", "converged", "pos_error", "ori_error"])
        rows = np.column_stack([
            self.t, self.position, self.velocity, self.orientation, self.angular_velocity,
            self.sp_position, self.sp_orientation,
            self.throttle_cmd, self.angle_cmd, self.throttle_act, self.angle_act,
            self.iterations.astype(float), self.residual, self.converged.astype(float),
            self.pos_error, self.ori_error,
        ])
        return header, rows

    def write_csv(self, path) -> None:
        header, rows = self.table()
        with open(path, "w", newline="") as handle:
            handle.write(",".join(header) + "\n")
            for row in rows:
                handle.write(",".join(f"{x:.17g}" for x in row) + "\n")


def read_flight_csv(path, dt: float | None = None, allocator: str = "") -> FlightLog:
    """Re-ingest a flight log written by FlightLog.write_csv."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        rows = np.array([[float(x) for x in row] for row in reader])
    col = {name: i for i, name in enumerate(header)}
    n_arms = sum(1 for name in header if name.startswith("u_cmd_"))

    def block(prefix, width):
        return rows[:, [col[f"{prefix}{i}" if width > 1 else prefix] for i in range(width)]]

    def named(*names):
        return rows[:, [col[n] for n in names]]

    t = rows[:, col["t"]]
    inferred_dt = dt if dt is not None else (float(t[1] - t[0]) if len(t) > 1 else 0.0)
    return FlightLog(
        t=t,
        position=named("px", "py", "pz"),
        velocity=named("vx", "vy", "vz"),
        orientation=named("qw", "qx", "qy", "qz"),
        angular_velocity=named("wx", "wy", "wz"),
        sp_position=named("sp_px", "sp_py", "sp_pz"),
        sp_orientation=named("sp_qw", "sp_qx", "sp_qy", "sp_qz"),
        throttle_cmd=block("u_cmd_", n_arms),
        angle_cmd=block("a_cmd_", n_arms),
        throttle_act=block("u_act_", n_arms),
        angle_act=block("a_act_", n_arms),
        iterations=rows[:, col["iterations"]],
        residual=rows[:, col["residual"]],
        converged=rows[:, col["converged"]] > 0.5,
        pos_error=rows[:, col["pos_error"]],
        ori_error=rows[:, col["ori_error"]],
        dt=inferred_dt,
        allocator=allocator,
    )


def _mirror_pays_off(arm, sol, inp, model, weights, scenario) -> bool:
    """Whether one arm restarted on its mirrored branch solves clearly cheaper.

    A thrust of u at angle a equals a thrust of -u half a turn away, so a
    negatively pinned arm always has a feasible twin configuration. The twin
    is adopted only when it converges to a solidly lower objective AND puts
    real positive throttle on the flipped arm. Without the second condition a
    lower objective may just mean the trial solve hopped to a cheaper load
    split among the other arms, a gain that swinging this arm cannot capture,
    and chasing it causes endless swings.
    """
    mirrored = AllocatorState(
        sol.throttles.copy(), sol.angles.copy(),
        sol.multipliers.copy(), sol.angles.copy(),
    )
    mirrored.throttles[arm] = max(-sol.throttles[arm], 0.01)
    mirrored.angles[arm] += math.pi
    mirrored.prev_angles[arm] = mirrored.angles[arm]
    try:
        trial = sqp_allocate(
            inp, mirrored, model, weights,
            scenario.tol_objective, scenario.tol_constraint,
            scenario.max_iterations,
            scenario.throttle_step_limit, scenario.angle_step_limit,
        )
    except SolverError:
        return False
    return (
        trial.converged
        and trial.objective < sol.objective - 0.02
        and trial.throttles[arm] >= 0.04
    )


def run_flight(scenario: Scenario) -> FlightLog:
    """Simulate one closed-loop flight and return the full log.

    The allocator runs every tick; when it fails to converge the previous
    actuator commands are held for that tick and the event is logged.

    A warm-started Newton solve follows one local valley of the allocation
    landscape, so the loop supervises the warm point with the single-shot
    linear least-norm solution as a reference. Two mechanisms keep the
    chain out of the valleys that wreck a flight:

    * Branch transits. The reference is projected onto each lightly loaded
      arm's current thrust direction; a clearly negative component (or a
      short extrapolation of one) means the demand has moved to that arm's
      opposite branch, which no sequence of cheap local steps can reach.
      The arm is walked half a turn at just under the servo rate and kept
      nearly unloaded by a raised per-arm throttle weight while it swings.
      An arm already pinned negative has its mirrored branch re-solved
      first and swings only when that solves clearly better, since a
      wrench that pins an arm on both branches alike is best served by
      staying put; the exception is when a sibling arm is near saturation,
      which means the flipped thrust is needed immediately.

    * Warm-point pull. Even with every branch right, the chain can settle
      into a far costlier load split than the reference spread. Each tick
      the warm point moves a small capped fraction toward the reference;
      the next solve undoes the pull when the current valley is genuinely
      better and ratchets across otherwise.

    Commanded angles stay continuous throughout; supervision only ever
    moves the solver's warm point, never the servo command.
    """
    model = scenario.model
    geometry = model.geometry
    n_arms = geometry.n_arms
    dt = model.control_period
    n_ticks = int(round(scenario.duration / dt))

    state = RigidBodyState.at_rest()
    pid = PidController(scenario.gains, model.mass, model.gravity)
    warm = AllocatorState.cold_start(model)
    servos = [
        ServoState(0.0, (), scenario.servo_rate_limit, scenario.servo_delay) for _ in range(n_arms)
    ]
    throttle_cmd = np.zeros(n_arms)
    angle_cmd = np.zeros(n_arms)
    throttle_act = np.zeros(n_arms)
    rng = np.random.default_rng(scenario.seed) if scenario.noise_std > 0.0 else None

    transit_step = 0.9 * scenario.servo_rate_limit * dt
    transit_target = np.full(n_arms, np.nan)  # NaN = no transit active
    transit_cool = np.full(n_arms, -np.inf)  # earliest time an arm may re-trigger
    hist_len = 12
    share_hist = np.zeros((hist_len, n_arms))

    log = {name: [] for name in (
        "t", "position", "velocity", "orientation", "angular_velocity", "sp_position",
        "sp_orientation", "throttle_cmd", "angle_cmd", "throttle_act", "angle_act",
        "iterations", "residual", "converged", "pos_error", "ori_error")}

    mu, tau = model.thrust_constant, model.torque_constant
    for k in range(n_ticks):
        t = k * dt
        sp = sweep_setpoint(t, scenario.sweep)
        pos_error = sp.position - state.position
        ori_error_body = orientation_error(sp.orientation, state.orientation)
        ori_error_world = state.orientation.rotate(ori_error_body)
        omega_world = state.orientation.rotate(state.angular_velocity)
        force, torque = pid.update(
            pos_error, ori_error_world, state.velocity, omega_world, sp.accel, dt
        )

        inp = AllocatorInput(state.orientation, force, torque)
        if scenario.allocator == "sqp":
            active = ~np.isnan(transit_target)
            if np.any(active):
                step = np.clip(transit_target[active] - warm.angles[active],
                               -transit_step, transit_step)
                # move the warm point and its motion reference together so the
                # solver treats the advanced angle as where the arm already is
                warm.angles[active] += step
                warm.prev_angles[active] += step
                done = np.abs(transit_target[active] - warm.angles[active]) < 1e-9
                transit_target[np.nonzero(active)[0][done]] = np.nan
                # keep swinging arms close to unloaded without removing them
                # from the wrench constraint
                weights_t = replace(
                    scenario.weights,
                    throttle=scenario.weights.throttle * (1.0 + 49.0 * active),
                )
            else:
                weights_t = scenario.weights
            try:
                sol = sqp_allocate(
                    inp, warm, model, weights_t,
                    scenario.tol_objective, scenario.tol_constraint,
                    scenario.max_iterations,
                    scenario.throttle_step_limit, scenario.angle_step_limit,
                )
            except SolverError:
                # a solver breakdown is handled like any non-converged tick:
                # hold the previous actuator commands and try again next tick
                sol = AllocatorSolution(
                    throttles=warm.throttles.copy(),
                    angles=warm.angles.copy(),
                    multipliers=warm.multipliers.copy(),
                    iterations=scenario.max_iterations,
                    residual=math.inf,
                    objective=math.inf,
                    converged=False,
                )
            if sol.converged:
                warm = sol.next_warm()
                throttle_cmd, angle_cmd = sol.throttles, sol.angles
                idle = (
                    geometry.rotating
                    & np.isnan(transit_target)
                    & (transit_cool <= t)
                )
                # branch watch: project the linear least-norm reference onto
                # each arm's current thrust direction. a negative component
                # means the demand on that arm has moved to the opposite
                # branch, which the warm-started Newton iteration cannot
                # reach on its own; an ordinary handoff of load to other
                # arms keeps the component near zero and fires nothing.
                try:
                    ref = pinv_allocate(inp, model, prev_angles=sol.angles)
                except SolverError:
                    ref = None
                if ref is not None:
                    gap = wrap_angle(ref.angles - sol.angles)
                    share = ref.throttles * np.cos(gap)
                    watch = idle & (sol.throttles < 0.05)
                    # the projection is continuous through a crossing, so a
                    # short extrapolation starts the half-turn slightly
                    # before the demand actually reverses
                    slope = (share - share_hist[k % hist_len]) / (hist_len * dt)
                    early = (
                        watch
                        & (k >= hist_len)
                        & (share < 0.02)
                        & (slope < -0.1)
                        & (share + 0.18 * slope < -0.04)
                    )
                    # a sibling driven near saturation means the wrench
                    # needs this arm's flipped thrust now, not after the
                    # pin deepens
                    urgent = np.max(sol.throttles) > 0.85
                    cand = early | (watch & (share < -0.03)) | (
                        idle & urgent & (sol.throttles < -0.015) & (share < -0.02)
                    )
                    if np.any(cand):
                        # transits starve the wrench constraint of
                        # actuators, so cap how many swing at once
                        order = sorted(
                            np.nonzero(cand)[0], key=lambda i: share[i]
                        )
                        slots = 2 - int(np.sum(~np.isnan(transit_target)))
                        for i in order[: max(slots, 0)]:
                            # an arm already pinned negative may pin alike
                            # on both branches; swing it only if the
                            # mirrored branch solves clearly better
                            if (
                                not urgent
                                and sol.throttles[i] < -0.02
                                and not _mirror_pays_off(
                                    i, sol, inp, model, weights_t, scenario
                                )
                            ):
                                continue
                            # past a crossing the reference sits on the far
                            # branch and picks the turn direction; before
                            # one, either way round reaches the same branch
                            direction = gap[i] if abs(gap[i]) > 0.5 * math.pi else math.pi
                            transit_target[i] = sol.angles[i] + math.copysign(
                                math.pi, direction
                            )
                            # refractory gap so one crossing cannot
                            # retrigger on its own settling transient
                            transit_cool[i] = t + 0.3
                    share_hist[k % hist_len] = share
                    # the warm chain can settle into a much costlier load
                    # split than the least-norm spread without any branch
                    # disagreement. a small capped pull of the warm point
                    # toward the reference each tick lets the solver ratchet
                    # over to the better valley when one exists, while its
                    # own descent undoes the pull when the current valley is
                    # the right one.
                    free = np.isnan(transit_target)
                    pull_a = np.clip(0.1 * gap, -0.01, 0.01)
                    pull_u = np.clip(
                        0.1 * (ref.throttles - sol.throttles), -0.01, 0.01
                    )
                    warm.angles[free] += pull_a[free]
                    warm.prev_angles[free] += pull_a[free]
                    warm.throttles[free] += pull_u[free]
        else:
            sol = pinv_allocate(inp, model, prev_angles=angle_cmd)
            if sol.converged:
                throttle_cmd, angle_cmd = sol.throttles, sol.angles

        servos = [servo_update(s, a_i, dt) for s, a_i in zip(servos, angle_cmd)]
        angle_act = np.array([s.angle for s in servos])
        clamped = np.clip(throttle_cmd, 0.0, 1.0)
        if scenario.motor_lag > 0.0:
            throttle_act = throttle_act + (clamped - throttle_act) * (
                1.0 - math.exp(-dt / scenario.motor_lag)
            )
        else:
            throttle_act = clamped

        n_dirs, _, _ = _thrust_dirs(geometry, angle_act)
        forces = mu * throttle_act[:, None] * n_dirs
        torques = mu * throttle_act[:, None] * np.cross(geometry.endpoints, n_dirs) + tau * (
            geometry.spins * throttle_act
        )[:, None] * n_dirs
        if rng is not None:
            forces = forces + rng.normal(0.0, scenario.noise_std, forces.shape) / max(n_arms, 1)

        log["t"].append(t)
        log["position"].append(state.position.copy())
        log["velocity"].append(state.velocity.copy())
        log["orientation"].append(state.orientation.wxyz.copy())
        log["angular_velocity"].append(state.angular_velocity.copy())
        log["sp_position"].append(sp.position.copy())
        log["sp_orientation"].append(sp.orientation.wxyz.copy())
        log["throttle_cmd"].append(np.array(throttle_cmd, dtype=float).copy())
        log["angle_cmd"].append(np.array(angle_cmd, dtype=float).copy())
        log["throttle_act"].append(throttle_act.copy())
        log["angle_act"].append(angle_act.copy())
        log["iterations"].append(sol.iterations)
        log["residual"].append(sol.residual)
        log["converged"].append(sol.converged)
        log["pos_error"].append(float(np.linalg.norm(pos_error)))
        log["ori_error"].append(float(np.linalg.norm(ori_error_body)))

        state = rigid_body_step(state, forces, torques, model, dt)

    return FlightLog(
        t=np.array(log["t"]),
        position=np.array(log["position"]),
        velocity=np.array(log["velocity"]),
        orientation=np.array(log["orientation"]),
        angular_velocity=np.array(log["angular_velocity"]),
        sp_position=np.array(log["sp_position"]),
        sp_orientation=np.array(log["sp_orientation"]),
        throttle_cmd=np.array(log["throttle_cmd"]),
        angle_cmd=np.array(log["angle_cmd"]),
        throttle_act=np.array(log["throttle_act"]),
        angle_act=np.array(log["angle_act"]),
        iterations=np.array(log["iterations"]),
        residual=np.array(log["residual"]),
        converged=np.array(log["converged"], dtype=bool),
        pos_error=np.array(log["pos_error"]),
        ori_error=np.array(log["ori_error"]),
        dt=dt,
        allocator=scenario.allocator,
    )


# ---------------------------------------------------------------------------
# statistics


@dataclass
class ErrorStats:
    pos_mean: float
    pos_std: float
    pos_p90: float
    ori_mean: float
    ori_std: float
    ori_p90: float

    def to_dict(self) -> dict:
        return {
            "pos_mean_m": self.pos_mean,
            "pos_std_m": self.pos_std,
            "pos_p90_m": self.pos_p90,
            "ori_mean_rad": self.ori_mean,
            "ori_std_rad": self.ori_std,
            "ori_p90_rad": self.ori_p90,
        }


def nearest_rank_p90(values) -> float:
    """90th percentile by the nearest-rank rule (ceil(0.9 n)-th smallest)."""
    values = np.sort(np.asarray(values, dtype=float))
    if len(values) == 0:
        raise ValueError("cannot take a percentile of an empty sample")
    rank = math.ceil(0.9 * len(values))
    return float(values[rank - 1])


def summarize(log: FlightLog, settle: float = 2.0) -> ErrorStats:
    """Tracking-error statistics after an initial settle window.

    Population standard deviation and nearest-rank 90th percentile.
    """
    mask = log.t >= settle
    if not np.any(mask):
        raise ValueError(f"settle window of {settle} s leaves no samples to summarize")
    pos = log.pos_error[mask]
    ori = log.ori_error[mask]
    return ErrorStats(
        pos_mean=float(np.mean(pos)),
        pos_std=float(np.std(pos)),
        pos_p90=nearest_rank_p90(pos),
        ori_mean=float(np.mean(ori)),
        ori_std=float(np.std(ori)),
        ori_p90=nearest_rank_p90(ori),
    )


# ---------------------------------------------------------------------------
# singularity analysis


@dataclass
class FlipEvent:
    t: float
    arm: int
    delta: float  # commanded angle jump, rad
    alignment: float  # |<arm axis, body-frame up>| at the event


def detect_flip_events(
    log: FlightLog,
    geometry,
    threshold: float = math.pi / 2,
    min_separation: float = 0.5,
    vertical_cos: float = math.cos(math.radians(25.0)),
    require_vertical: bool = True,
    min_throttle: float = 0.02,
) -> list[FlipEvent]:
    """Find per-arm commanded-angle jumps larger than `threshold`.

    With require_vertical, an event also needs the arm's rotation axis to be
    within acos(vertical_cos) of the world vertical, which is the alignment
    that forces the jump in the linear allocator. An arm is unloaded at the
    jump itself, so min_throttle is checked over the 0.3 s that follow: a
    flip whose arm never reloads produces no wrench disturbance and is
    skipped. Repeated triggers of one arm within min_separation seconds
    collapse into a single event.
    """
    deltas = np.abs(np.diff(log.angle_cmd, axis=0))
    ups = np.empty((len(log.t), 3))
    for k in range(len(log.t)):
        q = Quaternion(*log.orientation[k])
        ups[k] = q.inverse().rotate(np.array([0.0, 0.0, 1.0]))
    alignments = np.abs(ups @ geometry.axes.T)  # (ticks, arms)
    reload_ticks = max(1, int(round(0.3 / log.dt))) if log.dt > 0 else 1

    events: list[FlipEvent] = []
    last_time: dict[int, float] = {}
    for k, arm in zip(*np.nonzero(deltas > threshold)):
        t = float(log.t[k + 1])
        align = float(alignments[k + 1, arm])
        if require_vertical and align < vertical_cos:
            continue
        if np.max(log.throttle_cmd[k + 1: k + 2 + reload_ticks, arm]) < min_throttle:
            continue
        if arm in last_time and t - last_time[arm] < min_separation:
            last_time[arm] = t
            continue
        last_time[arm] = t
        events.append(FlipEvent(t, int(arm), float(deltas[k, arm]), align))
    return events


@dataclass
class SingularityComparison:
    """Paired peak-error comparison around the linear allocator's angle flips."""

    n_arm_instants: int
    n_pairs: int
    peaks_sqp: np.ndarray
    peaks_pinv: np.ndarray
    event_times: np.ndarray
    mean_peak_sqp: float
    mean_peak_pinv: float
    p_value: float

    def to_dict(self) -> dict:
        return {
            "n_arm_instants": self.n_arm_instants,
            "n_pairs": self.n_pairs,
            "event_times_s": [float(x) for x in self.event_times],
            "peaks_sqp_m": [float(x) for x in self.peaks_sqp],
            "peaks_pinv_m": [float(x) for x in self.peaks_pinv],
            "mean_peak_sqp_m": self.mean_peak_sqp,
            "mean_peak_pinv_m": self.mean_peak_pinv,
            "p_value_one_sided": self.p_value,
        }


def compare_singularity_handling(
    log_sqp: FlightLog,
    log_pinv: FlightLog,
    geometry,
    window: float = 1.2,
    cluster_gap: float = 0.25,
) -> SingularityComparison:
    """Pair peak position errors around each flip instant of the linear run.

    Events from arms flipping at the same crossing (within cluster_gap) share
    one window, so each pair is an independent crossing. The p-value is a
    one-sided paired t-test of pinv peaks exceeding the Newton-solver peaks.
    """
    events = detect_flip_events(log_pinv, geometry)
    times = sorted(e.t for e in events)
    clusters: list[float] = []
    for t in times:
        if not clusters or t - clusters[-1] > cluster_gap:
            clusters.append(t)

    peaks_s, peaks_p = [], []
    for t0 in clusters:
        lo, hi = t0 - 0.05, t0 + window
        m_s = (log_sqp.t >= lo) & (log_sqp.t <= hi)
        m_p = (log_pinv.t >= lo) & (log_pinv.t <= hi)
        if not (np.any(m_s) and np.any(m_p)):
            continue
        peaks_s.append(float(np.max(log_sqp.pos_error[m_s])))
        peaks_p.append(float(np.max(log_pinv.pos_error[m_p])))
    peaks_s = np.array(peaks_s)
    peaks_p = np.array(peaks_p)

    if len(peaks_s) >= 2 and np.ptp(peaks_p - peaks_s) > 0.0:
        p_value = float(scipy_stats.ttest_rel(peaks_p, peaks_s, alternative="greater").pvalue)
    else:
        p_value = 1.0
    return SingularityComparison(
        n_arm_instants=len(events),
        n_pairs=len(peaks_s),
        peaks_sqp=peaks_s,
        peaks_pinv=peaks_p,
        event_times=np.array(clusters[: len(peaks_s)]),
        mean_peak_sqp=float(np.mean(peaks_s)) if len(peaks_s) else math.nan,
        mean_peak_pinv=float(np.mean(peaks_p)) if len(peaks_p) else math.nan,
        p_value=p_value,
    )


def max_command_step(log: FlightLog) -> float:
    """Largest per-tick commanded arm-angle change anywhere in the log."""
    if len(log.t) < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(log.angle_cmd, axis=0))))
