"""Wrench-to-actuator allocation for rotating-arm multirotors.

Maps a demanded world-frame force/torque pair onto per-arm throttles and
arm angles. Two routes are provided:

* ``sqp_allocate``: an equality-constrained solver that performs Newton
  steps on the first-order optimality system of a soft-penalty objective.
  Arm angles evolve continuously, so vertical-axis alignments are crossed
  without step discontinuities.
* ``pinv_allocate``: the classic linear baseline. Per-arm thrust vectors
  are expressed in thrust-plane coordinates, making the wrench map constant;
  the minimum-norm solve is a single pseudoinverse multiply. Extracting the
  angle through atan2 reintroduces discontinuities near alignments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import ROTATING, DroneGeometry, thrust_plane_basis
from .spatial import Quaternion

TWO_PI = 2.0 * math.pi


class SolverError(RuntimeError):
    """Raised when a linear solve inside the allocator cannot be completed."""


@dataclass
class PenaltyWeights:
    """Soft-cost coefficients for throttle use, arm-rate use, and limit overruns.

    Throttle outside [throttle_low, throttle_high] and arm rates beyond
    rate_limit are discouraged with one-sided quadratics, keeping the
    objective piecewise quadratic with a continuous first derivative.

    `throttle` may be a per-arm array; a supervisor can then raise the cost
    of individual arms (for example while walking one across a singular
    direction) without touching the shared scalar defaults.
    """

    throttle: float = 1.0
    arm_rate: float = 0.01  # s^2; rad/s maps to the same cost scale as throttle
    limit: float = 100.0
    throttle_low: float = 0.0
    throttle_high: float = 1.0
    rate_limit: float = TWO_PI  # rad/s

    def __post_init__(self):
        low = min(np.min(self.throttle), self.arm_rate, self.limit, self.rate_limit)
        if low <= 0.0:
            raise ValueError("penalty weights and the rate limit must be positive")
        if not self.throttle_high > self.throttle_low:
            raise ValueError("throttle_high must exceed throttle_low")


def _default_inertia() -> np.ndarray:
    return np.diag([0.02, 0.02, 0.02])


@dataclass
class DroneModel:
    """Physical constants shared by the allocator and the simulator."""

    geometry: DroneGeometry
    thrust_constant: float = 15.0  # N of thrust per unit throttle
    torque_constant: float = 0.18  # Nm of drag torque per unit throttle
    control_period: float = 0.005  # s between allocator calls
    mass: float = 2.4  # kg
    gravity: float = 9.81  # m/s^2
    inertia: np.ndarray = field(default_factory=_default_inertia)

    def __post_init__(self):
        if self.thrust_constant <= 0.0 or self.torque_constant < 0.0:
            raise ValueError("thrust_constant must be positive, torque_constant non-negative")
        if self.control_period <= 0.0 or self.mass <= 0.0 or self.gravity <= 0.0:
            raise ValueError("control_period, mass, and gravity must be positive")
        inertia = np.asarray(self.inertia, dtype=float)
        if inertia.shape == (3,):
            inertia = np.diag(inertia)
        if inertia.shape != (3, 3) or not np.all(np.isfinite(inertia)):
            raise ValueError("inertia must be a finite 3x3 matrix or 3-vector of diagonals")
        self.inertia = inertia

    @property
    def hover_throttle(self) -> float:
        """Equal-share throttle that would carry the weight if all arms pushed up."""
        return self.mass * self.gravity / (self.thrust_constant * self.geometry.n_arms)


@dataclass
class AllocatorInput:
    orientation: Quaternion
    force: np.ndarray  # demanded net force, world frame, N
    torque: np.ndarray  # demanded net torque, world frame, Nm

    def __post_init__(self):
        self.force = np.asarray(self.force, dtype=float)
        self.torque = np.asarray(self.torque, dtype=float)
        for name, v in (("force", self.force), ("torque", self.torque)):
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be a finite 3-vector, got {v!r}")

    def body_wrench(self) -> np.ndarray:
        inv = self.orientation.inverse()
        return np.concatenate([inv.rotate(self.force), inv.rotate(self.torque)])


@dataclass
class AllocatorState:
    """Warm-start data: current iterate plus the previous tick's arm angles."""

    throttles: np.ndarray
    angles: np.ndarray
    multipliers: np.ndarray
    prev_angles: np.ndarray

    def __post_init__(self):
        self.throttles = np.asarray(self.throttles, dtype=float)
        self.angles = np.asarray(self.angles, dtype=float)
        self.multipliers = np.asarray(self.multipliers, dtype=float)
        self.prev_angles = np.asarray(self.prev_angles, dtype=float)

    @classmethod
    def cold_start(cls, model: DroneModel) -> "AllocatorState":
        n = model.geometry.n_arms
        share = np.full(n, model.hover_throttle)
        return cls(share, np.zeros(n), np.zeros(6), np.zeros(n))


@dataclass
class AllocatorSolution:
    throttles: np.ndarray
    angles: np.ndarray
    multipliers: np.ndarray
    iterations: int
    residual: float  # constraint violation norm at the returned iterate
    objective: float
    converged: bool

    def next_warm(self) -> AllocatorState:
        """Warm start for the next control tick."""
        return AllocatorState(
            self.throttles.copy(), self.angles.copy(), self.multipliers.copy(), self.angles.copy()
        )


# ---------------------------------------------------------------------------
# thrust direction and wrench derivatives


def thrust_direction(arm, angle: float):
    """Thrust direction of one arm plus its first two angle derivatives.

    For rotating arms n(a) = cos(a) b1 + sin(a) b2, so dn/da = axis x n and
    d2n/da2 = axis x (axis x n) = -n. Fixed arms return zero derivatives.
    """
    if arm.kind != ROTATING:
        return arm.zero_dir.copy(), np.zeros(3), np.zeros(3)
    b1, b2 = thrust_plane_basis(arm)
    n = math.cos(angle) * b1 + math.sin(angle) * b2
    dn = np.cross(arm.axis, n)
    ddn = np.cross(arm.axis, dn)
    return n, dn, ddn


@dataclass
class ArmWrench:
    """Force/torque of one arm and every partial needed by the allocator."""

    force: np.ndarray
    torque: np.ndarray
    force_du: np.ndarray
    force_da: np.ndarray
    torque_du: np.ndarray
    torque_da: np.ndarray
    force_duu: np.ndarray
    force_daa: np.ndarray
    force_dua: np.ndarray
    torque_duu: np.ndarray
    torque_daa: np.ndarray
    torque_dua: np.ndarray


def arm_wrench(arm, throttle: float, angle: float, thrust_constant: float, torque_constant: float) -> ArmWrench:
    """Wrench contribution of one arm about the body origin.

    force = mu u n(a); torque = mu u (r x n) + tau s u n, where the second
    term is the propeller drag torque along the thrust direction.
    """
    n, dn, ddn = thrust_direction(arm, angle)
    mu, tau = thrust_constant, torque_constant
    r, s, u = arm.endpoint, float(arm.spin), float(throttle)
    rxn, rxdn, rxddn = np.cross(r, n), np.cross(r, dn), np.cross(r, ddn)
    return ArmWrench(
        force=mu * u * n,
        torque=mu * u * rxn + tau * s * u * n,
        force_du=mu * n,
        force_da=mu * u * dn,
        torque_du=mu * rxn + tau * s * n,
        torque_da=mu * u * rxdn + tau * s * u * dn,
        force_duu=np.zeros(3),
        force_daa=mu * u * ddn,
        force_dua=mu * dn,
        torque_duu=np.zeros(3),
        torque_daa=mu * u * rxddn + tau * s * u * ddn,
        torque_dua=mu * rxdn + tau * s * dn,
    )


def _thrust_dirs(geometry: DroneGeometry, angles: np.ndarray):
    """Vectorized thrust directions and derivatives for all arms, (n, 3) each."""
    rot = geometry.rotating[:, None]
    ca = np.cos(angles)[:, None]
    sa = np.sin(angles)[:, None]
    n = np.where(rot, ca * geometry.basis1 + sa * geometry.basis2, geometry.zero_dirs)
    dn = np.where(rot, np.cross(geometry.axes, n), 0.0)
    ddn = np.where(rot, np.cross(geometry.axes, dn), 0.0)
    return n, dn, ddn


def _body_wrench_of(throttles, angles, model: DroneModel) -> np.ndarray:
    g = model.geometry
    n, _, _ = _thrust_dirs(g, angles)
    mu, tau = model.thrust_constant, model.torque_constant
    u = throttles[:, None]
    forces = mu * u * n
    torques = mu * u * np.cross(g.endpoints, n) + tau * (g.spins * throttles)[:, None] * n
    return np.concatenate([forces.sum(axis=0), torques.sum(axis=0)])


def constraint_residual(throttles, angles, inp: AllocatorInput, model: DroneModel) -> np.ndarray:
    """Produced-minus-demanded body wrench; zero at an exact allocation."""
    throttles = np.asarray(throttles, dtype=float)
    angles = np.asarray(angles, dtype=float)
    return _body_wrench_of(throttles, angles, model) - inp.body_wrench()


# ---------------------------------------------------------------------------
# objective


def penalty_throttle(u, weights: PenaltyWeights):
    """Throttle cost p(u) with first and second derivatives (elementwise)."""
    u = np.asarray(u, dtype=float)
    over = np.maximum(0.0, u - weights.throttle_high)
    under = np.maximum(0.0, weights.throttle_low - u)
    p = weights.throttle * u * u + weights.limit * (over * over + under * under)
    dp = 2.0 * weights.throttle * u + 2.0 * weights.limit * (over - under)
    ddp = 2.0 * weights.throttle + 2.0 * weights.limit * ((over > 0.0) | (under > 0.0))
    return p, dp, ddp


def penalty_arm_rate(rate, weights: PenaltyWeights):
    """Arm-rate cost p(v) with derivatives; one-sided beyond +-rate_limit."""
    rate = np.asarray(rate, dtype=float)
    over = np.maximum(0.0, np.abs(rate) - weights.rate_limit)
    p = weights.arm_rate * rate * rate + weights.limit * over * over
    dp = 2.0 * weights.arm_rate * rate + 2.0 * weights.limit * over * np.sign(rate)
    ddp = 2.0 * weights.arm_rate + 2.0 * weights.limit * (over > 0.0)
    return p, dp, ddp


def allocation_objective(throttles, angles, prev_angles, period: float, weights: PenaltyWeights) -> float:
    """Total soft cost of an actuator configuration given last tick's angles."""
    if period <= 0.0:
        raise ValueError(f"control period must be positive, got {period}")
    pu, _, _ = penalty_throttle(np.asarray(throttles, dtype=float), weights)
    rate = (np.asarray(angles, dtype=float) - np.asarray(prev_angles, dtype=float)) / period
    pa, _, _ = penalty_arm_rate(rate, weights)
    return float(np.sum(pu) + np.sum(pa))


# ---------------------------------------------------------------------------
# optimality system


def _assemble(throttles, angles, multipliers, prev_angles, body_wrench, model: DroneModel, weights: PenaltyWeights):
    """Gradient K and Jacobian H of the stationarity system at one iterate.

    Layout: variables are (throttles, angles, multipliers); K stacks the two
    stationarity blocks and the constraint residual, H is its symmetric
    Jacobian. Arms never couple to each other through second derivatives,
    so the primal blocks are diagonal.
    """
    g = model.geometry
    mu, tau = model.thrust_constant, model.torque_constant
    dt = model.control_period
    n_arms = g.n_arms

    n, dn, ddn = _thrust_dirs(g, angles)
    u = throttles[:, None]
    su = (g.spins * throttles)[:, None]
    spins = g.spins[:, None]
    rxn = np.cross(g.endpoints, n)
    rxdn = np.cross(g.endpoints, dn)
    rxddn = np.cross(g.endpoints, ddn)

    force = mu * u * n
    torque = mu * u * rxn + tau * su * n
    residual = np.concatenate([force.sum(axis=0), torque.sum(axis=0)]) - body_wrench

    force_du = mu * n
    torque_du = mu * rxn + tau * spins * n
    force_da = mu * u * dn
    torque_da = mu * u * rxdn + tau * su * dn
    grad_u = np.vstack([force_du.T, torque_du.T])  # (6, n)
    grad_a = np.vstack([force_da.T, torque_da.T])

    lam_f, lam_t = multipliers[:3], multipliers[3:]
    # second derivatives contracted with the multipliers (diagonal per arm)
    force_dua = mu * dn
    torque_dua = mu * rxdn + tau * spins * dn
    force_daa = mu * u * ddn
    torque_daa = mu * u * rxddn + tau * su * ddn
    h_ua = force_dua @ lam_f + torque_dua @ lam_t
    h_aa = force_daa @ lam_f + torque_daa @ lam_t

    rate = (angles - prev_angles) / dt
    _, dpu, ddpu = penalty_throttle(throttles, weights)
    _, dpa, ddpa = penalty_arm_rate(rate, weights)

    dim = 2 * n_arms + 6
    hess = np.zeros((dim, dim))
    idx = np.arange(n_arms)
    hess[idx, idx] = ddpu  # throttle second derivatives never touch the constraints
    hess[n_arms + idx, n_arms + idx] = ddpa / (dt * dt) + h_aa
    hess[idx, n_arms + idx] = h_ua
    hess[n_arms + idx, idx] = h_ua
    hess[: n_arms, 2 * n_arms:] = grad_u.T
    hess[2 * n_arms:, : n_arms] = grad_u
    hess[n_arms: 2 * n_arms, 2 * n_arms:] = grad_a.T
    hess[2 * n_arms:, n_arms: 2 * n_arms] = grad_a

    grad = np.concatenate([dpu + grad_u.T @ multipliers, dpa / dt + grad_a.T @ multipliers, residual])
    return hess, grad, residual


def assemble_kkt(state: AllocatorState, inp: AllocatorInput, model: DroneModel, weights: PenaltyWeights):
    """Public wrapper around the optimality-system assembly; returns (H, K)."""
    hess, grad, _ = _assemble(
        state.throttles, state.angles, state.multipliers, state.prev_angles,
        inp.body_wrench(), model, weights,
    )
    return hess, grad


_REGULARIZATIONS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)


def newton_step(hess: np.ndarray, grad: np.ndarray, n_arms: int):
    """Solve H delta = -K, regularizing the primal diagonal if needed.

    Returns (d_throttles, d_angles, d_multipliers). Raises SolverError when
    no regularization level in the ladder produces a usable solve.
    """
    n_primal = 2 * n_arms
    scale = max(1.0, float(np.linalg.norm(grad)))
    for gamma in _REGULARIZATIONS:
        matrix = hess
        if gamma > 0.0:
            matrix = hess.copy()
            matrix[np.arange(n_primal), np.arange(n_primal)] += gamma
        try:
            delta = np.linalg.solve(matrix, -grad)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(delta)):
            continue
        if np.linalg.norm(matrix @ delta + grad) > 1e-10 * scale:
            continue
        return delta[:n_arms], delta[n_arms:n_primal], delta[n_primal:]
    raise SolverError(
        f"optimality system is singular even with diagonal regularization up to "
        f"{_REGULARIZATIONS[-1]:g} (dim {hess.shape[0]}, |K|={np.linalg.norm(grad):.3e})"
    )


def step_scale(d_throttles, d_angles, throttle_step_limit: float = 0.1, angle_step_limit: float = 0.2) -> float:
    """Shrink factor keeping per-iteration updates inside trust bounds."""
    alpha = 1.0
    max_da = float(np.max(np.abs(d_angles))) if len(np.atleast_1d(d_angles)) else 0.0
    max_du = float(np.max(np.abs(d_throttles))) if len(np.atleast_1d(d_throttles)) else 0.0
    if max_da > angle_step_limit:
        alpha = min(alpha, angle_step_limit / max_da)
    if max_du > throttle_step_limit:
        alpha = min(alpha, throttle_step_limit / max_du)
    return alpha


def _scaled_residual_norm(residual: np.ndarray, torque_scale: float) -> float:
    return float(math.hypot(np.linalg.norm(residual[:3]), torque_scale * np.linalg.norm(residual[3:])))


def sqp_allocate(
    inp: AllocatorInput,
    warm: AllocatorState,
    model: DroneModel,
    weights: PenaltyWeights | None = None,
    tol_objective: float = 1e-4,
    tol_constraint: float = 1e-5,
    max_iterations: int = 30,
    throttle_step_limit: float = 0.1,
    angle_step_limit: float = 0.2,
    torque_scale: float = 1.0,
) -> AllocatorSolution:
    """Allocate a wrench demand by Newton iteration on the optimality system.

    Terminates when the relative objective change falls below tol_objective
    AND the constraint residual norm falls below tol_constraint, or after
    max_iterations. Arm angles are left unwrapped so they can accumulate
    over continuous rotations.
    """
    if weights is None:
        weights = PenaltyWeights()
    body_wrench = inp.body_wrench()
    dt = model.control_period
    n_arms = model.geometry.n_arms

    u = warm.throttles.astype(float).copy()
    a = warm.angles.astype(float).copy()
    lam = warm.multipliers.astype(float).copy()
    a_prev = warm.prev_angles.astype(float).copy()
    if len(u) != n_arms or len(a) != n_arms or len(lam) != 6:
        raise ValueError("warm-start arrays do not match the geometry")

    obj_prev = allocation_objective(u, a, a_prev, dt, weights)
    iterations = 0
    converged = False
    res_norm = math.inf
    for iterations in range(1, max_iterations + 1):
        hess, grad, _ = _assemble(u, a, lam, a_prev, body_wrench, model, weights)
        du, da, dlam = newton_step(hess, grad, n_arms)
        alpha = step_scale(du, da, throttle_step_limit, angle_step_limit)
        u += alpha * du
        a += alpha * da
        lam += alpha * dlam
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(a)) and np.all(np.isfinite(lam))):
            raise SolverError("allocator iterate diverged to non-finite values")
        obj = allocation_objective(u, a, a_prev, dt, weights)
        residual = _body_wrench_of(u, a, model) - body_wrench
        res_norm = _scaled_residual_norm(residual, torque_scale)
        if abs(obj - obj_prev) / max(obj, 1e-9) < tol_objective and res_norm < tol_constraint:
            converged = True
            obj_prev = obj
            break
        obj_prev = obj
    return AllocatorSolution(u, a, lam, iterations, res_norm, obj_prev, converged)


# ---------------------------------------------------------------------------
# pseudoinverse baseline


def vectored_thrust_matrix(model: DroneModel) -> np.ndarray:
    """Constant 6 x 2n wrench map over thrust-plane coordinates.

    Column pair 2i, 2i+1 multiplies arm i's coordinates (u cos a, u sin a).
    Only valid when every arm rotates; drag torque is included.
    """
    g = model.geometry
    if not np.all(g.rotating):
        raise SolverError("the pseudoinverse route needs every arm to be a rotating arm")
    mu, tau = model.thrust_constant, model.torque_constant
    # interleave arm-major: columns (b1_0, b2_0, b1_1, b2_1, ...)
    cols = np.empty((2 * g.n_arms, 6))
    b1_top = mu * g.basis1
    b1_bot = mu * np.cross(g.endpoints, g.basis1) + tau * g.spins[:, None] * g.basis1
    b2_top = mu * g.basis2
    b2_bot = mu * np.cross(g.endpoints, g.basis2) + tau * g.spins[:, None] * g.basis2
    cols[0::2, :3] = b1_top
    cols[0::2, 3:] = b1_bot
    cols[1::2, :3] = b2_top
    cols[1::2, 3:] = b2_bot
    return cols.T


def wrap_angle(x):
    """Wrap to [-pi, pi)."""
    return (np.asarray(x, dtype=float) + math.pi) % TWO_PI - math.pi


def pinv_allocate(inp: AllocatorInput, model: DroneModel, prev_angles=None) -> AllocatorSolution:
    """Single-shot linear allocation through the constant thrust-plane map.

    Exact for any wrench in the map's range. Arm angles come from atan2 of
    the plane coordinates, unwrapped to the nearest turn of the previous
    angle; sign reversals of the coordinate vector still demand half-turn
    jumps, which is this method's singularity behavior. Arms allocated zero
    throttle keep their previous angle.
    """
    g = model.geometry
    matrix = vectored_thrust_matrix(model)
    if np.linalg.matrix_rank(matrix) < 6:
        raise SolverError(f"thrust-plane wrench map of {g.name} is rank deficient")
    body_wrench = inp.body_wrench()
    coords = np.linalg.lstsq(matrix, body_wrench, rcond=None)[0].reshape(g.n_arms, 2)

    throttles = np.linalg.norm(coords, axis=1)
    raw = np.arctan2(coords[:, 1], coords[:, 0])
    if prev_angles is None:
        angles = np.where(throttles > 1e-9, raw, 0.0)
    else:
        prev_angles = np.asarray(prev_angles, dtype=float)
        angles = np.where(
            throttles > 1e-9, prev_angles + wrap_angle(raw - prev_angles), prev_angles
        )

    residual = constraint_residual(throttles, angles, inp, model)
    res_norm = float(np.linalg.norm(residual))
    return AllocatorSolution(
        throttles=throttles,
        angles=angles,
        multipliers=np.zeros(6),
        iterations=1,
        residual=res_norm,
        objective=float(np.sum(throttles**2)),
        converged=res_norm <= 1e-6 * max(1.0, float(np.linalg.norm(body_wrench))),
    )
