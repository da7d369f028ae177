"""Minimum-effort hover solutions and orientation-sweep efficiency metrics.

For a chosen body-frame up direction the hover problem asks for per-arm
forces, each confined to its arm's admissible set (a plane for rotating
arms, a line or ray for fixed ones), that balance gravity with zero net
torque while minimizing the sum of squared force magnitudes. Two scalars
summarize the solution: the fraction of produced thrust that points up,
and the fraction of installed thrust capacity needed to hover.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import DroneGeometry, force_map

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


class InfeasibleHoverError(RuntimeError):
    """Hover is not achievable for the requested orientation."""


@dataclass
class HoverProblem:
    geometry: DroneGeometry
    up: np.ndarray  # body-frame direction opposing gravity, unit length
    mass: float = 2.4
    gravity: float = 9.81

    def __post_init__(self):
        self.up = np.asarray(self.up, dtype=float)
        if self.up.shape != (3,) or not np.all(np.isfinite(self.up)):
            raise ValueError("up must be a finite 3-vector")
        if abs(np.linalg.norm(self.up) - 1.0) > 1e-6:
            raise ValueError(f"up must be unit length, got norm {np.linalg.norm(self.up)}")
        if not (self.mass > 0.0 and math.isfinite(self.mass)):
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not (self.gravity > 0.0 and math.isfinite(self.gravity)):
            raise ValueError(f"gravity must be positive, got {self.gravity}")


@dataclass
class HoverSolution:
    forces: np.ndarray  # (n_arms, 3) per-arm force vectors, N
    active: np.ndarray  # per-arm flag; False when a one-sided arm was clamped to zero

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.forces, axis=1)


def solve_hover(problem: HoverProblem) -> HoverSolution:
    """Minimum sum-of-squared-forces hover solution.

    Solves the stacked linear balance in per-arm force coordinates with a
    minimum-norm least-squares solve. One-sided (unidirectional) arms that
    come out negative are clamped to zero one at a time, most negative
    first, and the reduced system is re-solved; at most one clamp per arm.
    """
    g = problem.geometry
    fm = force_map(g)
    weight = problem.mass * problem.gravity
    target = np.concatenate([weight * problem.up, np.zeros(3)])

    n_cols = fm.matrix.shape[1]
    free = np.ones(n_cols, dtype=bool)
    coords = np.zeros(n_cols)
    for _ in range(g.n_arms + 1):
        coords[:] = 0.0
        sol, *_ = np.linalg.lstsq(fm.matrix[:, free], target, rcond=None)
        coords[free] = sol
        negative = fm.unidirectional_cols & free & (coords < -1e-12 * weight)
        if not np.any(negative):
            break
        worst = np.argmin(np.where(negative, coords, np.inf))
        free[worst] = False

    residual = fm.matrix @ coords - target
    force_tol = 1e-8 * weight
    torque_tol = 1e-8 * weight * max(g.max_radius, 1e-9)
    if np.linalg.norm(residual[:3]) > force_tol or np.linalg.norm(residual[3:]) > torque_tol:
        raise InfeasibleHoverError(
            f"no admissible hover for up={np.round(problem.up, 6)} on {g.name}: "
            f"residual force {np.linalg.norm(residual[:3]):.3e} N, "
            f"torque {np.linalg.norm(residual[3:]):.3e} Nm"
        )

    forces = np.zeros((g.n_arms, 3))
    np.add.at(forces, fm.col_arm, coords[:, None] * fm.directions)
    active = np.ones(g.n_arms, dtype=bool)
    for col in np.nonzero(~free)[0]:
        active[fm.col_arm[col]] = False
    return HoverSolution(forces, active)


def upward_fraction(solution: HoverSolution, up) -> float:
    """Share of total produced thrust that points along `up` (x1 in outputs)."""
    up = np.asarray(up, dtype=float)
    total = float(np.sum(solution.norms))
    if total < 1e-12:
        raise ValueError("hover solution produces no thrust; fraction undefined")
    return float(np.sum(solution.forces @ up)) / total


def capacity_fraction(solution: HoverSolution, mass: float, gravity: float, n_arms: int) -> float:
    """Hover weight over installed capacity at the busiest arm's level (x2 in outputs).

    With every arm sized to the largest force actually used, this is the
    fraction of that installed thrust needed to hover.
    """
    peak = float(np.max(solution.norms))
    if peak < 1e-12:
        raise ValueError("hover solution produces no thrust; fraction undefined")
    return mass * gravity / (peak * n_arms)


def fibonacci_sphere(n_samples: int) -> np.ndarray:
    """Deterministic, nearly uniform unit-sphere sampling (n_samples, 3)."""
    k = np.arange(n_samples)
    z = 1.0 - (2.0 * k + 1.0) / n_samples
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = GOLDEN_ANGLE * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


@dataclass
class EfficiencyMap:
    """Per-orientation efficiency samples plus range summary."""

    name: str
    ups: np.ndarray
    x1: np.ndarray  # upward thrust fraction per sample (NaN when infeasible)
    x2: np.ndarray  # capacity fraction per sample (NaN when infeasible)
    mass: float
    gravity: float
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return len(self.ups)

    def summary(self) -> dict:
        feasible = np.isfinite(self.x1)
        if not np.any(feasible):
            raise InfeasibleHoverError(f"no feasible orientation among {self.n_samples} samples")
        return {
            "geometry": self.name,
            "n_samples": int(self.n_samples),
            "n_infeasible": int(len(self.failures)),
            "x1_min": float(np.nanmin(self.x1)),
            "x1_max": float(np.nanmax(self.x1)),
            "x2_min": float(np.nanmin(self.x2)),
            "x2_max": float(np.nanmax(self.x2)),
        }

    def table(self) -> tuple[list[str], np.ndarray]:
        """Column names and an (n_samples, 5) matrix; infeasible rows hold NaN."""
        header = ["up_x", "up_y", "up_z", "x1", "x2"]
        return header, np.column_stack([self.ups, self.x1, self.x2])

    def write_csv(self, path) -> None:
        header, rows = self.table()
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(f"{x:.17g}" for x in row))
        with open(path, "w") as handle:
            handle.write("\n".join(lines) + "\n")


def sweep_orientations(
    geometry: DroneGeometry,
    n_samples: int = 2000,
    mass: float = 2.4,
    gravity: float = 9.81,
) -> EfficiencyMap:
    """Evaluate both efficiency metrics over a Fibonacci lattice of up directions.

    Infeasible orientations (possible with one-sided fixed arms) are recorded
    as NaN samples rather than aborting the sweep.
    """
    if n_samples < 100:
        raise ValueError(f"need at least 100 samples for a meaningful sweep, got {n_samples}")
    ups = fibonacci_sphere(n_samples)
    x1 = np.full(n_samples, np.nan)
    x2 = np.full(n_samples, np.nan)
    failures: list[tuple[int, str]] = []
    for i, up in enumerate(ups):
        try:
            sol = solve_hover(HoverProblem(geometry, up, mass, gravity))
        except InfeasibleHoverError as exc:
            failures.append((i, str(exc)))
            continue
        x1[i] = upward_fraction(sol, up)
        x2[i] = capacity_fraction(sol, mass, gravity, geometry.n_arms)
    return EfficiencyMap(geometry.name, ups, x1, x2, mass, gravity, failures)
