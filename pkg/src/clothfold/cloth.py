"""Mass-spring cloth: a 2D grid of point masses joined by spring-dampers.

The grid lies flat in a horizontal plane at build time. Point (i, j) sits at
``origin + (i*h, j*h, 0)`` with ``h = side_length / (grid_n - 1)`` and flat
index ``j * grid_n + i``. One corner can be pinned to an external effector
(rigid link); the pin is re-applied after every integration step.
"""

from dataclasses import dataclass

import numpy as np

# Spring families, used as the `kind` code in Topology.
STRUCT = 0
SHEAR = 1
BEND = 2

KIND_NAMES = {STRUCT: "struct", SHEAR: "shear", BEND: "bend"}


class ParameterError(ValueError):
    """Raised when cloth parameters violate their invariants."""


class NumericError(RuntimeError):
    """Raised when a non-finite value enters the integration."""


@dataclass(frozen=True)
class ClothParams:
    """Physical parameters of one fabric (the dynamics randomization target).

    Default stiffness/damping are sized for stable semi-implicit integration
    at the environment's 10 ms step (k_struct/mass well below (2/dt)^2 across
    the spring network, damping below its explicit-integration bound).
    """

    grid_n: int = 9
    side_length: float = 0.3       # m
    mass_per_point: float = 0.004  # kg
    k_struct: float = 8.0          # N/m
    k_shear: float = 4.0           # N/m
    k_bend: float = 0.8            # N/m
    damping: float = 0.008         # N*s/m, per spring
    air_drag: float = 0.0005       # N*s/m, per point

    def __post_init__(self):
        if int(self.grid_n) != self.grid_n or self.grid_n < 3:
            raise ParameterError(f"grid_n must be an integer >= 3, got {self.grid_n}")
        if not 0.05 < self.side_length < 1.0:
            raise ParameterError(f"side_length must be in (0.05, 1.0) m, got {self.side_length}")
        for name in ("mass_per_point", "k_struct", "k_shear", "k_bend", "damping"):
            value = getattr(self, name)
            if not value > 0.0:
                raise ParameterError(f"{name} must be > 0, got {value}")
        # Drag may be exactly zero (a cloth in vacuum); negative drag injects energy.
        if self.air_drag < 0.0:
            raise ParameterError(f"air_drag must be >= 0, got {self.air_drag}")

    @property
    def n_points(self) -> int:
        return self.grid_n * self.grid_n

    @property
    def rest_spacing(self) -> float:
        return self.side_length / (self.grid_n - 1)


@dataclass
class ClothState:
    """Positions and velocities of every grid point, in meters and m/s."""

    positions: np.ndarray   # (N, 3)
    velocities: np.ndarray  # (N, 3)

    def copy(self) -> "ClothState":
        return ClothState(self.positions.copy(), self.velocities.copy())

    @property
    def grid_n(self) -> int:
        n = int(round(np.sqrt(len(self.positions))))
        assert n * n == len(self.positions)
        return n


@dataclass
class Topology:
    """Spring connectivity as parallel arrays over springs."""

    idx_a: np.ndarray   # (S,) int
    idx_b: np.ndarray   # (S,) int
    rest: np.ndarray    # (S,) float, rest lengths
    kind: np.ndarray    # (S,) int, STRUCT/SHEAR/BEND

    def springs(self):
        """Iterate (index_a, index_b, rest_length, kind_name) tuples."""
        for a, b, r, k in zip(self.idx_a, self.idx_b, self.rest, self.kind):
            yield int(a), int(b), float(r), KIND_NAMES[int(k)]

    def counts(self) -> dict:
        return {name: int(np.sum(self.kind == code)) for code, name in KIND_NAMES.items()}


def grasp_index(grid_n: int) -> int:
    """Flat index of the grasped corner (i = grid_n - 1, j = 0)."""
    return grid_n - 1


def tracked_indices(grid_n: int) -> np.ndarray:
    """Indices of the 8 tracked points, in their fixed observation order.

    Order: p0 = free corner at the opposite x-end of the grasped edge,
    p1 = grasped corner, then the two far-edge corners, then the four
    edge midpoints (bottom, left, right, top).
    """
    n = grid_n
    mid = (n - 1) // 2
    return np.array([
        0,                    # p0: corner (0, 0)
        n - 1,                # p1: grasped corner (n-1, 0)
        n * (n - 1),          # corner (0, n-1)
        n * n - 1,            # corner (n-1, n-1)
        mid,                  # midpoint of edge j = 0
        mid * n,              # midpoint of edge i = 0
        mid * n + n - 1,      # midpoint of edge i = n-1
        n * (n - 1) + mid,    # midpoint of edge j = n-1
    ])


def build_cloth(params: ClothParams, origin) -> tuple[ClothState, Topology]:
    """Build a flat resting cloth with structural, shear, and bend springs.

    Structural springs join 4-neighbors, shear springs cross each cell's two
    diagonals, bend springs join points two apart along rows and columns.
    Rest lengths equal the flat-grid distances, so the built state is in
    equilibrium (before gravity).
    """
    n = params.grid_n
    h = params.rest_spacing
    origin = np.asarray(origin, dtype=float)

    ii, jj = np.meshgrid(np.arange(n), np.arange(n))  # jj varies over rows
    positions = np.empty((n * n, 3), dtype=float)
    positions[:, 0] = origin[0] + ii.ravel() * h
    positions[:, 1] = origin[1] + jj.ravel() * h
    positions[:, 2] = origin[2]
    state = ClothState(positions, np.zeros((n * n, 3), dtype=float))

    springs = []  # (a, b, rest, kind)

    def idx(i, j):
        return j * n + i

    for j in range(n):
        for i in range(n):
            if i + 1 < n:
                springs.append((idx(i, j), idx(i + 1, j), h, STRUCT))
            if j + 1 < n:
                springs.append((idx(i, j), idx(i, j + 1), h, STRUCT))
            if i + 1 < n and j + 1 < n:
                springs.append((idx(i, j), idx(i + 1, j + 1), h * np.sqrt(2.0), SHEAR))
                springs.append((idx(i + 1, j), idx(i, j + 1), h * np.sqrt(2.0), SHEAR))
            if i + 2 < n:
                springs.append((idx(i, j), idx(i + 2, j), 2.0 * h, BEND))
            if j + 2 < n:
                springs.append((idx(i, j), idx(i, j + 2), 2.0 * h, BEND))

    arr = np.array([(a, b) for a, b, _, _ in springs], dtype=int)
    topology = Topology(
        idx_a=arr[:, 0],
        idx_b=arr[:, 1],
        rest=np.array([r for _, _, r, _ in springs], dtype=float),
        kind=np.array([k for _, _, _, k in springs], dtype=np.int8),
    )
    return state, topology


def accumulate_forces(state: ClothState, topology: Topology, params: ClothParams,
                      gravity) -> np.ndarray:
    """Per-point force array: springs + dampers + gravity + air drag.

    Each spring contributes a Hooke term k*(|d| - L0) and a damping term
    c*(relative velocity projected on the spring axis), both along the axis
    and equal-and-opposite on the endpoints. Springs whose endpoints coincide
    contribute nothing (degenerate-input rule).
    """
    pos, vel = state.positions, state.velocities
    gravity = np.asarray(gravity, dtype=float)

    d = pos[topology.idx_b] - pos[topology.idx_a]          # (S, 3)
    length = np.linalg.norm(d, axis=1)                     # (S,)
    ok = length > 0.0
    inv = np.where(ok, length, 1.0)
    unit = d / inv[:, None]

    k = np.choose(topology.kind, (params.k_struct, params.k_shear, params.k_bend))
    stretch = k * (length - topology.rest)

    v_rel = vel[topology.idx_b] - vel[topology.idx_a]
    damp = params.damping * np.einsum("ij,ij->i", v_rel, unit)

    magnitude = np.where(ok, stretch + damp, 0.0)
    f_spring = magnitude[:, None] * unit                   # force on endpoint a

    forces = np.zeros_like(pos)
    np.add.at(forces, topology.idx_a, f_spring)
    np.add.at(forces, topology.idx_b, -f_spring)

    forces += params.mass_per_point * gravity
    forces -= params.air_drag * vel
    return forces


def step_cloth(state: ClothState, forces: np.ndarray, params: ClothParams,
               dt: float, pin: tuple | None = None) -> ClothState:
    """Advance one semi-implicit Euler step; then re-apply the corner pin.

    ``pin`` is (point index, position, velocity) of the rigid effector link,
    or None for a free cloth.
    """
    if dt <= 0.0:
        raise ParameterError(f"dt must be > 0, got {dt}")
    bad = ~np.isfinite(forces).all(axis=1)
    if bad.any():
        raise NumericError(f"non-finite force at point index {int(np.argmax(bad))}")

    vel = state.velocities + (forces / params.mass_per_point) * dt
    pos = state.positions + vel * dt

    if pin is not None:
        index, pin_pos, pin_vel = pin
        pos[index] = np.asarray(pin_pos, dtype=float)
        vel[index] = np.asarray(pin_vel, dtype=float)
    return ClothState(pos, vel)


def tracked_points(state: ClothState) -> tuple[np.ndarray, np.ndarray]:
    """Positions and velocities of the 8 tracked points, shape (8, 3) each."""
    idx = tracked_indices(state.grid_n)
    return state.positions[idx].copy(), state.velocities[idx].copy()


def mechanical_energy(state: ClothState, topology: Topology, params: ClothParams,
                      gravity=None) -> float:
    """Kinetic + elastic energy; add gravitational potential if gravity given."""
    ke = 0.5 * params.mass_per_point * float(np.sum(state.velocities ** 2))
    d = state.positions[topology.idx_b] - state.positions[topology.idx_a]
    length = np.linalg.norm(d, axis=1)
    k = np.choose(topology.kind, (params.k_struct, params.k_shear, params.k_bend))
    pe = 0.5 * float(np.sum(k * (length - topology.rest) ** 2))
    total = ke + pe
    if gravity is not None:
        g = np.asarray(gravity, dtype=float)
        total -= params.mass_per_point * float(np.sum(state.positions @ g))
    return total
