"""Backward matrix/vector ODE integration with finite-escape detection.

All solution systems in this package are terminal value problems: a state
(possibly several Riccati kernels and offset vectors stacked into one flat
array) is given at t = T and integrated down to t = 0 with classical
fixed-step fourth-order Runge-Kutta. Fixed stepping keeps runs bit
reproducible, which the equivalence tests rely on.

The field callback always receives the forward-time derivative convention:
field(t, state) = d(state)/dt. Marching toward 0 simply applies RK4 with a
negative step.

Finite escape is detected at the nodes: the first node whose state exceeds
the l1-norm threshold (or contains a non-finite entry) yields a
BlowUpReport instead of a path. One RK4 step starting below the threshold
cannot overflow float64 for the polynomial fields used here, so a
non-finite stage derivative at a sub-threshold state is reported as a
NonFiniteField bug, not as escape.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import AsymmetryDrift, NonFiniteField
from .model import TimeGrid

DEFAULT_BLOWUP_THRESHOLD = 1e12
# Relative asymmetry beyond this after a step signals a mis-assembled
# field; measured relative to the state's magnitude so that legitimate
# near-escape growth (entries ~1e11) is still classified as blow-up.
ASYMMETRY_TOL = 1e-8


@dataclass(frozen=True)
class MatrixPath:
    """A state trajectory sampled on every node of a TimeGrid.

    values[j] is the state at grid.nodes[j]; the state may be a matrix, a
    vector, or a flat stacked array, but its shape is fixed along the path.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape[0] != self.grid.M + 1:
            raise ValueError(
                f"path has {self.values.shape[0]} states for {self.grid.M + 1} nodes"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("path contains non-finite entries")
        self.values.setflags(write=False)

    @property
    def state_shape(self) -> tuple:
        return self.values.shape[1:]

    def at(self, j: int) -> np.ndarray:
        return self.values[j]

    def interp(self, t: float) -> np.ndarray:
        """Linear interpolation between the bracketing nodes."""
        h = self.grid.h
        pos = t / h
        j = int(np.floor(pos))
        j = min(max(j, 0), self.grid.M - 1)
        w = pos - j
        return (1.0 - w) * self.values[j] + w * self.values[j + 1]


@dataclass(frozen=True)
class BlowUpReport:
    """Where and how hard a backward integration escaped."""

    escape_node: int
    norm_at_escape: float
    threshold: float

    def __post_init__(self):
        if not (self.norm_at_escape > self.threshold) and np.isfinite(self.norm_at_escape):
            raise ValueError("escape norm does not exceed the threshold")


def _l1(state: np.ndarray) -> float:
    return float(np.sum(np.abs(state)))


def _rk4_step(field, t: float, w: np.ndarray, dt: float) -> np.ndarray:
    k1 = field(t, w)
    k2 = field(t + dt / 2.0, w + (dt / 2.0) * k1)
    k3 = field(t + dt / 2.0, w + (dt / 2.0) * k2)
    k4 = field(t + dt, w + dt * k3)
    if not (np.all(np.isfinite(k1)) and np.all(np.isfinite(k2))
            and np.all(np.isfinite(k3)) and np.all(np.isfinite(k4))):
        raise NonFiniteField(f"field returned non-finite derivative near t={t!r}")
    return w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_backward(
    field: Callable[[float, np.ndarray], np.ndarray],
    terminal: np.ndarray,
    grid: TimeGrid,
    threshold: float = DEFAULT_BLOWUP_THRESHOLD,
    symmetrize: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Union[MatrixPath, BlowUpReport]:
    """March the terminal value problem from t = T down to t = 0.

    field(t, state) must return d(state)/dt (forward-time convention).
    When `symmetrize` is given it must be the projection onto the caller's
    symmetric subspace (e.g. re-symmetrizing each Riccati block of a
    stacked state); it is applied after every step, and projection
    distances beyond ASYMMETRY_TOL raise AsymmetryDrift since honest
    round-off stays orders of magnitude smaller.

    Returns the full MatrixPath, or a BlowUpReport naming the first node at
    which the state's l1 norm exceeded `threshold` or went non-finite.
    """
    terminal = np.asarray(terminal, dtype=np.float64)
    nodes = grid.nodes
    M = grid.M
    h = grid.h

    out = np.empty((M + 1,) + terminal.shape, dtype=np.float64)
    out[M] = terminal

    norm = _l1(terminal)
    if not np.isfinite(norm) or norm > threshold:
        return BlowUpReport(escape_node=M, norm_at_escape=norm, threshold=threshold)

    w = terminal
    for j in range(M, 0, -1):
        w = _rk4_step(field, nodes[j], w, -h)
        if symmetrize is not None:
            proj = symmetrize(w)
            scale = max(1.0, float(np.max(np.abs(w))))
            drift = float(np.max(np.abs(w - proj))) / scale
            if drift > ASYMMETRY_TOL:
                raise AsymmetryDrift(
                    f"relative asymmetry {drift:.3e} after step to node {j - 1}"
                )
            w = proj
        norm = _l1(w)
        if not np.isfinite(norm) or norm > threshold:
            return BlowUpReport(escape_node=j - 1, norm_at_escape=norm, threshold=threshold)
        out[j - 1] = w

    return MatrixPath(grid=grid, values=out)


def integrate_forward(
    field: Callable[[float, np.ndarray], np.ndarray],
    initial: np.ndarray,
    grid: TimeGrid,
) -> MatrixPath:
    """RK4 from t = 0 up to t = T (initial value companion, no escape check)."""
    initial = np.asarray(initial, dtype=np.float64)
    nodes = grid.nodes
    out = np.empty((grid.M + 1,) + initial.shape, dtype=np.float64)
    out[0] = initial
    w = initial
    for j in range(grid.M):
        w = _rk4_step(field, nodes[j], w, grid.h)
        out[j + 1] = w
    return MatrixPath(grid=grid, values=out)
