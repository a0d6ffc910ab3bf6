"""Model ingestion, validation, and the lifted block matrices.

A model bundles the constant coefficients of a linear-quadratic mean field
game with one major player and K types of minor players: drift/input/noise
matrices for both tiers, quadratic tracking costs with deviation matrices and
offsets, control weights, a discount rate, a horizon, and the limiting type
frequencies pi.

Every solver consumes a ValidatedModel plus its PiLifted companion, which
holds the pi-weighted horizontal liftings (row-Kronecker products with pi)
and the congruence-transformed cost blocks acting on the stacked states
(x0, zbar) and (z_kappa, x0, zbar).
"""

from dataclasses import dataclass, fields

import numpy as np

from .errors import BadPi, DimensionMismatch, IndexOutOfRange, NotPD, NotPSD

# Weights are symmetrized silently below this asymmetry; rejected above it.
SYMMETRY_REPAIR_TOL = 1e-12
# A weight counts as PSD when its smallest eigenvalue clears this floor.
PSD_EIG_FLOOR = -1e-10


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_0 = 0 < t_1 < ... < t_M = T with spacing h = T/M."""

    M: int
    T: float

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("TimeGrid needs at least one step")
        if not (self.T > 0.0):
            raise ValueError("TimeGrid horizon must be positive")

    @property
    def h(self) -> float:
        return self.T / self.M

    @property
    def nodes(self) -> np.ndarray:
        # linspace pins the last node to T exactly, no accumulated rounding
        return np.linspace(0.0, self.T, self.M + 1)

    def same_as(self, other: "TimeGrid") -> bool:
        return self.M == other.M and self.T == other.T


def default_steps(T: float) -> int:
    """Default step count: 2000 covers horizons up to 5 at order-4 accuracy."""
    if T <= 5.0:
        return 2000
    return int(np.ceil(400.0 * T))


@dataclass
class ModelParams:
    """Raw model data as supplied by the user; nothing is checked here.

    Matrix arguments may be any array-like (nested lists straight from a
    model file are fine); `A` holds the K minor drift matrices stacked along
    the first axis.
    """

    n: int
    n1: int
    n2: int
    K: int
    T: float
    rho: float
    pi: object
    A0: object
    B0: object
    F0: object
    D0: object
    A: object
    B: object
    F: object
    G: object
    D: object
    Q0: object
    Q0f: object
    Q: object
    Qf: object
    Gamma0: object
    Gamma0f: object
    Gamma1: object
    Gamma1f: object
    Gamma2: object
    Gamma2f: object
    eta0: object
    eta0f: object
    eta: object
    etaf: object
    R0: object
    R: object
    alpha0: object
    x0_mean: object
    x0_cov: object
    xi_cov: object


@dataclass(frozen=True)
class ValidatedModel:
    """A model that passed validate_model; arrays are float64 and read-only."""

    n: int
    n1: int
    n2: int
    K: int
    T: float
    rho: float
    pi: np.ndarray
    A0: np.ndarray
    B0: np.ndarray
    F0: np.ndarray
    D0: np.ndarray
    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    G: np.ndarray
    D: np.ndarray
    Q0: np.ndarray
    Q0f: np.ndarray
    Q: np.ndarray
    Qf: np.ndarray
    Gamma0: np.ndarray
    Gamma0f: np.ndarray
    Gamma1: np.ndarray
    Gamma1f: np.ndarray
    Gamma2: np.ndarray
    Gamma2f: np.ndarray
    eta0: np.ndarray
    eta0f: np.ndarray
    eta: np.ndarray
    etaf: np.ndarray
    R0: np.ndarray
    R: np.ndarray
    alpha0: np.ndarray
    x0_mean: np.ndarray
    x0_cov: np.ndarray
    xi_cov: np.ndarray


@dataclass(frozen=True)
class PiLifted:
    """Pi-lifted blocks shared by every solver.

    Horizontal liftings W_pi = pi (x) W are n x nK (pi as a 1 x K row, so
    W_pi zbar = sum_k pi_k W zbar_k). The congruence blocks act on the
    stacked states: Q0_pi and the eta0_pi offsets on (x0, zbar) of size
    n(K+1); Q_pi and eta_pi on (z_kappa, x0, zbar) of size n(K+2). B0_lift
    and B_lift are the input matrices zero-padded to those stacked sizes.
    """

    F0_pi: np.ndarray
    Gamma0_pi: np.ndarray
    Gamma0f_pi: np.ndarray
    F_pi: np.ndarray
    Gamma2_pi: np.ndarray
    Gamma2f_pi: np.ndarray
    Q0_pi: np.ndarray
    Q0f_pi: np.ndarray
    eta0_pi: np.ndarray
    eta0f_pi: np.ndarray
    Q_pi: np.ndarray
    Qf_pi: np.ndarray
    eta_pi: np.ndarray
    etaf_pi: np.ndarray
    B0_lift: np.ndarray
    B_lift: np.ndarray


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _as_matrix(name: str, value, rows: int, cols: int) -> np.ndarray:
    a = np.asarray(value, dtype=np.float64)
    if a.ndim == 0 and rows == 1 and cols == 1:
        a = a.reshape(1, 1)
    if a.shape != (rows, cols):
        raise DimensionMismatch(f"{name}: expected shape ({rows}, {cols}), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionMismatch(f"{name}: contains non-finite entries")
    return a


def _as_vector(name: str, value, length: int) -> np.ndarray:
    a = np.asarray(value, dtype=np.float64)
    if a.ndim == 0 and length == 1:
        a = a.reshape(1)
    a = a.reshape(-1) if a.ndim == 2 and 1 in a.shape else a
    if a.shape != (length,):
        raise DimensionMismatch(f"{name}: expected length {length}, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionMismatch(f"{name}: contains non-finite entries")
    return a


def _symmetrize_weight(name: str, a: np.ndarray) -> np.ndarray:
    drift = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if drift > SYMMETRY_REPAIR_TOL:
        raise DimensionMismatch(f"{name}: asymmetry {drift:.3e} exceeds repair tolerance")
    return (a + a.T) / 2.0


def _check_psd(name: str, a: np.ndarray) -> None:
    w = np.linalg.eigvalsh(a)
    if w[0] < PSD_EIG_FLOOR:
        raise NotPSD(name, float(w[0]))


def _check_pd(name: str, a: np.ndarray) -> None:
    w = np.linalg.eigvalsh(a)
    if w[0] <= 0.0:
        raise NotPD(name, float(w[0]))


def validate_model(raw: ModelParams) -> ValidatedModel:
    """Check every model invariant and return an immutable canonical form.

    Dimensions must be mutually consistent, the cost weights symmetric PSD
    (tiny asymmetry from file round-trips is repaired), the control weights
    symmetric PD, and pi a strictly positive probability vector.
    """
    n, n1, n2, K = int(raw.n), int(raw.n1), int(raw.n2), int(raw.K)
    if n < 1 or n1 < 1 or n2 < 1:
        raise DimensionMismatch(f"dimensions must be positive: n={n}, n1={n1}, n2={n2}")
    if K < 1:
        raise DimensionMismatch(f"K must be at least 1, got {K}")
    T = float(raw.T)
    rho = float(raw.rho)
    if not (T > 0.0):
        raise DimensionMismatch(f"T must be positive, got {T}")
    if rho < 0.0:
        raise DimensionMismatch(f"rho must be nonnegative, got {rho}")

    pi = _as_vector("pi", raw.pi, K)
    if np.any(pi <= 0.0):
        raise BadPi(f"pi entries must be strictly positive, got {pi.tolist()}")
    if abs(float(pi.sum()) - 1.0) > 1e-12:
        raise BadPi(f"pi must sum to 1 within 1e-12, got sum {pi.sum()!r}")

    A_raw = np.asarray(raw.A, dtype=np.float64)
    if A_raw.ndim == 2 and K == 1:
        A_raw = A_raw.reshape(1, *A_raw.shape)
    if A_raw.ndim == 0 and K == 1 and n == 1:
        A_raw = A_raw.reshape(1, 1, 1)
    if A_raw.shape != (K, n, n):
        raise DimensionMismatch(f"A: expected shape ({K}, {n}, {n}), got {A_raw.shape}")
    if not np.all(np.isfinite(A_raw)):
        raise DimensionMismatch("A: contains non-finite entries")

    mats = {
        "A0": _as_matrix("A0", raw.A0, n, n),
        "B0": _as_matrix("B0", raw.B0, n, n1),
        "F0": _as_matrix("F0", raw.F0, n, n),
        "D0": _as_matrix("D0", raw.D0, n, n2),
        "B": _as_matrix("B", raw.B, n, n1),
        "F": _as_matrix("F", raw.F, n, n),
        "G": _as_matrix("G", raw.G, n, n),
        "D": _as_matrix("D", raw.D, n, n2),
        "Gamma0": _as_matrix("Gamma0", raw.Gamma0, n, n),
        "Gamma0f": _as_matrix("Gamma0f", raw.Gamma0f, n, n),
        "Gamma1": _as_matrix("Gamma1", raw.Gamma1, n, n),
        "Gamma1f": _as_matrix("Gamma1f", raw.Gamma1f, n, n),
        "Gamma2": _as_matrix("Gamma2", raw.Gamma2, n, n),
        "Gamma2f": _as_matrix("Gamma2f", raw.Gamma2f, n, n),
    }
    vecs = {
        "eta0": _as_vector("eta0", raw.eta0, n),
        "eta0f": _as_vector("eta0f", raw.eta0f, n),
        "eta": _as_vector("eta", raw.eta, n),
        "etaf": _as_vector("etaf", raw.etaf, n),
        "alpha0": _as_vector("alpha0", raw.alpha0, n),
        "x0_mean": _as_vector("x0_mean", raw.x0_mean, n),
    }

    psd_weights = {}
    for name, rows in (("Q0", n), ("Q0f", n), ("Q", n), ("Qf", n),
                       ("x0_cov", n), ("xi_cov", n)):
        w = _symmetrize_weight(name, _as_matrix(name, getattr(raw, name), rows, rows))
        _check_psd(name, w)
        psd_weights[name] = w

    pd_weights = {}
    for name in ("R0", "R"):
        w = _symmetrize_weight(name, _as_matrix(name, getattr(raw, name), n1, n1))
        _check_pd(name, w)
        pd_weights[name] = w

    return ValidatedModel(
        n=n, n1=n1, n2=n2, K=K, T=T, rho=rho,
        pi=_freeze(pi),
        A0=_freeze(mats["A0"]), B0=_freeze(mats["B0"]),
        F0=_freeze(mats["F0"]), D0=_freeze(mats["D0"]),
        A=_freeze(A_raw), B=_freeze(mats["B"]), F=_freeze(mats["F"]),
        G=_freeze(mats["G"]), D=_freeze(mats["D"]),
        Q0=_freeze(psd_weights["Q0"]), Q0f=_freeze(psd_weights["Q0f"]),
        Q=_freeze(psd_weights["Q"]), Qf=_freeze(psd_weights["Qf"]),
        Gamma0=_freeze(mats["Gamma0"]), Gamma0f=_freeze(mats["Gamma0f"]),
        Gamma1=_freeze(mats["Gamma1"]), Gamma1f=_freeze(mats["Gamma1f"]),
        Gamma2=_freeze(mats["Gamma2"]), Gamma2f=_freeze(mats["Gamma2f"]),
        eta0=_freeze(vecs["eta0"]), eta0f=_freeze(vecs["eta0f"]),
        eta=_freeze(vecs["eta"]), etaf=_freeze(vecs["etaf"]),
        R0=_freeze(pd_weights["R0"]), R=_freeze(pd_weights["R"]),
        alpha0=_freeze(vecs["alpha0"]), x0_mean=_freeze(vecs["x0_mean"]),
        x0_cov=_freeze(psd_weights["x0_cov"]), xi_cov=_freeze(psd_weights["xi_cov"]),
    )


def _row_kron(pi: np.ndarray, W: np.ndarray) -> np.ndarray:
    # pi as a 1 x K row: the result is [pi_1 W, ..., pi_K W], n x nK
    return np.kron(pi.reshape(1, -1), W)


def _congruence(S: np.ndarray, W: np.ndarray) -> np.ndarray:
    out = S.T @ W @ S
    return (out + out.T) / 2.0


def lift_pi(model: ValidatedModel) -> PiLifted:
    """Build every pi-lifted block from a validated model.

    The selector [I, -Gamma0_pi] maps the stacked (x0, zbar) to the cost
    deviation x0 - Gamma0 sum_k pi_k zbar_k, so the lifted weight is the
    congruence of Q0 by that selector and the lifted offset is its
    transpose applied to Q0 eta0; the minor-side blocks use the selector
    [I, -Gamma1, -Gamma2_pi] on (z_kappa, x0, zbar).
    """
    n, K, n1 = model.n, model.K, model.n1
    I = np.eye(n)

    F0_pi = _row_kron(model.pi, model.F0)
    Gamma0_pi = _row_kron(model.pi, model.Gamma0)
    Gamma0f_pi = _row_kron(model.pi, model.Gamma0f)
    F_pi = _row_kron(model.pi, model.F)
    Gamma2_pi = _row_kron(model.pi, model.Gamma2)
    Gamma2f_pi = _row_kron(model.pi, model.Gamma2f)

    S0 = np.hstack([I, -Gamma0_pi])
    S0f = np.hstack([I, -Gamma0f_pi])
    S1 = np.hstack([I, -model.Gamma1, -Gamma2_pi])
    S1f = np.hstack([I, -model.Gamma1f, -Gamma2f_pi])

    return PiLifted(
        F0_pi=_freeze(F0_pi),
        Gamma0_pi=_freeze(Gamma0_pi),
        Gamma0f_pi=_freeze(Gamma0f_pi),
        F_pi=_freeze(F_pi),
        Gamma2_pi=_freeze(Gamma2_pi),
        Gamma2f_pi=_freeze(Gamma2f_pi),
        Q0_pi=_freeze(_congruence(S0, model.Q0)),
        Q0f_pi=_freeze(_congruence(S0f, model.Q0f)),
        eta0_pi=_freeze(S0.T @ (model.Q0 @ model.eta0)),
        eta0f_pi=_freeze(S0f.T @ (model.Q0f @ model.eta0f)),
        Q_pi=_freeze(_congruence(S1, model.Q)),
        Qf_pi=_freeze(_congruence(S1f, model.Qf)),
        eta_pi=_freeze(S1.T @ (model.Q @ model.eta)),
        etaf_pi=_freeze(S1f.T @ (model.Qf @ model.etaf)),
        B0_lift=_freeze(np.vstack([model.B0, np.zeros((n * K, n1))])),
        B_lift=_freeze(np.vstack([model.B, np.zeros((n * (K + 1), n1))])),
    )


def block_selector(k: int, K: int, n: int) -> np.ndarray:
    """The n x nK selector picking minor-type block k (1-based) of zbar."""
    if not (1 <= k <= K):
        raise IndexOutOfRange(f"block index k={k} outside 1..{K}")
    e = np.zeros((n, n * K))
    e[:, (k - 1) * n:k * n] = np.eye(n)
    return e
