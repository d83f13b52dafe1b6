"""State representations and stochastic integrators for the monitored qubit.

The conditional qubit state is tracked in three equivalent coordinate systems:

* a 2x2 density matrix ``rho`` driven by the filtering SDE
  ``d rho = -i O [sy/2, rho] dt + (sz rho sz - rho) dt
  + (sz rho + rho sz - 2<sz> rho) dW``,
* Bloch components ``(x, 0, z)`` with
  ``dz = 2(1 - z^2) dW - O x dt`` and ``dx = -2x dt - 2zx dW + O z dt``,
* the scalar linear entropy ``s = 1 - x^2 - z^2`` with
  ``ds = -4s [1 - (1-s) v^2] dt - 4s sqrt(1-s) v dW``

where ``v`` is the directly controlled value of ``cos(theta)`` (the polar
angle of the Bloch vector) and ``W`` is the innovations Wiener process shared
by all three forms.  The measurement record increment is
``dY = 2 z dt + dW``.

Time is measured in units of the inverse measurement rate; all quantities are
dimensionless.  Integration supports Euler-Maruyama and Milstein steps (the
SDEs carry a single noise channel, so Milstein attains strong order one
without Levy areas).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = [
    "Scheme",
    "StepConfig",
    "NoiseStream",
    "DensityMatrix",
    "BlochState",
    "PurityState",
    "StepStats",
    "TrajectoryRecord",
    "drift_s",
    "diffusion_s",
    "diffusion_s_ds",
    "step_s",
    "step_bloch",
    "step_rho",
    "measurement_increment",
    "rho_to_bloch",
    "bloch_to_rho",
    "bloch_to_polar",
    "polar_to_bloch",
    "bloch_to_purity",
    "purity_to_bloch",
    "rho_to_purity",
    "rotate_to_angle",
    "run_trajectory",
]

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)

#: derivative of sqrt(1-s) diverges at s=1; clip before evaluating it
_SQRT_GUARD = 1.0 - 1e-12


class Scheme(enum.Enum):
    EULER = "euler"
    MILSTEIN = "milstein"


@dataclass(frozen=True)
class StepConfig:
    """Time step, integration scheme and boundary policy for all steppers."""

    dt: float
    scheme: Scheme = Scheme.EULER
    boundary: str = "clip"

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if self.boundary != "clip":
            raise DomainError(f"unsupported boundary policy {self.boundary!r}")


class NoiseStream:
    """Reproducible Gaussian increment stream for one trajectory.

    The stream is keyed by ``(seed, index)``: the same pair always reproduces
    the same increment sequence bit for bit, independently of any other
    stream, so trajectories may be simulated in any batching order or on any
    number of workers.
    """

    def __init__(self, seed: int, index: int = 0):
        self.seed = int(seed)
        self.index = int(index)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.index,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def normals(self, n: int) -> np.ndarray:
        """Next ``n`` unit normals."""
        return self._gen.standard_normal(n)

    def increments(self, n: int, dt: float) -> np.ndarray:
        """Next ``n`` Wiener increments, N(0, dt)."""
        return self.normals(n) * np.sqrt(dt)

    def uniforms(self, n: int) -> np.ndarray:
        """Next ``n`` uniforms on [0, 1); used by bridge crossing detection."""
        return self._gen.random(n)


@dataclass
class StepStats:
    """Mutable counters threaded through steppers that repair states."""

    positivity_repairs: int = 0
    norm_clips: int = 0


@dataclass(frozen=True)
class DensityMatrix:
    """2x2 Hermitian, unit-trace, positive-semidefinite conditional state."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (2, 2):
            raise DomainError(f"density matrix must be 2x2, got shape {m.shape}")
        object.__setattr__(self, "matrix", m)

    def validate(self, tol: float = 1e-9) -> None:
        m = self.matrix
        if np.max(np.abs(m - m.conj().T)) > tol:
            raise DomainError("density matrix is not Hermitian within tolerance")
        if abs(np.trace(m).real - 1.0) > tol or abs(np.trace(m).imag) > tol:
            raise DomainError("density matrix trace differs from 1")
        if np.min(np.linalg.eigvalsh(m)) < -tol:
            raise DomainError("density matrix has a negative eigenvalue")

    def expect_z(self) -> float:
        return float(np.trace(SIGMA_Z @ self.matrix).real)


@dataclass(frozen=True)
class BlochState:
    """Bloch vector components; the monitored model keeps y = 0 exactly."""

    x: float
    y: float
    z: float

    def validate(self, tol: float = 1e-9) -> None:
        if self.norm() > 1.0 + tol:
            raise DomainError(f"Bloch norm {self.norm()} exceeds 1")

    def norm(self) -> float:
        return float(np.sqrt(self.x**2 + self.y**2 + self.z**2))


@dataclass(frozen=True)
class PurityState:
    """Scalar linear entropy s = 1 - (x^2 + z^2), with the trajectory clock."""

    s: float
    t: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.s <= 1.0:
            raise DomainError(f"linear entropy must lie in [0, 1], got {self.s}")


def _require_control(v) -> None:
    if np.any(np.abs(v) > 1.0):
        raise DomainError(f"control value must lie in [-1, 1], got {v}")


def _require_entropy(s) -> None:
    if np.any((np.asarray(s) < 0.0) | (np.asarray(s) > 1.0)):
        raise DomainError(f"linear entropy must lie in [0, 1], got {s}")


def drift_s(s, v):
    """Drift of the linear-entropy SDE: ``-4 s [1 - (1-s) v^2]``.

    Accepts scalars or same-shape arrays.  With ``v = 0`` this reduces to
    ``-4 s``, whose flow is the deterministic decay ``s0 * exp(-4 t)``.
    """
    _require_entropy(s)
    _require_control(v)
    s = np.asarray(s, dtype=float)
    return -4.0 * s * (1.0 - (1.0 - s) * np.square(v))


def diffusion_s(s, v):
    """Diffusion of the linear-entropy SDE: ``-4 s sqrt(1-s) v``."""
    _require_entropy(s)
    _require_control(v)
    s = np.asarray(s, dtype=float)
    return -4.0 * s * np.sqrt(1.0 - s) * np.asarray(v, dtype=float)


def diffusion_s_ds(s, v):
    """Analytic ``d/ds`` of :func:`diffusion_s`, ``-2 v (2 - 3s)/sqrt(1-s)``.

    The derivative alone diverges at s = 1 although the Milstein product
    ``b * db/ds`` stays finite there; s is clipped to ``1 - 1e-12`` so the
    one-sided limit is used.
    """
    s = np.minimum(np.asarray(s, dtype=float), _SQRT_GUARD)
    return -2.0 * np.asarray(v, dtype=float) * (2.0 - 3.0 * s) / np.sqrt(1.0 - s)


def step_s(state: PurityState, v: float, dW: float, cfg: StepConfig) -> PurityState:
    """Advance the linear entropy by one dt under control ``v``.

    Milstein adds ``0.5 * b * (db/ds) * (dW^2 - dt)``; with ``v = 0`` the
    correction vanishes and the step coincides with Euler.  The result is
    clipped back into [0, 1]; s = 0 is absorbing (drift and diffusion vanish).
    """
    if not np.isfinite(dW):
        raise DomainError(f"noise increment must be finite, got {dW}")
    s = state.s
    ds = drift_s(s, v) * cfg.dt + diffusion_s(s, v) * dW
    if cfg.scheme is Scheme.MILSTEIN:
        b = diffusion_s(s, v)
        ds += 0.5 * b * diffusion_s_ds(s, v) * (dW * dW - cfg.dt)
    s_new = float(np.clip(s + ds, 0.0, 1.0))
    return PurityState(s=s_new, t=state.t + cfg.dt)


def step_bloch(
    state: BlochState,
    omega: float,
    dW: float,
    cfg: StepConfig,
    stats: StepStats | None = None,
) -> BlochState:
    """Advance the Bloch components (x, z) by one dt at rotation rate omega.

    The y component must be zero on entry and stays zero.  If the step pushes
    the vector outside the unit ball it is rescaled onto it.
    """
    if state.y != 0.0:
        raise DomainError("step_bloch requires y = 0")
    if not np.isfinite(dW):
        raise DomainError(f"noise increment must be finite, got {dW}")
    x, z, dt = state.x, state.z, cfg.dt
    dz = 2.0 * (1.0 - z * z) * dW - omega * x * dt
    dx = -2.0 * x * dt - 2.0 * z * x * dW + omega * z * dt
    if cfg.scheme is Scheme.MILSTEIN:
        dx += 2.0 * x * (2.0 * z * z - 1.0) * (dW * dW - dt)
        dz += -4.0 * z * (1.0 - z * z) * (dW * dW - dt)
    x_new, z_new = x + dx, z + dz
    norm = np.hypot(x_new, z_new)
    if norm > 1.0:
        x_new, z_new = x_new / norm, z_new / norm
        if stats is not None:
            stats.norm_clips += 1
    return BlochState(x=x_new, y=0.0, z=z_new)


def _rho_drift(rho: np.ndarray, omega: float) -> np.ndarray:
    commutator = SIGMA_Y @ rho - rho @ SIGMA_Y
    return -0.5j * omega * commutator + SIGMA_Z @ rho @ SIGMA_Z - rho


def _rho_diffusion(rho: np.ndarray) -> np.ndarray:
    mean_z = np.trace(SIGMA_Z @ rho).real
    return SIGMA_Z @ rho + rho @ SIGMA_Z - 2.0 * mean_z * rho


def _rho_diffusion_derivative(rho: np.ndarray, h: np.ndarray) -> np.ndarray:
    # directional derivative of the diffusion coefficient at rho along h
    mean_z = np.trace(SIGMA_Z @ rho).real
    mean_zh = np.trace(SIGMA_Z @ h).real
    return SIGMA_Z @ h + h @ SIGMA_Z - 2.0 * mean_zh * rho - 2.0 * mean_z * h


def step_rho(
    rho: DensityMatrix,
    omega: float,
    dW: float,
    cfg: StepConfig,
    stats: StepStats | None = None,
) -> DensityMatrix:
    """Advance the density matrix by one dt of the filtering SDE.

    After the raw increment the state is symmetrized and renormalized; if an
    eigenvalue dips below ``-10 * eps`` it is clipped to zero and the matrix
    renormalized (explicit Euler increments of the filtering SDE are not
    completely positive).  Repairs are counted in ``stats`` when provided.
    """
    if not np.isfinite(dW):
        raise DomainError(f"noise increment must be finite, got {dW}")
    m = rho.matrix
    dm = _rho_drift(m, omega) * cfg.dt + _rho_diffusion(m) * dW
    if cfg.scheme is Scheme.MILSTEIN:
        b = _rho_diffusion(m)
        dm += 0.5 * _rho_diffusion_derivative(m, b) * (dW * dW - cfg.dt)
    m_new = m + dm
    m_new = 0.5 * (m_new + m_new.conj().T)
    m_new = m_new / np.trace(m_new).real
    eigvals, eigvecs = np.linalg.eigh(m_new)
    if eigvals[0] < -10.0 * np.finfo(float).eps:
        eigvals = np.clip(eigvals, 0.0, None)
        m_new = (eigvecs * eigvals) @ eigvecs.conj().T
        m_new = m_new / np.trace(m_new).real
        if stats is not None:
            stats.positivity_repairs += 1
    return DensityMatrix(matrix=m_new)


def measurement_increment(z, dW, dt):
    """Measurement-record increment ``dY = 2 z dt + dW``."""
    if np.any(np.abs(z) > 1.0):
        raise DomainError(f"z component must lie in [-1, 1], got {z}")
    return 2.0 * np.asarray(z, dtype=float) * dt + dW


# ---------------------------------------------------------------------------
# conversions between representations


def rho_to_bloch(rho: DensityMatrix) -> BlochState:
    m = rho.matrix
    return BlochState(
        x=float(np.trace(SIGMA_X @ m).real),
        y=float(np.trace(SIGMA_Y @ m).real),
        z=float(np.trace(SIGMA_Z @ m).real),
    )


def bloch_to_rho(state: BlochState) -> DensityMatrix:
    m = 0.5 * (IDENTITY + state.x * SIGMA_X + state.y * SIGMA_Y + state.z * SIGMA_Z)
    return DensityMatrix(matrix=m)


def bloch_to_polar(state: BlochState) -> tuple[float, float]:
    """Return (R, theta) with z = R cos(theta), x = R sin(theta).

    theta is defined as 0 at the origin (R = 0), where the angle is otherwise
    meaningless; the scalar dynamics do not depend on it there.
    """
    if state.y != 0.0:
        raise DomainError("polar coordinates require y = 0")
    radius = np.hypot(state.x, state.z)
    theta = float(np.arctan2(state.x, state.z)) if radius > 0.0 else 0.0
    return float(radius), theta


def polar_to_bloch(radius: float, theta: float) -> BlochState:
    if radius < 0.0 or radius > 1.0 + 1e-12:
        raise DomainError(f"Bloch radius must lie in [0, 1], got {radius}")
    return BlochState(x=radius * np.sin(theta), y=0.0, z=radius * np.cos(theta))


def bloch_to_purity(state: BlochState, t: float = 0.0) -> PurityState:
    """Linear entropy of a Bloch vector; drops the angle (lossy direction)."""
    r2 = state.x**2 + state.y**2 + state.z**2
    if r2 > 1.0 + 1e-9:
        raise DomainError(f"Bloch norm {np.sqrt(r2)} exceeds 1")
    return PurityState(s=float(np.clip(1.0 - r2, 0.0, 1.0)), t=t)


def purity_to_bloch(state: PurityState, theta: float) -> BlochState:
    return polar_to_bloch(np.sqrt(1.0 - state.s), theta)


def rho_to_purity(rho: DensityMatrix, t: float = 0.0) -> PurityState:
    return bloch_to_purity(rho_to_bloch(rho), t=t)


def rotate_to_angle(state: BlochState, theta_target: float) -> BlochState:
    """Instantaneously rotate the Bloch vector to a target polar angle.

    Models the idealized infinitely strong control field: the radius (hence
    the linear entropy) is preserved exactly while theta is set to the target.
    The origin maps to itself.
    """
    if state.y != 0.0:
        raise DomainError("rotate_to_angle requires y = 0")
    radius = np.hypot(state.x, state.z)
    return BlochState(
        x=radius * np.sin(theta_target), y=0.0, z=radius * np.cos(theta_target)
    )


# ---------------------------------------------------------------------------
# single-trajectory reference runner


@dataclass
class TrajectoryRecord:
    """Per-step samples of one scalar trajectory.

    Row ``j`` holds the state at the start of step ``j`` together with the
    control, the noise increment and the measurement-record increment applied
    during that step.  ``terminal`` is the state after the last step;
    ``hitting_time`` is set when a threshold crossing stopped the run.
    """

    t: np.ndarray
    s: np.ndarray
    v: np.ndarray
    dW: np.ndarray
    dY: np.ndarray
    terminal: PurityState
    hitting_time: float | None = None
    dt: float = field(default=0.0)

    def validate(self, tol: float = 1e-9) -> None:
        if np.any(np.diff(self.t) <= 0):
            raise DomainError("trajectory times must be strictly increasing")
        z = np.sqrt(1.0 - self.s) * self.v
        expected = 2.0 * z * self.dt + self.dW
        if np.max(np.abs(self.dY - expected), initial=0.0) > tol:
            raise DomainError("dY inconsistent with stored state and dW")

    def to_csv(self, path) -> None:
        """Write rows as ``t,s,v,dW,dY`` with 17 significant digits."""
        rows = np.column_stack([self.t, self.s, self.v, self.dW, self.dY])
        np.savetxt(path, rows, fmt="%.17g", delimiter=",", header="t,s,v,dW,dY",
                   comments="")


def run_trajectory(
    strategy,
    s0: float,
    cfg: StepConfig,
    stream: NoiseStream,
    t_final: float | None = None,
    threshold: float | None = None,
    max_time: float | None = None,
) -> TrajectoryRecord:
    """Integrate one scalar trajectory under a feedback strategy.

    Runs to ``t_final``, or until the entropy first reaches ``threshold``
    (crossing time located by linear interpolation of the bracketing step,
    capped at ``max_time``).  This is the plain reference integrator; the
    ensemble code in :mod:`qpurify.montecarlo` vectorizes the same stepping.
    """
    _require_entropy(s0)
    if (t_final is None) == (threshold is None):
        raise DomainError("specify exactly one of t_final or threshold")
    horizon = t_final if t_final is not None else max_time
    if horizon is None:
        raise DomainError("threshold runs need max_time")
    n_steps = int(round(horizon / cfg.dt))
    dWs = stream.increments(n_steps, cfg.dt)

    ts = np.empty(n_steps)
    ss = np.empty(n_steps)
    vs = np.empty(n_steps)
    dYs = np.empty(n_steps)
    state = PurityState(s=float(s0), t=0.0)
    hitting_time = None
    n_used = 0
    for j in range(n_steps):
        v = float(strategy.evaluate(state.t, state.s))
        z = np.sqrt(1.0 - state.s) * v
        ts[j], ss[j], vs[j] = state.t, state.s, v
        dYs[j] = measurement_increment(z, dWs[j], cfg.dt)
        new_state = step_s(state, v, dWs[j], cfg)
        n_used = j + 1
        if threshold is not None and new_state.s <= threshold < state.s:
            frac = (state.s - threshold) / (state.s - new_state.s)
            hitting_time = state.t + frac * cfg.dt
            state = new_state
            break
        state = new_state
    if threshold is not None and s0 <= threshold:
        hitting_time = 0.0
        n_used = 0
    return TrajectoryRecord(
        t=ts[:n_used],
        s=ss[:n_used],
        v=vs[:n_used],
        dW=dWs[:n_used],
        dY=dYs[:n_used],
        terminal=state if n_used or threshold is None else PurityState(s=float(s0)),
        hitting_time=hitting_time,
        dt=cfg.dt,
    )
