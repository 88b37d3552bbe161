"""Two emitters coupled through a waveguide: parameters, operators and generator.

All rates and detunings are angular (rad/ns, i.e. 2*pi*GHz) and times are
in ns.  The two-emitter Hilbert space uses the ordered basis

    index 0: |gg>,  1: |ge>,  2: |eg>,  3: |ee>

where the first letter is emitter 1.  Density matrices are vectorized
column-major (``order="F"``), so ``vec(A @ rho @ B) = kron(B.T, A) @ vec(rho)``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace

import numpy as np

TWO_PI = 2.0 * math.pi

BASIS_LABELS = ("gg", "ge", "eg", "ee")
GG, GE, EG, EE = range(4)

_SM = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # |g><e| in (g, e)
_I2 = np.eye(2, dtype=complex)

SIGMA_MINUS = (np.kron(_SM, _I2), np.kron(_I2, _SM))
SIGMA_PLUS = tuple(s.conj().T for s in SIGMA_MINUS)
EXCITED_PROJECTOR = tuple(sp @ sm for sp, sm in zip(SIGMA_PLUS, SIGMA_MINUS))

# columns are |gg>, |+>, |->, |ee> expressed in the bare basis
_R2 = 1.0 / math.sqrt(2.0)
COLLECTIVE_U = np.array(
    [
        [1, 0, 0, 0],
        [0, _R2, -_R2, 0],
        [0, _R2, _R2, 0],
        [0, 0, 0, 1],
    ],
    dtype=complex,
)
COLLECTIVE_LABELS = ("gg", "+", "-", "ee")


def ghz(x: float) -> float:
    """Convert an ordinary frequency in GHz to an angular rate in rad/ns."""
    return TWO_PI * x


def ket(label: str) -> np.ndarray:
    """Basis or collective ket by label: gg, ge, eg, ee, + or -."""
    v = np.zeros(4, dtype=complex)
    if label in BASIS_LABELS:
        v[BASIS_LABELS.index(label)] = 1.0
    elif label == "+":
        v[EG] = v[GE] = _R2
    elif label == "-":
        v[EG], v[GE] = _R2, -_R2
    else:
        raise ValueError(f"unknown state label {label!r}")
    return v


def projector(label: str) -> np.ndarray:
    v = ket(label)
    return np.outer(v, v.conj())


@dataclass(frozen=True)
class EmitterParams:
    """One emitter: total decay, waveguide fraction, pure dephasing, laser detuning."""

    total_decay: float
    beta: float = 0.95
    dephasing: float = 0.0
    detuning: float = 0.0

    def __post_init__(self):
        if not (self.total_decay > 0 and math.isfinite(self.total_decay)):
            raise ValueError(f"total_decay must be positive, got {self.total_decay}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not self.dephasing >= 0.0:
            raise ValueError(f"dephasing must be >= 0, got {self.dephasing}")
        if not math.isfinite(self.detuning):
            raise ValueError("detuning must be finite")

    @property
    def waveguide_rate(self) -> float:
        return self.beta * self.total_decay

    @property
    def loss_rate(self) -> float:
        return (1.0 - self.beta) * self.total_decay


@dataclass(frozen=True)
class SystemParams:
    """The emitter pair plus the waveguide coupling phase.

    The inter-emitter detuning is derived from the per-emitter laser
    detunings, ``detuning_split = emitters[0].detuning - emitters[1].detuning``.
    """

    emitters: tuple[EmitterParams, EmitterParams]
    coupling_phase: float = 0.0

    def __post_init__(self):
        if len(self.emitters) != 2:
            raise ValueError("exactly two emitters are supported")
        object.__setattr__(self, "emitters", tuple(self.emitters))
        if not math.isfinite(self.coupling_phase):
            raise ValueError("coupling_phase must be finite")

    @classmethod
    def pair(
        cls,
        gamma1: float,
        gamma2: float | None = None,
        beta1: float = 0.95,
        beta2: float | None = None,
        delta1: float = 0.0,
        delta2: float = 0.0,
        dephasing1: float = 0.0,
        dephasing2: float = 0.0,
        coupling_phase: float = 0.0,
    ) -> "SystemParams":
        gamma2 = gamma1 if gamma2 is None else gamma2
        beta2 = beta1 if beta2 is None else beta2
        return cls(
            (
                EmitterParams(gamma1, beta1, dephasing1, delta1),
                EmitterParams(gamma2, beta2, dephasing2, delta2),
            ),
            coupling_phase,
        )

    @property
    def detuning_split(self) -> float:
        return self.emitters[0].detuning - self.emitters[1].detuning

    @property
    def mean_decay(self) -> float:
        return 0.5 * (self.emitters[0].total_decay + self.emitters[1].total_decay)

    @property
    def cross_amplitude(self) -> float:
        return math.sqrt(self.emitters[0].waveguide_rate * self.emitters[1].waveguide_rate)

    @property
    def dissipative_coupling(self) -> float:
        return self.cross_amplitude * math.cos(self.coupling_phase)

    @property
    def coherent_coupling(self) -> float:
        return 0.5 * self.cross_amplitude * math.sin(self.coupling_phase)

    def waveguide_matrix(self) -> np.ndarray:
        g1 = self.emitters[0].waveguide_rate
        g2 = self.emitters[1].waveguide_rate
        c = self.dissipative_coupling
        return np.array([[g1, c], [c, g2]])

    def with_detunings(self, delta1: float, delta2: float) -> "SystemParams":
        e1, e2 = self.emitters
        return replace(self, emitters=(replace(e1, detuning=delta1), replace(e2, detuning=delta2)))

    def with_split(self, split: float, laser: str = "symmetric") -> "SystemParams":
        """Set the inter-emitter detuning, placing the laser symmetrically or on one emitter."""
        if laser == "symmetric":
            return self.with_detunings(0.5 * split, -0.5 * split)
        if laser == "emitter1":
            return self.with_detunings(0.0, -split)
        if laser == "emitter2":
            return self.with_detunings(split, 0.0)
        raise ValueError(f"unknown laser placement {laser!r}")

    def with_emitter(self, index: int, **changes) -> "SystemParams":
        em = list(self.emitters)
        em[index] = replace(em[index], **changes)
        return replace(self, emitters=tuple(em))


@dataclass(frozen=True)
class Pulse:
    """Gaussian pulse envelope of unit area; the drive scales it by ``area``."""

    center: float = 0.5
    fwhm: float = 0.05
    area: float = math.pi

    def __post_init__(self):
        if not (self.fwhm > 0 and self.area > 0):
            raise ValueError("pulse fwhm and area must be positive")

    @property
    def sigma(self) -> float:
        return self.fwhm / math.sqrt(8.0 * math.log(2.0))

    def envelope(self, t: float) -> float:
        s = self.sigma
        return math.exp(-0.5 * ((t - self.center) / s) ** 2) / (s * math.sqrt(TWO_PI))

    def window(self, width: float = 6.0) -> tuple[float, float]:
        """Interval outside of which the envelope is below ~1e-40 of its peak."""
        half = width * self.fwhm
        return self.center - half, self.center + half


@dataclass(frozen=True)
class DriveConfig:
    """Per-emitter complex Rabi amplitudes, continuous or pulsed.

    In CW mode ``rabi[m]`` is the Rabi frequency ``|Omega_m| exp(i theta_m)``
    in rad/ns.  In pulsed mode ``rabi[m]`` is a dimensionless weight: the
    instantaneous drive is ``rabi[m] * pulse.area * pulse.envelope(t)``, so
    emitter m receives the pulse area ``|rabi[m]| * pulse.area``.
    """

    rabi: tuple[complex, complex] = (0j, 0j)
    pulse: Pulse | None = None

    def __post_init__(self):
        object.__setattr__(self, "rabi", tuple(complex(r) for r in self.rabi))
        if len(self.rabi) != 2:
            raise ValueError("need one Rabi amplitude per emitter")
        if not all(cmath.isfinite(r) for r in self.rabi):
            raise ValueError("Rabi amplitudes must be finite")

    @classmethod
    def cw(cls, omega1: float = 0.0, omega2: float = 0.0, theta1: float = 0.0, theta2: float = 0.0):
        return cls((omega1 * cmath.exp(1j * theta1), omega2 * cmath.exp(1j * theta2)))

    @classmethod
    def pulsed(
        cls,
        area: float,
        weight1: float = 1.0,
        weight2: float = 1.0,
        theta1: float = 0.0,
        theta2: float = 0.0,
        center: float = 0.5,
        fwhm: float = 0.05,
    ):
        return cls(
            (weight1 * cmath.exp(1j * theta1), weight2 * cmath.exp(1j * theta2)),
            Pulse(center=center, fwhm=fwhm, area=area),
        )

    @property
    def mode(self) -> str:
        return "cw" if self.pulse is None else "pulsed"

    @property
    def amplitudes(self) -> tuple[float, float]:
        return tuple(abs(r) for r in self.rabi)

    @property
    def phases(self) -> tuple[float, float]:
        """Drive phases wrapped to [0, 2*pi)."""
        return tuple(cmath.phase(r) % TWO_PI if r != 0 else 0.0 for r in self.rabi)

    def rabi_at(self, t: float) -> tuple[complex, complex]:
        if self.pulse is None:
            return self.rabi
        f = self.pulse.area * self.pulse.envelope(t)
        return tuple(r * f for r in self.rabi)

    def is_zero(self) -> bool:
        return all(r == 0 for r in self.rabi)


NO_DRIVE = DriveConfig()


@dataclass(frozen=True)
class CollectiveRates:
    """Super/subradiant rates; ``splitting`` is complex, its imaginary part an oscillation."""

    gamma_plus: float
    gamma_minus: float
    splitting: complex

    @property
    def oscillation(self) -> float:
        return self.splitting.imag


def collective_rates(sys: SystemParams) -> CollectiveRates:
    g12 = sys.dissipative_coupling
    d12 = sys.detuning_split
    s = cmath.sqrt(complex(g12 * g12 - d12 * d12))
    gbar = sys.mean_decay
    return CollectiveRates(gbar + s.real, gbar - s.real, s)


def build_hamiltonian(sys: SystemParams, drive: DriveConfig = NO_DRIVE, t: float = 0.0) -> np.ndarray:
    """System Hamiltonian in the laser frame (hbar = 1)."""
    sp, sm = SIGMA_PLUS, SIGMA_MINUS
    h = np.zeros((4, 4), dtype=complex)
    for i, em in enumerate(sys.emitters):
        h += em.detuning * EXCITED_PROJECTOR[i]
    h += sys.coherent_coupling * (sp[0] @ sm[1] + sp[1] @ sm[0])
    for m, om in enumerate(drive.rabi_at(t)):
        if om != 0:
            term = 0.5 * om * sp[m]
            h += term + term.conj().T
    return h


@dataclass(frozen=True)
class Dissipator:
    operator: np.ndarray
    rate: float
    kind: str


def build_dissipators(sys: SystemParams, tol: float = 1e-14) -> list[Dissipator]:
    """Collective waveguide channels, independent losses and pure dephasing.

    The waveguide rate matrix is diagonalized; each eigenvector ``v`` with
    eigenvalue ``lam`` gives a jump ``sum_i v_i sigma_i^-`` at rate ``lam``.
    Tiny negative eigenvalues from round-off are clipped to zero.
    """
    out = []
    lam, vecs = np.linalg.eigh(sys.waveguide_matrix())
    for k in np.argsort(lam)[::-1]:
        rate = max(float(lam[k]), 0.0)
        v = vecs[:, k]
        # fix the sign so the dominant component is positive, for reproducible operators
        v = v * np.sign(v[np.argmax(np.abs(v))])
        op = v[0] * SIGMA_MINUS[0] + v[1] * SIGMA_MINUS[1]
        out.append(Dissipator(op, rate if rate > tol * max(1.0, abs(lam).max()) else 0.0, "waveguide"))
    for i, em in enumerate(sys.emitters):
        out.append(Dissipator(SIGMA_MINUS[i].copy(), em.loss_rate, f"loss{i + 1}"))
    for i, em in enumerate(sys.emitters):
        out.append(Dissipator(EXCITED_PROJECTOR[i].copy(), 2.0 * em.dephasing, f"dephasing{i + 1}"))
    return out


def emission_operator(sys: SystemParams) -> np.ndarray:
    """Waveguide field operator ``E = sum_i sqrt(gamma_i^wg) e^{i phi_i} sigma_i^-``."""
    g1 = sys.emitters[0].waveguide_rate
    g2 = sys.emitters[1].waveguide_rate
    return math.sqrt(g1) * SIGMA_MINUS[0] + math.sqrt(g2) * cmath.exp(1j * sys.coupling_phase) * SIGMA_MINUS[1]


def _spre(a):
    return np.kron(np.eye(a.shape[0]), a)


def _spost(a):
    return np.kron(a.T, np.eye(a.shape[0]))


def dissipator_superop(op: np.ndarray) -> np.ndarray:
    ada = op.conj().T @ op
    return np.kron(op.conj(), op) - 0.5 * _spre(ada) - 0.5 * _spost(ada)


def hamiltonian_superop(h: np.ndarray) -> np.ndarray:
    return -1j * (_spre(h) - _spost(h))


def dissipative_superop(sys: SystemParams) -> np.ndarray:
    total = np.zeros((16, 16), dtype=complex)
    for d in build_dissipators(sys):
        if d.rate > 0:
            total += d.rate * dissipator_superop(d.operator)
    return total


def build_liouvillian(sys: SystemParams, drive: DriveConfig = NO_DRIVE, t: float = 0.0) -> np.ndarray:
    return hamiltonian_superop(build_hamiltonian(sys, drive, t)) + dissipative_superop(sys)


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vec`; a 2-D input is treated as a stack of vectors."""
    v = np.asarray(v)
    n = int(round(math.sqrt(v.shape[-1])))
    if v.ndim == 1:
        return v.reshape(n, n, order="F")
    return np.stack([x.reshape(n, n, order="F") for x in v])


def trace_row() -> np.ndarray:
    """Row vector whose product with vec(rho) is Tr(rho)."""
    return vec(np.eye(4)).conj()


def to_collective_basis(rho: np.ndarray) -> np.ndarray:
    """Express rho in the basis (|gg>, |+>, |->, |ee>)."""
    return COLLECTIVE_U.conj().T @ rho @ COLLECTIVE_U


def from_collective_basis(rho: np.ndarray) -> np.ndarray:
    return COLLECTIVE_U @ rho @ COLLECTIVE_U.conj().T


def check_density_matrix(rho: np.ndarray, herm_tol=1e-12, trace_tol=1e-10, eig_tol=1e-10) -> None:
    rho = np.asarray(rho)
    if rho.shape != (4, 4):
        raise ValueError(f"density matrix must be 4x4, got {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > herm_tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > trace_tol:
        raise ValueError(f"density matrix trace {np.trace(rho).real:.3g} != 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -eig_tol:
        raise ValueError("density matrix has negative eigenvalues")


def excited_populations(rho: np.ndarray) -> tuple[float, float]:
    return tuple(float(np.real(np.trace(p @ rho))) for p in EXCITED_PROJECTOR)


def single_excitation_hamiltonian(sys: SystemParams) -> np.ndarray:
    """Non-Hermitian effective Hamiltonian on span(|eg>, |ge>), emitter 1 first.

    Pure dephasing is not representable here and is ignored.
    """
    e1, e2 = sys.emitters
    j = sys.coherent_coupling - 0.5j * sys.dissipative_coupling
    return np.array(
        [
            [e1.detuning - 0.5j * e1.total_decay, j],
            [j, e2.detuning - 0.5j * e2.total_decay],
        ]
    )


def collective_eigenmodes(sys: SystemParams) -> tuple[np.ndarray, np.ndarray]:
    """Population decay rates and normalized eigenmodes of the single-excitation block.

    Returns ``(rates, modes)`` where ``modes[:, k]`` holds the (|eg>, |ge>)
    amplitudes of mode k, sorted by decreasing rate.  At zero detuning and
    equal decay rates these are |+> and |->.
    """
    w, v = np.linalg.eig(single_excitation_hamiltonian(sys))
    rates = -2.0 * w.imag
    order = np.argsort(rates)[::-1]
    v = v[:, order]
    v = v / np.linalg.norm(v, axis=0)
    return rates[order], v


def mode_state(sys: SystemParams, which: str) -> np.ndarray:
    """Density matrix of the super ('+') or subradiant ('-') decay eigenmode."""
    _, modes = collective_eigenmodes(sys)
    amp = modes[:, 0 if which == "+" else 1]
    psi = np.zeros(4, dtype=complex)
    psi[EG], psi[GE] = amp
    # align the global phase so the |eg> amplitude is real positive
    if abs(psi[EG]) > 0:
        psi *= abs(psi[EG]) / psi[EG]
    return np.outer(psi, psi.conj())


__all__ = [
    "BASIS_LABELS",
    "COLLECTIVE_LABELS",
    "CollectiveRates",
    "Dissipator",
    "DriveConfig",
    "EmitterParams",
    "NO_DRIVE",
    "Pulse",
    "SystemParams",
    "build_dissipators",
    "build_hamiltonian",
    "build_liouvillian",
    "check_density_matrix",
    "collective_eigenmodes",
    "collective_rates",
    "emission_operator",
    "excited_populations",
    "from_collective_basis",
    "ghz",
    "ket",
    "mode_state",
    "projector",
    "to_collective_basis",
]
