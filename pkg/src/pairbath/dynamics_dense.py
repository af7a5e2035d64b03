"""Exact conditional evolution of the full bath density matrix.

One measurement round prepares the central spin in alpha|1> + beta|-1>,
lets the joint system evolve for tau, and post-selects the readout that
projects the central spin back onto the same state. Because the joint
propagator is block diagonal in the central spin's z-basis, the surviving
bath update is governed by the non-unitary conditional operator

    V = |alpha|^2 U+ + |beta|^2 U-,    rho' = V rho V^dag / p,
    p = Tr[V rho V^dag]

where U+- are the branch propagators tensored over all spins. Repeating
the round M times and keeping only successful readouts purifies the bath.

Readout dephasing at rate gamma_d acts on the joint state for the readout
duration. Traced back onto the bath it mixes the conditional update with
the two bare branches:

    rho' propto e V rho V^dag
         + (1-e)/2 (|alpha|^2 U+ rho U+^dag + |beta|^2 U- rho U-^dag)

with e = exp(-gamma_d * readout_time). run_protocol uses this reduced
form; dephase() exposes the underlying joint-state channel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ExtinctionError
from .spin_core import CouplingSet, branch_propagators

EXTINCTION_FLOOR = 1e-14

INV_SQRT2 = 1.0 / np.sqrt(2.0)


@dataclass(frozen=True)
class ProtocolConfig:
    """Parameters of one measurement protocol run."""

    omega: float
    tau: float
    measurements: int
    alpha: complex = INV_SQRT2
    beta: complex = INV_SQRT2
    dephasing_rate: float = 0.0
    readout_time: float | None = None  # None: dephasing acts over tau
    extinction_floor: float = EXTINCTION_FLOOR

    def __post_init__(self):
        if self.measurements < 1:
            raise ConfigError(f"measurements must be >= 1, got {self.measurements}")
        norm = abs(self.alpha) ** 2 + abs(self.beta) ** 2
        if abs(norm - 1.0) > 1e-12:
            raise ConfigError(f"|alpha|^2 + |beta|^2 = {norm!r}, must be 1")
        if self.dephasing_rate < 0:
            raise ConfigError(f"dephasing_rate must be >= 0, got {self.dephasing_rate}")

    @property
    def effective_readout_time(self) -> float:
        return self.tau if self.readout_time is None else self.readout_time


@dataclass
class Trajectory:
    """Per-step record of a conditional run plus the final bath state."""

    conditional_p: np.ndarray
    cumulative_p: np.ndarray
    purity: np.ndarray
    final_rho: np.ndarray
    status: str = "completed"          # "completed" | "extinct"
    extinct_step: int | None = None

    @property
    def steps(self) -> int:
        return len(self.conditional_p)


def maximally_mixed(n: int) -> np.ndarray:
    dim = 2**n
    return np.eye(dim, dtype=complex) / dim


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.trace(rho @ rho)))


def build_branch_operators(c: CouplingSet, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Dense U+ and U- on the full bath, as Kronecker chains of the per-spin pairs."""
    up = np.eye(1, dtype=complex)
    um = np.eye(1, dtype=complex)
    for pair in branch_propagators(c, tau):
        up = np.kron(up, pair.u_plus)
        um = np.kron(um, pair.u_minus)
    return up, um


def build_V(c: CouplingSet, tau: float, alpha: complex = INV_SQRT2,
            beta: complex = INV_SQRT2) -> np.ndarray:
    """Conditional operator V = |alpha|^2 U+ + |beta|^2 U-."""
    norm = abs(alpha) ** 2 + abs(beta) ** 2
    if abs(norm - 1.0) > 1e-12:
        raise ConfigError(f"|alpha|^2 + |beta|^2 = {norm!r}, must be 1")
    up, um = build_branch_operators(c, tau)
    return abs(alpha) ** 2 * up + abs(beta) ** 2 * um


def apply_projection(rho: np.ndarray, V: np.ndarray,
                     floor: float = EXTINCTION_FLOOR) -> tuple[np.ndarray, float]:
    """One conditional update: (V rho V^dag / p, p). Raises on extinction."""
    out = V @ rho @ V.conj().T
    p = float(np.real(np.trace(out)))
    if p < floor:
        raise ExtinctionError(probability=p)
    out /= p
    # curb Hermiticity drift from repeated gemms
    out = 0.5 * (out + out.conj().T)
    return out, p


def dephase(rho_joint: np.ndarray, gamma_d: float, t: float) -> np.ndarray:
    """Central-spin dephasing channel on the joint (central x bath) state:

    E(rho) = (1 - e)/2 * 1 (x) Tr_S(rho) + e * rho,   e = exp(-gamma_d t).

    Trace preserving, purity non-increasing; fixed point replaces the
    central spin by its maximally mixed state.
    """
    if gamma_d < 0:
        raise ConfigError(f"gamma_d must be >= 0, got {gamma_d}")
    dim = rho_joint.shape[0]
    if dim % 2 != 0:
        raise ValueError(f"joint state must have even dimension, got {dim}")
    e = np.exp(-gamma_d * t)
    if e == 1.0:
        return rho_joint.copy()
    half = dim // 2
    blocks = rho_joint.reshape(2, half, 2, half)
    bath = blocks[0, :, 0, :] + blocks[1, :, 1, :]  # Tr_S
    out = e * rho_joint
    out[:half, :half] += 0.5 * (1.0 - e) * bath
    out[half:, half:] += 0.5 * (1.0 - e) * bath
    return out


def pair_rdm(rho: np.ndarray, n: int, i: int, j: int) -> np.ndarray:
    """Two-spin reduced density matrix of spins (i, j), basis order (i, j)."""
    if i == j:
        raise ValueError(f"need two distinct spins, got ({i}, {j})")
    t = rho.reshape((2,) * (2 * n))
    rest = [k for k in range(n) if k not in (i, j)]
    perm = [i, j] + rest + [n + i, n + j] + [n + k for k in rest]
    t = t.transpose(perm).reshape(4, 2 ** (n - 2), 4, 2 ** (n - 2))
    out = np.einsum("asbs->ab", t)
    return 0.5 * (out + out.conj().T)


def all_pair_rdms(rho: np.ndarray, n: int) -> dict[tuple[int, int], np.ndarray]:
    rdms = {}
    for i in range(n):
        for j in range(i + 1, n):
            rdms[(i, j)] = pair_rdm(rho, n, i, j)
    return rdms


def run_protocol(rho0: np.ndarray, cfg: ProtocolConfig, c: CouplingSet) -> Trajectory:
    """Evolve rho0 through up to cfg.measurements successful rounds.

    With dephasing off the final state is V^M rho0 V^dag^M normalized and
    the cumulative probability is Tr[V^M rho0 V^dag^M]. With dephasing on,
    each round applies the reduced evolve/dephase/project map derived in
    the module docstring. Extinction ends the trajectory early with
    status "extinct" instead of renormalizing numerical noise.
    """
    up, um = build_branch_operators(c, cfg.tau)
    wa, wb = abs(cfg.alpha) ** 2, abs(cfg.beta) ** 2
    V = wa * up + wb * um
    e = np.exp(-cfg.dephasing_rate * cfg.effective_readout_time)

    rho = np.array(rho0, dtype=complex)
    cond, cum, purs = [], [], []
    cumulative = 1.0
    status, extinct_step = "completed", None
    for step in range(1, cfg.measurements + 1):
        out = V @ rho @ V.conj().T
        p = float(np.real(np.trace(out)))
        if e < 1.0:
            leak = wa * (up @ rho @ up.conj().T) + wb * (um @ rho @ um.conj().T)
            out = e * out + 0.5 * (1.0 - e) * leak
            p = e * p + 0.5 * (1.0 - e)
        if p < cfg.extinction_floor:
            status, extinct_step = "extinct", step
            break
        rho = out / p
        rho = 0.5 * (rho + rho.conj().T)
        cumulative *= p
        cond.append(p)
        cum.append(cumulative)
        purs.append(purity(rho))
    return Trajectory(
        conditional_p=np.array(cond),
        cumulative_p=np.array(cum),
        purity=np.array(purs),
        final_rho=rho,
        status=status,
        extinct_step=extinct_step,
    )
