"""Rotating-frame Lindblad models for driven ladder systems.

Conventions
-----------
Angular frequencies are in rad/s and times in seconds. Density matrices are
vectorized row-major, ``vec(rho)[i*n + j] = rho[i, j]``. Each level carries a
*rung*: ground is rung 0 and every drive couples a level on rung ``r`` to a
level on rung ``r + 1``. A drive's ``detuning`` is the detuning of the field
along the rung direction, so the frame detuning of the upper level is the
lower level's plus the drive's. When the RF photon is emitted (the upper rung
lies lower in energy) the caller passes the detuning and phase with that sign
convention. Closed loops are allowed provided their detunings close.

The rotating-wave Hamiltonian is ``H = -sum_k D_k |k><k| + sum_drives
(Omega e^{i phi}/2 |u><l| + h.c.)`` with ``D_k`` the cumulative detuning.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .errors import IntegrationError, ModelError, NonConvergenceError

OPTICAL_ROLES = ("probe", "coupler", "sideband")
ROLES = OPTICAL_ROLES + ("rf",)


# --------------------------------------------------------------------------
# envelopes

class Envelope:
    """Time envelope in [0, 1] multiplying a drive's Rabi frequency."""

    breakpoints: tuple = ()

    def __call__(self, t):
        raise NotImplementedError

    def constant_value(self, t0: float, t1: float):
        """Value of the envelope if it is constant on [t0, t1], else None."""
        return None


@dataclass(frozen=True)
class Constant(Envelope):
    level: float = 1.0

    def __post_init__(self):
        if abs(self.level) > 1:
            raise ModelError("envelope magnitude must not exceed 1")

    @property
    def breakpoints(self):
        return ()

    def __call__(self, t):
        return np.full(np.shape(t), self.level) if np.ndim(t) else self.level

    def constant_value(self, t0, t1):
        return self.level


CW = Constant(1.0)
OFF = Constant(0.0)


def nominal_level(envelope: Envelope) -> float:
    """Level used when no time is given: the constant value, else full amplitude."""
    v = envelope.constant_value(-math.inf, math.inf)
    return 1.0 if v is None else float(v)


@dataclass(frozen=True)
class SquarePulse(Envelope):
    """Pulse switched on at ``on`` and off at ``off`` with linear ramps.

    ``rise`` is the full 0-100 % ramp duration; ``fall`` defaults to ``rise``.
    """
    on: float
    off: float
    rise: float = 10e-9
    fall: float | None = None
    level: float = 1.0

    def __post_init__(self):
        if not self.on < self.off:
            raise ModelError(f"pulse on time {self.on} must precede off time {self.off}")
        if self.rise < 0 or (self.fall is not None and self.fall < 0):
            raise ModelError("rise/fall times must be non-negative")
        if abs(self.level) > 1:
            raise ModelError("envelope magnitude must not exceed 1")
        if self.on + self.rise > self.off:
            raise ModelError("rise time longer than the pulse")

    @property
    def _fall(self):
        return self.rise if self.fall is None else self.fall

    @property
    def breakpoints(self):
        pts = {self.on, self.on + self.rise, self.off, self.off + self._fall}
        return tuple(sorted(pts))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        up = (np.clip((t - self.on) / self.rise, 0.0, 1.0) if self.rise > 0
              else (t >= self.on).astype(float))
        down = (np.clip(1.0 - (t - self.off) / self._fall, 0.0, 1.0) if self._fall > 0
                else (t < self.off).astype(float))
        out = self.level * np.minimum(up, down)
        return float(out) if out.ndim == 0 else out

    def constant_value(self, t0, t1):
        a, b, c, d = self.on, self.on + self.rise, self.off, self.off + self._fall
        if t1 <= a or t0 >= d:
            return 0.0
        if t0 >= b and t1 <= c:
            return self.level
        return None


@dataclass(frozen=True)
class FunctionEnvelope(Envelope):
    """Arbitrary envelope given by a vectorized callable with values in [-1, 1]."""
    func: Callable = field(compare=False)
    breakpoints: tuple = ()

    def __call__(self, t):
        return self.func(t)


@dataclass(frozen=True)
class HoldEnvelope(Envelope):
    """Zero-order hold: ``values[k]`` on ``[times[k], times[k+1])``.

    The first value also applies before ``times[0]`` and the last one after
    ``times[-1]``.
    """
    times: tuple
    values: tuple

    def __post_init__(self):
        if len(self.times) != len(self.values) or len(self.times) < 1:
            raise ModelError("hold envelope needs equal-length, non-empty times and values")
        if np.any(np.diff(self.times) <= 0):
            raise ModelError("hold envelope times must be strictly increasing")
        if np.max(np.abs(self.values)) > 1 + 1e-12:
            raise ModelError("envelope magnitude must not exceed 1")

    @property
    def breakpoints(self):
        return tuple(self.times)

    def _index(self, t):
        return np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 1)

    def __call__(self, t):
        out = np.asarray(self.values)[self._index(np.asarray(t, dtype=float))]
        return float(out) if np.ndim(out) == 0 else out

    def constant_value(self, t0, t1):
        k0, k1 = self._index(t0), self._index(np.nextafter(t1, -np.inf))
        return float(self.values[k0]) if k0 == k1 else None


# --------------------------------------------------------------------------
# model description

@dataclass(frozen=True)
class DriveField:
    """A coherent drive coupling ``lower`` to ``upper`` (level labels).

    ``rabi`` may be complex; the coupling is ``rabi * exp(1j*phase) * envelope(t)``.
    """
    lower: str
    upper: str
    rabi: complex
    detuning: float = 0.0
    phase: float = 0.0
    envelope: Envelope = CW
    role: str = "probe"
    name: str = ""

    def __post_init__(self):
        if self.role not in ROLES:
            raise ModelError(f"unknown drive role {self.role!r}; expected one of {ROLES}")

    @property
    def optical(self) -> bool:
        return self.role in OPTICAL_ROLES

    @property
    def label(self) -> str:
        return self.name or self.role

    def coupling(self) -> complex:
        return complex(self.rabi) * np.exp(1j * self.phase)

    def with_(self, **changes) -> "DriveField":
        return replace(self, **changes)


@dataclass(frozen=True)
class LadderSystem:
    """Levels (ground first), decay channels and per-level pure dephasing.

    ``decays`` holds ``(upper, lower, rate)`` tuples (rad/s, population decay).
    ``dephasing`` maps a level label to a rate gamma (rad/s) by which every
    coherence involving that level decays in addition to the decay terms.
    """
    labels: tuple
    rungs: tuple = None
    decays: tuple = ()
    dephasing: tuple = ()

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if len(set(labels)) != len(labels):
            raise ModelError("duplicate level labels")
        if not 2 <= len(labels) <= 5:
            raise ModelError("supported systems have 2 to 5 levels")
        rungs = tuple(range(len(labels))) if self.rungs is None else tuple(self.rungs)
        if len(rungs) != len(labels) or rungs[0] != 0:
            raise ModelError("rungs must list one entry per level, ground on rung 0")
        object.__setattr__(self, "rungs", rungs)
        decays = tuple((u, l, float(r)) for u, l, r in self.decays)
        deph = tuple((k, float(r)) for k, r in (self.dephasing.items()
                     if isinstance(self.dephasing, dict) else self.dephasing))
        for u, l, r in decays:
            self.index(u), self.index(l)
            if r < 0:
                raise ModelError(f"negative decay rate {u}->{l}")
        for k, r in deph:
            self.index(k)
            if r < 0:
                raise ModelError(f"negative dephasing rate on {k}")
        object.__setattr__(self, "decays", decays)
        object.__setattr__(self, "dephasing", deph)

    @property
    def n(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ModelError(f"unknown level {label!r}") from None

    @classmethod
    def ladder(cls, labels, decays=(), dephasing=()):
        return cls(tuple(labels), None, decays, dephasing)


def three_level(gamma_e: float, gamma_r: float = 0.0, dephasing_r: float = 0.0,
                labels=("g", "e", "r")) -> LadderSystem:
    """Ground-intermediate-Rydberg ladder; Rydberg decay goes to ground."""
    g, e, r = labels
    decays = [(e, g, gamma_e)]
    if gamma_r:
        decays.append((r, g, gamma_r))
    return LadderSystem.ladder(labels, decays, [(r, dephasing_r)] if dephasing_r else ())


def four_level(gamma_e: float, gamma_r: float = 0.0, dephasing_r: float = 0.0,
               labels=("g", "e", "r", "r2")) -> LadderSystem:
    """Three-level ladder plus an RF-coupled second Rydberg level."""
    g, e, r, r2 = labels
    decays = [(e, g, gamma_e)]
    deph = []
    if gamma_r:
        decays += [(r, g, gamma_r), (r2, g, gamma_r)]
    if dephasing_r:
        deph = [(r, dephasing_r), (r2, dephasing_r)]
    return LadderSystem.ladder(labels, decays, deph)


def optical_drives(drives: Sequence[DriveField]) -> list[DriveField]:
    return [d for d in drives if d.optical]


def detuning_matrix(system: LadderSystem, drives: Sequence[DriveField]) -> np.ndarray:
    """Matrix ``M`` with cumulative level detunings ``D = M @ drive_detunings``.

    Validates the drive graph: rung adjacency, no duplicate edges, and closure
    of any loop (checked with the drives' nominal detunings).
    """
    n = system.n
    edges = []
    seen = set()
    for k, d in enumerate(drives):
        lo, up = system.index(d.lower), system.index(d.upper)
        if system.rungs[up] != system.rungs[lo] + 1:
            raise ModelError(
                f"drive {d.label!r} couples non-adjacent pair {d.lower}->{d.upper} "
                f"(rungs {system.rungs[lo]}->{system.rungs[up]})")
        if (lo, up) in seen:
            raise ModelError(f"duplicate drive on {d.lower}->{d.upper}")
        seen.add((lo, up))
        edges.append((lo, up, k))
    adj = {i: [] for i in range(n)}
    for lo, up, k in edges:
        adj[lo].append((up, k, +1))
        adj[up].append((lo, k, -1))
    M = np.zeros((n, len(drives)))
    visited = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j, k, s in adj[i]:
            row = M[i].copy()
            row[k] += s
            if j not in visited:
                M[j] = row
                visited.add(j)
                queue.append(j)
            elif not np.array_equal(row, M[j]):
                nominal = np.array([d.detuning for d in drives])
                scale = max(1.0, np.abs(nominal).max())
                if abs((row - M[j]) @ nominal) > 1e-9 * scale:
                    raise ModelError("drive loop detunings do not close")
    return M


def _full_offsets(drives, offsets):
    """Expand per-optical-drive offsets (..., n_opt) to per-drive (..., n_drives)."""
    n_opt = sum(d.optical for d in drives)
    if offsets is None:
        return np.zeros(len(drives))
    offsets = np.asarray(offsets, dtype=float)
    if offsets.shape[-1] != n_opt:
        raise ModelError(f"expected {n_opt} optical offsets, got {offsets.shape[-1]}")
    out = np.zeros(offsets.shape[:-1] + (len(drives),))
    out[..., [k for k, d in enumerate(drives) if d.optical]] = offsets
    return out


def level_detunings(system, drives, offsets=None) -> np.ndarray:
    """Cumulative frame detunings of every level, shape ``(..., n)``."""
    M = detuning_matrix(system, drives)
    det = np.array([d.detuning for d in drives], dtype=float) + _full_offsets(drives, offsets)
    return det @ M.T


def coupling_matrix(system, drives, t=None) -> np.ndarray:
    """Off-diagonal part of the Hamiltonian (rad/s), envelopes evaluated at ``t``."""
    V = np.zeros((system.n, system.n), dtype=complex)
    for d in drives:
        lo, up = system.index(d.lower), system.index(d.upper)
        c = d.coupling() / 2 * (nominal_level(d.envelope) if t is None else d.envelope(t))
        V[up, lo] += c
        V[lo, up] += np.conj(c)
    return V


def build_hamiltonian(system, drives, velocity_detuning_offsets=None, t=None) -> np.ndarray:
    """Rotating-wave Hamiltonian in rad/s.

    ``velocity_detuning_offsets`` holds one detuning offset per optical drive
    (in drive order); leading batch dimensions are broadcast.
    """
    D = level_detunings(system, drives, velocity_detuning_offsets)
    V = coupling_matrix(system, drives, t)
    H = np.zeros(D.shape[:-1] + (system.n, system.n), dtype=complex)
    idx = np.arange(system.n)
    H[..., idx, idx] = -D
    return H + V


# --------------------------------------------------------------------------
# superoperators

def commutator_superop(H: np.ndarray) -> np.ndarray:
    """Superoperator of ``rho -> -i[H, rho]`` (row-major vectorization)."""
    n = H.shape[-1]
    eye = np.eye(n)
    return -1j * (np.kron(H, eye) - np.kron(eye, H.T))


def dissipator(system: LadderSystem) -> np.ndarray:
    n = system.n
    eye = np.eye(n)
    out = np.zeros((n * n, n * n), dtype=complex)

    def add(c):
        cdc = c.conj().T @ c
        out[:] += np.kron(c, c.conj()) - 0.5 * (np.kron(cdc, eye) + np.kron(eye, cdc.T))

    for u, l, rate in system.decays:
        if rate > 0:
            c = np.zeros((n, n))
            c[system.index(l), system.index(u)] = np.sqrt(rate)
            add(c)
    for k, rate in system.dephasing:
        if rate > 0:
            c = np.zeros((n, n))
            c[system.index(k), system.index(k)] = np.sqrt(2 * rate)
            add(c)
    return out


def _diag_superop(D: np.ndarray) -> np.ndarray:
    """Diagonal of the commutator superop for ``H = -diag(D)``: ``i(D_i - D_j)``."""
    return 1j * (D[..., :, None] - D[..., None, :]).reshape(D.shape[:-1] + (-1,))


class Generator:
    """Lindblad generator split as ``L(t) = L_fixed + sum_d env_d(t) C_d``.

    ``L_fixed`` contains the dissipator and the (possibly batched) detuning
    diagonal; ``C_d`` are the per-drive coupling superoperators at full
    amplitude. Batch dimensions come from the offsets.
    """

    def __init__(self, system, drives, offsets=None):
        self.system = system
        self.drives = list(drives)
        n = system.n
        self.n = n
        D = level_detunings(system, self.drives, offsets)
        self.batch_shape = D.shape[:-1]
        self.diag = _diag_superop(D)
        self.dissipator = dissipator(system)
        self.couplings = [commutator_superop(coupling_matrix(system, [d.with_(envelope=CW)]))
                          for d in self.drives]
        self.envelopes = [d.envelope for d in self.drives]

    @property
    def breakpoints(self):
        return sorted({b for e in self.envelopes for b in e.breakpoints})

    def envelope_values(self, t):
        return [float(e(t)) for e in self.envelopes]

    def static(self, levels=None) -> np.ndarray:
        """Generator with envelopes frozen at ``levels`` (default: nominal levels)."""
        levels = [nominal_level(e) for e in self.envelopes] if levels is None else levels
        L = self.dissipator.copy()
        for a, C in zip(levels, self.couplings):
            if a:
                L = L + a * C
        L = np.broadcast_to(L, self.batch_shape + L.shape).copy()
        idx = np.arange(self.n * self.n)
        L[..., idx, idx] += self.diag
        return L

    def at(self, t) -> np.ndarray:
        return self.static(self.envelope_values(t))

    def rhs_factory(self):
        """Vectorized RHS for flattened batched states."""
        L0 = self.dissipator
        Cs = self.couplings
        envs = self.envelopes
        diag = self.diag.reshape(-1, self.n * self.n)
        m = self.n * self.n

        def rhs(t, y):
            Y = y.reshape(-1, m)
            out = Y @ L0.T + diag * Y
            for e, C in zip(envs, Cs):
                a = float(e(t))
                if a:
                    out += a * (Y @ C.T)
            return out.ravel()

        return rhs


def liouvillian(system, drives, velocity_offsets=None, t=None) -> np.ndarray:
    """Full Lindblad superoperator (batched over leading offset dimensions)."""
    g = Generator(system, drives, velocity_offsets)
    return g.static() if t is None else g.at(t)


# --------------------------------------------------------------------------
# steady state

def _trace_row(n):
    row = np.zeros(n * n)
    row[np.arange(n) * (n + 1)] = 1.0
    return row


def _check_unique(L: np.ndarray, n: int):
    s = np.linalg.svd(L, compute_uv=False)
    if s[-2] <= 1e-12 * s[0]:
        raise NonConvergenceError(
            "Liouvillian has a degenerate null space; no unique steady state "
            "(add decay channels)")


def steady_state_from_liouvillian(L: np.ndarray, n: int, check=True) -> np.ndarray:
    """Null vector of ``L`` with unit trace, for a batch ``(..., n^2, n^2)``."""
    batch = L.shape[:-2]
    A = L.reshape((-1, n * n, n * n)).copy()
    if check:
        _check_unique(A[0], n)
    A[:, 0, :] = _trace_row(n)
    b = np.zeros((A.shape[0], n * n, 1), dtype=complex)
    b[:, 0, 0] = 1.0
    try:
        x = np.linalg.solve(A, b)[..., 0]
    except np.linalg.LinAlgError as exc:
        raise NonConvergenceError(f"steady-state solve failed: {exc}") from None
    if not np.all(np.isfinite(x)):
        raise NonConvergenceError("steady-state solve produced non-finite values")
    if check:
        Lr = L.reshape((-1, n * n, n * n))
        res = np.linalg.norm(np.einsum("bij,bj->bi", Lr, x), axis=-1)
        scale = np.linalg.norm(Lr, axis=(-2, -1))
        if np.any(res > 1e-10 * scale):
            raise NonConvergenceError(
                f"steady-state residual {res.max():.3e} exceeds tolerance")
    rho = x.reshape(batch + (n, n))
    return 0.5 * (rho + np.conj(np.swapaxes(rho, -1, -2)))


def steady_state(system, drives, velocity_offsets=None, check=True) -> np.ndarray:
    """Stationary density matrix ``rho`` with ``L(rho) = 0`` and unit trace.

    Raises :class:`NonConvergenceError` when the system has no decay or the
    stationary state is not unique.
    """
    if not any(r > 0 for _, _, r in system.decays):
        raise NonConvergenceError("system has no decay channel; steady state undefined")
    L = liouvillian(system, drives, velocity_offsets)
    return steady_state_from_liouvillian(L, system.n, check=check)


def ground_state(n: int) -> np.ndarray:
    rho = np.zeros((n, n), dtype=complex)
    rho[0, 0] = 1.0
    return rho


# --------------------------------------------------------------------------
# time evolution

@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (T, *batch, n, n)

    def __len__(self):
        return len(self.times)


def _segments(t0, t1, breakpoints):
    inner = [b for b in breakpoints if t0 < b < t1]
    edges = [t0] + inner + [t1]
    return list(zip(edges[:-1], edges[1:]))


def _integrate(rhs, y0, a, b, t_out, rtol, atol, method, max_step):
    sol = solve_ivp(rhs, (a, b), y0, method=method, t_eval=t_out, rtol=rtol,
                    atol=atol, max_step=max_step, dense_output=False)
    if sol.status != 0:
        t_fail = sol.t[-1] if len(sol.t) else a
        raise IntegrationError(f"integration failed at t={t_fail:.6e} s: {sol.message}",
                               time=float(t_fail))
    return sol.y


def evolve(system, drives, rho0, t_eval, velocity_offsets=None, rtol=1e-8,
           atol=1e-11, method="DOP853", max_step=np.inf) -> Trajectory:
    """Adaptive integration of the master equation over ``t_eval``.

    Envelope breakpoints are forced step boundaries. ``rho0`` may carry the
    same batch dimensions as ``velocity_offsets``.
    """
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval.ndim != 1 or len(t_eval) < 1 or np.any(np.diff(t_eval) <= 0):
        raise ValueError("t_eval must be a strictly increasing 1-D array")
    gen = Generator(system, drives, velocity_offsets)
    n = system.n
    rho0 = np.broadcast_to(np.asarray(rho0, dtype=complex), gen.batch_shape + (n, n))
    y = rho0.reshape(-1).copy()
    rhs = gen.rhs_factory()
    out = np.empty((len(t_eval), y.size), dtype=complex)
    out[0] = y
    t_cur = t_eval[0]
    for a, b in _segments(t_eval[0], t_eval[-1], gen.breakpoints):
        mask = (t_eval > a) & (t_eval <= b)
        t_out = np.concatenate([[a], t_eval[mask]])
        if t_out[-1] != b:
            t_out = np.append(t_out, b)
        Y = _integrate(rhs, y, a, b, t_out, rtol, atol, method, max_step)
        k = int(mask.sum())
        if k:
            out[mask] = Y[:, 1:1 + k].T
        y = Y[:, -1]
        t_cur = b
    assert t_cur == t_eval[-1]
    states = out.reshape((len(t_eval),) + gen.batch_shape + (n, n))
    return Trajectory(t_eval, states)


def _eigen_stepper(L, max_condition=1e8):
    """Eigen-decomposition of a batch of generators; ``None`` where ill-conditioned."""
    lam, V = np.linalg.eig(L)
    cond = np.linalg.cond(V)
    good = np.isfinite(cond) & (cond < max_condition)
    return lam, V, good


def propagate(system, drives, rho0, t_grid, velocity_offsets=None, observe=None,
              rows=None, rtol=1e-8, atol=1e-11, method="DOP853"):
    """Batched propagation on ``t_grid`` with exact exponentials where possible.

    Between envelope breakpoints where every envelope is constant the state
    is advanced exactly, by eigenmode phases (or ``expm(L dt)`` for batch
    members with an ill-conditioned eigenbasis); on ramps the adaptive
    integrator of :func:`evolve` is used.

    ``observe`` maps the flattened batch state ``(B, n^2)`` to whatever should
    be recorded (default: the full state). With ``rows`` (flat indices into
    ``vec(rho)``) only those components are formed and passed to ``observe``
    as ``(B, len(rows))``, which is much cheaper for large batches.
    Returns the records stacked over ``t_grid``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    gen = Generator(system, drives, velocity_offsets)
    n = system.n
    m = n * n
    observe = observe or (lambda Y: Y.copy())
    sel = slice(None) if rows is None else np.asarray(rows)
    Y = np.broadcast_to(np.asarray(rho0, dtype=complex),
                        gen.batch_shape + (n, n)).reshape(-1, m).copy()
    records = [observe(Y[:, sel])]
    rhs = gen.rhs_factory()
    for a, b in _segments(t_grid[0], t_grid[-1], gen.breakpoints):
        mask = (t_grid > a) & (t_grid <= b)
        k = int(mask.sum())
        times = np.concatenate([[a], t_grid[mask]])
        if times[-1] != b:
            times = np.append(times, b)
        levels = [e.constant_value(a, b) for e in gen.envelopes]
        if all(v is not None for v in levels):
            L = gen.static(levels).reshape(-1, m, m)
            Y = _propagate_constant(L, Y, times, k, observe, sel, records)
        else:
            sol = _integrate(rhs, Y.ravel(), a, b, times, rtol, atol, method, np.inf)
            for j in range(1, 1 + k):
                records.append(observe(sol[:, j].reshape(-1, m)[:, sel]))
            Y = sol[:, -1].reshape(-1, m)
    return np.stack(records)


def _propagate_constant(L, Y, times, k, observe, sel, records):
    lam, V, good = _eigen_stepper(L)
    bad = ~good
    Vr = V[good]
    coef = np.linalg.solve(Vr, Y[good][..., None])[..., 0]
    Vsel = Vr[:, sel, :] if not isinstance(sel, slice) else Vr
    lam_g = lam[good]
    Yb = Y[bad]
    Lb = L[bad]
    cache = {}
    span = times[-1] - times[0]
    out = np.empty((Y.shape[0], Vsel.shape[1]), dtype=complex)
    phases = {}
    for j, (t_prev, t_next) in enumerate(zip(times[:-1], times[1:])):
        dt = t_next - t_prev
        key = round(dt / span, 9)
        ph = phases.get(key)
        if ph is None:
            ph = np.exp(lam_g * dt)
            phases[key] = ph
        coef *= ph
        if bad.any():
            P = cache.get(key)
            if P is None:
                P = expm(Lb * dt)
                cache[key] = P
            Yb = np.matmul(P, Yb[..., None])[..., 0]
        if j < k:
            out[good] = np.einsum("brj,bj->br", Vsel, coef)
            if bad.any():
                out[bad] = Yb[:, sel]
            records.append(observe(out.copy()))
    Y = np.empty_like(Y)
    Y[good] = np.einsum("brj,bj->br", Vr, coef)
    Y[bad] = Yb
    return Y
