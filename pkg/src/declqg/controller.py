"""Executable controllers: the centralized single-estimator law and the
two-player dual-estimator law.

Each step consumes the measurement ``y_t`` and returns ``u_t`` together with
the advanced state.  ``u_t`` is computed from the estimates *before* ``y_t``
is folded in, so it only depends on ``y_{0:t-1}``.  All operations accept a
batch of independent rollouts: estimates of shape ``(N, n)`` and measurements
of shape ``(N, p)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .centralized import CentralizedSolution
from .errors import HorizonExceeded, StructureError
from .problem import ensure_valid


@dataclass(frozen=True, eq=False)
class ControllerState:
    t: int
    z: np.ndarray     # full-information conditional mean (player 2 / centralized)
    zhat: np.ndarray  # player-1 conditional mean


@dataclass(frozen=True, eq=False)
class GainSchedule:
    """Gains of the dual-estimator realization

    ``u = K zhat + KHat (z - zhat)``,
    ``zhat+ = (A + B K) zhat - LHat (y - C zhat)``,
    ``z+ = A z + B u - L (y - C z)``.
    """

    K: np.ndarray     # (T, m, n)
    L: np.ndarray     # (T, n, p)
    KHat: np.ndarray  # (T, m, n)
    LHat: np.ndarray  # (T, n, p)

    @property
    def horizon(self) -> int:
        return self.K.shape[0]

    def structure_violations(self, dims) -> list[str]:
        out = []
        for t in range(self.horizon):
            if np.any(self.LHat[t][:, dims.y2] != 0):
                out.append(f"LHat[{t}] has nonzero columns for y2")
            if np.any(self.KHat[t][dims.u1, :] != 0):
                out.append(f"KHat[{t}] has nonzero rows for u1")
        return out

    def check_structure(self, dims) -> None:
        bad = self.structure_violations(dims)
        if bad:
            raise StructureError("gain schedule violates the information structure: "
                                 + "; ".join(bad[:4]))


def two_player_schedule(centralized: CentralizedSolution, gains) -> GainSchedule:
    return GainSchedule(K=centralized.K, L=centralized.L, KHat=gains.KHat, LHat=gains.LHat)


def centralized_schedule(centralized: CentralizedSolution) -> GainSchedule:
    # KHat = K makes u = K z; the player-1 estimator is then irrelevant
    return GainSchedule(K=centralized.K, L=centralized.L, KHat=centralized.K,
                        LHat=centralized.L)


def _initial(spec, batch):
    mu = np.array(spec.mu_init, dtype=float)
    if batch is not None:
        mu = np.tile(mu, (batch, 1))
    return ControllerState(t=0, z=mu, zhat=mu.copy())


class TwoPlayerController:
    """Dual-estimator controller for an arbitrary admissible gain schedule.

    Player 1's input and estimator update are computed from ``y1`` and
    ``zhat`` alone (sliced, not multiplied by structural zeros), so player-1
    actions are bit-for-bit independent of ``y2``.
    """

    name = "two-player"

    def __init__(self, problem, schedule: GainSchedule, name: str | None = None):
        spec = ensure_valid(problem)
        schedule.check_structure(spec.dims)
        if schedule.horizon != spec.horizon:
            raise ValueError("gain schedule horizon does not match the problem")
        self.spec = spec
        self.schedule = schedule
        if name is not None:
            self.name = name
        d, g = spec.dims, spec.plant
        self._A, self._B, self._C = g.A, g.B, g.C
        self._K1 = schedule.K[:, d.u1, :]
        self._K2 = schedule.K[:, d.u2, :]
        self._Kh2 = schedule.KHat[:, d.u2, :]
        self._Ahat = g.A + g.B @ schedule.K
        self._Lh1 = schedule.LHat[:, :, d.y1]
        self._C1 = g.C[:, d.y1, :]
        self._L = schedule.L

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    def initial_state(self, batch: int | None = None) -> ControllerState:
        return _initial(self.spec, batch)

    def player1_input(self, state: ControllerState) -> np.ndarray:
        return state.zhat @ self._K1[state.t].T

    def step(self, state: ControllerState, y: np.ndarray):
        t = state.t
        if t >= self.horizon:
            raise HorizonExceeded(f"controller already at t={t}, horizon {self.horizon}")
        d = self.spec.dims
        z, zh = state.z, state.zhat
        y = np.asarray(y, dtype=float)
        u1 = zh @ self._K1[t].T
        u2 = zh @ self._K2[t].T + (z - zh) @ self._Kh2[t].T
        u = np.concatenate([u1, u2], axis=-1)
        y1 = y[..., d.y1]
        zh_next = zh @ self._Ahat[t].T - (y1 - zh @ self._C1[t].T) @ self._Lh1[t].T
        z_next = (z @ self._A[t].T + u @ self._B[t].T
                  - (y - z @ self._C[t].T) @ self._L[t].T)
        return u, ControllerState(t=t + 1, z=z_next, zhat=zh_next)


class CentralizedController:
    """Single Kalman estimator with ``u = K z``; ``zhat`` mirrors ``z``."""

    name = "centralized"

    def __init__(self, problem, centralized: CentralizedSolution, name: str | None = None):
        self.spec = ensure_valid(problem)
        self.solution = centralized
        if name is not None:
            self.name = name
        g = self.spec.plant
        self._A, self._B, self._C = g.A, g.B, g.C
        self._K, self._L = centralized.K, centralized.L

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    def initial_state(self, batch: int | None = None) -> ControllerState:
        return _initial(self.spec, batch)

    def step(self, state: ControllerState, y: np.ndarray):
        t = state.t
        if t >= self.horizon:
            raise HorizonExceeded(f"controller already at t={t}, horizon {self.horizon}")
        z = state.z
        u = z @ self._K[t].T
        z_next = (z @ self._A[t].T + u @ self._B[t].T
                  - (np.asarray(y, dtype=float) - z @ self._C[t].T) @ self._L[t].T)
        return u, ControllerState(t=t + 1, z=z_next, zhat=z_next)


def make_custom_linear_controller(problem, K, L, KHat, LHat, name="custom") -> TwoPlayerController:
    """Dual-estimator controller with arbitrary gains; rejects gains that
    break the information structure."""
    sched = GainSchedule(K=np.asarray(K, float), L=np.asarray(L, float),
                         KHat=np.asarray(KHat, float), LHat=np.asarray(LHat, float))
    return TwoPlayerController(problem, sched, name=name)


def step_two_player(state, y, spec, centralized, gains):
    """One step of the optimal two-player controller (stateless helper)."""
    ctrl = TwoPlayerController(spec, two_player_schedule(centralized, gains))
    return ctrl.step(state, y)


def step_centralized(state, y, spec, centralized):
    return CentralizedController(spec, centralized).step(state, y)
