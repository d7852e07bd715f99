"""Closed-loop Monte Carlo under the exact Gaussian noise model."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .problem import ensure_valid

CHUNK = 8192
CLIP_TOL = 1e-12


def psd_sqrt(X: np.ndarray) -> np.ndarray:
    """Symmetric square root with eigenvalues below ``CLIP_TOL`` clipped to 0."""
    lam, vecs = np.linalg.eigh(0.5 * (X + X.T))
    lam = np.where(lam > CLIP_TOL * max(1.0, lam.max(initial=0.0)), lam, 0.0)
    return (vecs * np.sqrt(lam)) @ vecs.T


def rollout_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for stream ``index`` of master ``seed`` (counter-based split)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def thread_count() -> int:
    n = int(os.environ.get("DECLQG_THREADS", "0") or 0)
    return n if n > 0 else (os.cpu_count() or 1)


@dataclass(frozen=True, eq=False)
class Trajectories:
    x: np.ndarray     # (N, T+1, n)
    u: np.ndarray     # (N, T, m)
    y: np.ndarray     # (N, T, p)
    z: np.ndarray     # (N, T+1, n)
    zhat: np.ndarray  # (N, T+1, n)
    cost: np.ndarray  # (N,)


def simulate_batch(problem, controller, rng: np.random.Generator, N: int) -> Trajectories:
    """``N`` independent closed-loop rollouts driven by one generator."""
    spec = ensure_valid(problem)
    g = spec.plant
    d = spec.dims
    T, n, m, p = spec.horizon, d.n, d.m, d.p
    x = np.empty((N, T + 1, n))
    u = np.empty((N, T, m))
    y = np.empty((N, T, p))
    z = np.empty((N, T + 1, n))
    zh = np.empty((N, T + 1, n))
    cost = np.zeros(N)

    x[:, 0] = spec.mu_init + rng.standard_normal((N, n)) @ psd_sqrt(spec.Sigma_init).T
    state = controller.initial_state(batch=N)
    for t in range(T):
        noise = rng.standard_normal((N, n + p)) @ psd_sqrt(spec.noise[t].joint).T
        w, v = noise[:, :n], noise[:, n:]
        z[:, t], zh[:, t] = state.z, state.zhat
        y[:, t] = x[:, t] @ g.C[t].T + v
        u[:, t], state = controller.step(state, y[:, t])
        xu = np.concatenate([x[:, t], u[:, t]], axis=1)
        cost += np.einsum("ij,jk,ik->i", xu, spec.cost[t].joint, xu)
        x[:, t + 1] = x[:, t] @ g.A[t].T + u[:, t] @ g.B[t].T + w
    z[:, T], zh[:, T] = state.z, state.zhat
    cost += np.einsum("ij,jk,ik->i", x[:, T], spec.P_final, x[:, T])
    return Trajectories(x=x, u=u, y=y, z=z, zhat=zh, cost=cost)


def sample_rollout(problem, controller, seed: int) -> Trajectories:
    """A single rollout (batch of one), deterministic in ``seed``."""
    tr = simulate_batch(problem, controller, rollout_rng(seed, 0), 1)
    return Trajectories(**{k: v[0] for k, v in tr.__dict__.items()})


@dataclass(frozen=True, eq=False)
class _Moments:
    costs: np.ndarray
    s_e: np.ndarray     # sum of x - z, (T+1, n)
    s_ee: np.ndarray    # sum of (x - z)(x - z)', (T+1, n, n)
    s_h: np.ndarray
    s_hh: np.ndarray
    s_ez: np.ndarray    # sum of (x - z) z'
    s_ez2: np.ndarray   # sum of ((x - z) z')**2, for standard errors
    traj: Trajectories | None


def _moments(tr: Trajectories, keep: bool) -> _Moments:
    e = tr.x - tr.z
    h = tr.x - tr.zhat
    ez = np.einsum("kti,ktj->ktij", e, tr.z)
    return _Moments(
        costs=tr.cost, s_e=e.sum(0), s_ee=np.einsum("kti,ktj->tij", e, e),
        s_h=h.sum(0), s_hh=np.einsum("kti,ktj->tij", h, h),
        s_ez=ez.sum(0), s_ez2=(ez ** 2).sum(0), traj=tr if keep else None,
    )


@dataclass(frozen=True, eq=False)
class SimulationReport:
    rollouts: int
    mean_cost: float
    stderr: float
    err_cov_z: np.ndarray      # empirical cov of x - z, (T+1, n, n)
    err_cov_zhat: np.ndarray   # empirical cov of x - zhat
    err_mean_z: np.ndarray     # (T+1, n)
    err_mean_zhat: np.ndarray
    err_z_cross: np.ndarray    # mean of (x - z) z', (T+1, n, n)
    err_z_cross_se: np.ndarray
    seed: int
    controller: str
    trajectories: Trajectories | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "rollouts": self.rollouts,
            "mean_cost": self.mean_cost,
            "stderr": self.stderr,
            "err_cov_z": self.err_cov_z.tolist(),
            "err_cov_zhat": self.err_cov_zhat.tolist(),
            "err_mean_z": self.err_mean_z.tolist(),
            "err_mean_zhat": self.err_mean_zhat.tolist(),
            "seed": self.seed,
            "controller": self.controller,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def _chunk_sizes(N: int):
    return [min(CHUNK, N - s) for s in range(0, N, CHUNK)]


def estimate_cost(problem, controller, N: int, seed: int, keep_trajectories: bool = False,
                  threads: int | None = None) -> SimulationReport:
    """Mean realized cost of ``N`` rollouts with standard error and belief-error
    statistics.

    Rollouts are generated in chunks; chunk ``k`` uses stream ``k`` of
    ``seed``, so the report does not depend on how many threads run them.
    """
    if N < 2:
        raise ValueError("need at least two rollouts")
    spec = ensure_valid(problem)
    sizes = _chunk_sizes(N)

    def run(k):
        return _moments(simulate_batch(spec, controller, rollout_rng(seed, k), sizes[k]),
                        keep_trajectories)

    workers = min(threads or thread_count(), len(sizes))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(k) for k in range(len(sizes))]

    costs = np.concatenate([pt.costs for pt in parts])

    def total(name):
        return sum(getattr(pt, name) for pt in parts)

    mean_e, mean_h = total("s_e") / N, total("s_h") / N
    cov_e = total("s_ee") / N - np.einsum("ti,tj->tij", mean_e, mean_e)
    cov_h = total("s_hh") / N - np.einsum("ti,tj->tij", mean_h, mean_h)
    cov_e *= N / (N - 1)
    cov_h *= N / (N - 1)
    cross = total("s_ez") / N
    cross_var = np.maximum(total("s_ez2") / N - cross ** 2, 0.0)
    traj = None
    if keep_trajectories:
        traj = Trajectories(**{k: np.concatenate([getattr(pt.traj, k) for pt in parts])
                               for k in Trajectories.__dataclass_fields__})
    return SimulationReport(
        rollouts=N, mean_cost=float(costs.mean()),
        stderr=float(costs.std(ddof=1) / np.sqrt(N)),
        err_cov_z=0.5 * (cov_e + np.swapaxes(cov_e, 1, 2)),
        err_cov_zhat=0.5 * (cov_h + np.swapaxes(cov_h, 1, 2)),
        err_mean_z=mean_e, err_mean_zhat=mean_h,
        err_z_cross=cross, err_z_cross_se=np.sqrt(cross_var / N),
        seed=seed, controller=getattr(controller, "name", type(controller).__name__),
        trajectories=traj,
    )


@dataclass(frozen=True)
class BeliefDeviation:
    cov_dev_z: float        # max_t ||cov(x - z) - Sigma_t|| / (1 + ||Sigma_t||)
    cov_dev_zhat: float     # same against SigmaHat_t
    mean_err_z: float       # max_t ||mean(x - z)||_inf
    mean_err_zhat: float
    mean_z_score: float     # largest |mean error| / its standard error, both estimates


def empirical_beliefs(report: SimulationReport, centralized, gains=None) -> BeliefDeviation:
    """Compare empirical estimation-error statistics with the predicted
    conditional covariances (``gains=None`` skips the player-1 comparison)."""
    def dev(emp, ref):
        return max(np.linalg.norm(e - r, 2) / (1.0 + np.linalg.norm(r, 2))
                   for e, r in zip(emp, ref))

    N = report.rollouts

    def zscore(mean, cov):
        se = np.sqrt(np.maximum(np.diagonal(cov, axis1=1, axis2=2), 0.0) / N)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, np.abs(mean) / se, np.where(mean == 0, 0.0, np.inf))
        return float(z.max())

    dz = dev(report.err_cov_z, centralized.Sigma)
    dh = dev(report.err_cov_zhat, gains.SigmaHat) if gains is not None else float("nan")
    return BeliefDeviation(
        cov_dev_z=float(dz), cov_dev_zhat=float(dh),
        mean_err_z=float(np.abs(report.err_mean_z).max()),
        mean_err_zhat=float(np.abs(report.err_mean_zhat).max()),
        mean_z_score=max(zscore(report.err_mean_z, report.err_cov_z),
                         zscore(report.err_mean_zhat, report.err_cov_zhat)),
    )
