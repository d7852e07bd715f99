"""Gains-file JSON format.

Per-stage matrices are stored as arrays of row-major nested lists; the
problem's dims and horizon are echoed so a gains file cannot silently be
paired with the wrong problem.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .controller import GainSchedule
from .errors import ParseError, SchemaError

_STAGE_KEYS = ("L", "K", "L_hat", "K_hat", "Sigma", "Sigma_hat", "P", "P_hat")


@dataclass(frozen=True, eq=False)
class GainsFile:
    dims: dict
    horizon: int
    L: np.ndarray
    K: np.ndarray
    L_hat: np.ndarray
    K_hat: np.ndarray
    Sigma: np.ndarray
    Sigma_hat: np.ndarray
    P: np.ndarray
    P_hat: np.ndarray
    J0: float
    J_hat0: float
    method: str = "tridiag"

    @property
    def schedule(self) -> GainSchedule:
        return GainSchedule(K=self.K, L=self.L, KHat=self.K_hat, LHat=self.L_hat)

    def mismatch(self, spec) -> str | None:
        """Why this file does not belong to ``spec`` (``None`` if it does)."""
        if self.horizon != spec.horizon:
            return f"gains horizon {self.horizon} != problem horizon {spec.horizon}"
        if self.dims != spec.dims.as_dict():
            return f"gains dims {self.dims} != problem dims {spec.dims.as_dict()}"
        d = spec.dims
        T = spec.horizon
        expected = {
            "L": (T, d.n, d.p), "K": (T, d.m, d.n), "L_hat": (T, d.n, d.p),
            "K_hat": (T, d.m, d.n), "Sigma": (T + 1, d.n, d.n),
            "Sigma_hat": (T + 1, d.n, d.n), "P": (T + 1, d.n, d.n), "P_hat": (T + 1, d.n, d.n),
        }
        for k, shape in expected.items():
            if getattr(self, k).shape != shape:
                return f"{k} has shape {getattr(self, k).shape}, expected {shape}"
        return None


def gains_to_dict(spec, centralized, gains, method: str = "tridiag") -> dict:
    return {
        "horizon": spec.horizon,
        "dims": spec.dims.as_dict(),
        "method": method,
        "L": centralized.L.tolist(),
        "K": centralized.K.tolist(),
        "L_hat": gains.LHat.tolist(),
        "K_hat": gains.KHat.tolist(),
        "Sigma": centralized.Sigma.tolist(),
        "Sigma_hat": gains.SigmaHat.tolist(),
        "P": centralized.P.tolist(),
        "P_hat": gains.PHat.tolist(),
        "J0": centralized.J0,
        "J_hat0": gains.JHat0,
    }


def save_gains(path, spec, centralized, gains, method: str = "tridiag") -> None:
    Path(path).write_text(json.dumps(gains_to_dict(spec, centralized, gains, method)))


def load_gains(path) -> GainsFile:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    missing = [k for k in ("horizon", "dims", "J0", "J_hat0", *_STAGE_KEYS) if k not in doc]
    if missing:
        raise SchemaError(f"gains file missing field(s): {', '.join(missing)}")
    arrays = {}
    for k in _STAGE_KEYS:
        try:
            a = np.array(doc[k], dtype=float)
        except (TypeError, ValueError):
            raise SchemaError(f"{k}: not a rectangular numeric array") from None
        if a.ndim != 3:
            raise SchemaError(f"{k}: expected an array of matrices")
        arrays[k] = a
    return GainsFile(dims=dict(doc["dims"]), horizon=int(doc["horizon"]),
                     J0=float(doc["J0"]), J_hat0=float(doc["J_hat0"]),
                     method=str(doc.get("method", "tridiag")), **arrays)
