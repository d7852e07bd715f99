"""Two-player LQG problem instances: data types, validation, JSON I/O and a
seeded random generator.

Player 1 owns the leading blocks of the state, input and measurement
vectors; Player 2 owns the trailing blocks.  Dynamics, input and output
matrices are block lower triangular, so subsystem 1 evolves independently of
subsystem 2 and Player 1 never measures subsystem 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DefinitenessError,
    DimensionError,
    ParseError,
    SchemaError,
    StructureError,
)

PSD_RTOL = 1e-8
PD_RTOL = 1e-12
SYM_RTOL = 1e-8


def _frozen(x) -> np.ndarray:
    a = np.array(x, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class BlockDims:
    n1: int
    n2: int
    m1: int
    m2: int
    p1: int
    p2: int

    def __post_init__(self):
        for name in ("n1", "n2", "m1", "m2", "p1", "p2"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise DimensionError(f"block size {name}={v!r} must be a positive integer")
            object.__setattr__(self, name, int(v))

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    @property
    def m(self) -> int:
        return self.m1 + self.m2

    @property
    def p(self) -> int:
        return self.p1 + self.p2

    # index ranges selecting each player's blocks
    @property
    def x1(self) -> slice:
        return slice(0, self.n1)

    @property
    def x2(self) -> slice:
        return slice(self.n1, self.n)

    @property
    def u1(self) -> slice:
        return slice(0, self.m1)

    @property
    def u2(self) -> slice:
        return slice(self.m1, self.m)

    @property
    def y1(self) -> slice:
        return slice(0, self.p1)

    @property
    def y2(self) -> slice:
        return slice(self.p1, self.p)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("n1", "n2", "m1", "m2", "p1", "p2")}


@dataclass(frozen=True, eq=False)
class StageDynamics:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        for k in ("A", "B", "C"):
            object.__setattr__(self, k, _frozen(getattr(self, k)))


@dataclass(frozen=True, eq=False)
class StageNoise:
    W: np.ndarray
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        for k in ("W", "U", "V"):
            object.__setattr__(self, k, _frozen(getattr(self, k)))

    @property
    def joint(self) -> np.ndarray:
        """Covariance of the stacked disturbance ``(w, v)``."""
        return np.block([[self.W, self.U.T], [self.U, self.V]])


@dataclass(frozen=True, eq=False)
class StageCost:
    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for k in ("Q", "S", "R"):
            object.__setattr__(self, k, _frozen(getattr(self, k)))

    @property
    def joint(self) -> np.ndarray:
        return np.block([[self.Q, self.S], [self.S.T, self.R]])


@dataclass(frozen=True, eq=False)
class PlantData:
    """Unstructured (single decision-maker) LQG data with stacked stage arrays.

    Arrays are indexed by time first: ``A[t]`` is the dynamics matrix at
    stage ``t``.  This is all the centralized recursions need, and it is also
    what a standalone subsystem of a two-player problem reduces to.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    W: np.ndarray
    U: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    S: np.ndarray
    R: np.ndarray
    Sigma_init: np.ndarray
    P_final: np.ndarray
    mu_init: np.ndarray

    def __post_init__(self):
        for k in self.__dataclass_fields__:
            object.__setattr__(self, k, _frozen(getattr(self, k)))

    @property
    def horizon(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    dims: BlockDims
    horizon: int
    dynamics: tuple[StageDynamics, ...]
    noise: tuple[StageNoise, ...]
    cost: tuple[StageCost, ...]
    Sigma_init: np.ndarray
    P_final: np.ndarray
    mu_init: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "dynamics", tuple(self.dynamics))
        object.__setattr__(self, "noise", tuple(self.noise))
        object.__setattr__(self, "cost", tuple(self.cost))
        object.__setattr__(self, "Sigma_init", _frozen(self.Sigma_init))
        object.__setattr__(self, "P_final", _frozen(self.P_final))
        mu = np.zeros(self.dims.n) if self.mu_init is None else self.mu_init
        object.__setattr__(self, "mu_init", _frozen(mu))

    @classmethod
    def from_arrays(cls, dims: BlockDims, horizon: int, *, A, B, C, W, U, V, Q, S, R,
                    Sigma_init, P_final, mu_init=None) -> "ProblemSpec":
        """Build a spec from matrices that are either constant (2-D) or
        per-stage stacks of length ``horizon`` (3-D)."""
        T = int(horizon)

        def stages(name, x):
            a = np.asarray(x, dtype=float)
            if a.ndim == 2:
                return [a] * T
            if a.ndim == 3:
                if a.shape[0] != T:
                    raise DimensionError(f"{name} has {a.shape[0]} stages, expected {T}")
                return list(a)
            raise DimensionError(f"{name} must be a matrix or a stack of matrices")

        As, Bs, Cs = stages("A", A), stages("B", B), stages("C", C)
        Ws, Us, Vs = stages("W", W), stages("U", U), stages("V", V)
        Qs, Ss, Rs = stages("Q", Q), stages("S", S), stages("R", R)
        return cls(
            dims=dims,
            horizon=T,
            dynamics=[StageDynamics(*abc) for abc in zip(As, Bs, Cs)],
            noise=[StageNoise(*wuv) for wuv in zip(Ws, Us, Vs)],
            cost=[StageCost(*qsr) for qsr in zip(Qs, Ss, Rs)],
            Sigma_init=Sigma_init,
            P_final=P_final,
            mu_init=mu_init,
        )

    def _stack(self, group: str, name: str) -> np.ndarray:
        return _frozen([getattr(s, name) for s in getattr(self, group)])

    @cached_property
    def plant(self) -> PlantData:
        d, n, c = "dynamics", "noise", "cost"
        return PlantData(
            A=self._stack(d, "A"), B=self._stack(d, "B"), C=self._stack(d, "C"),
            W=self._stack(n, "W"), U=self._stack(n, "U"), V=self._stack(n, "V"),
            Q=self._stack(c, "Q"), S=self._stack(c, "S"), R=self._stack(c, "R"),
            Sigma_init=self.Sigma_init, P_final=self.P_final, mu_init=self.mu_init,
        )

    def subsystem(self, i: int) -> PlantData:
        """Standalone data of subsystem ``i`` (1 or 2): diagonal blocks only."""
        d = self.dims
        x, u, y = {1: (d.x1, d.u1, d.y1), 2: (d.x2, d.u2, d.y2)}[i]
        g = self.plant
        return PlantData(
            A=g.A[:, x, x], B=g.B[:, x, u], C=g.C[:, y, x],
            W=g.W[:, x, x], U=g.U[:, y, x], V=g.V[:, y, y],
            Q=g.Q[:, x, x], S=g.S[:, x, u], R=g.R[:, u, u],
            Sigma_init=self.Sigma_init[x, x], P_final=self.P_final[x, x],
            mu_init=self.mu_init[x],
        )

    def replace(self, **arrays) -> "ProblemSpec":
        """Copy with some stacked arrays (``A``, ``W``, ``Sigma_init``, ...) replaced."""
        g = self.plant
        kw = {k: getattr(g, k) for k in PlantData.__dataclass_fields__}
        kw.update(arrays)
        return ProblemSpec.from_arrays(self.dims, self.horizon, **kw)


class ValidatedProblem(ProblemSpec):
    """A :class:`ProblemSpec` that has passed :func:`validate`."""


@dataclass(frozen=True)
class Violation:
    kind: str  # "dimension" | "structure" | "definiteness"
    matrix: str
    t: int | None
    detail: str

    def __str__(self):
        where = "" if self.t is None else f" at t={self.t}"
        return f"{self.matrix}{where}: {self.detail}"


def _sym_norm(x):
    return np.linalg.norm(x, 2) if x.size else 0.0


def _check_psd(name, X, t, out, strict=False):
    scale = 1.0 + _sym_norm(X)
    asym = np.max(np.abs(X - X.T)) if X.size else 0.0
    if asym > SYM_RTOL * scale:
        out.append(Violation("definiteness", name, t, f"not symmetric (max |X-X^T|={asym:.3e})"))
        return
    lam = np.linalg.eigvalsh(0.5 * (X + X.T))[0]
    if strict:
        if lam <= PD_RTOL * max(1.0, _sym_norm(X)):
            out.append(Violation("definiteness", name, t,
                                 f"not positive definite (min eigenvalue {lam:.3e})"))
    elif lam < -PSD_RTOL * scale:
        out.append(Violation("definiteness", name, t,
                             f"not positive semidefinite (min eigenvalue {lam:.3e})"))


def _check_zero(name, X, t, rows, cols, out):
    blk = X[rows, cols]
    nz = np.argwhere(blk != 0)
    if nz.size:
        i, j = nz[0]
        i += rows.start
        j += cols.start
        out.append(Violation("structure", name, t,
                             f"entry ({i}, {j}) = {X[i, j]!r} must be exactly zero"))


def _check_shape(name, X, shape, t, out):
    if X.shape != shape:
        out.append(Violation("dimension", name, t, f"shape {X.shape}, expected {shape}"))
        return False
    if not np.all(np.isfinite(X)):
        out.append(Violation("dimension", name, t, "contains non-finite entries"))
        return False
    return True


def find_violations(spec: ProblemSpec) -> list[Violation]:
    """Every violated invariant of ``spec``, in (dimension, structure,
    definiteness) order within each stage."""
    d = spec.dims
    n, m, p = d.n, d.m, d.p
    out: list[Violation] = []
    T = spec.horizon
    if int(T) != T or T < 1:
        return [Violation("dimension", "horizon", None, f"horizon {T!r} must be >= 1")]
    for name, seq in (("dynamics", spec.dynamics), ("noise", spec.noise), ("cost", spec.cost)):
        if len(seq) != T:
            out.append(Violation("dimension", name, None, f"{len(seq)} stages, expected {T}"))
    if out:
        return out

    ok_init = _check_shape("Sigma_init", spec.Sigma_init, (n, n), None, out)
    ok_final = _check_shape("P_final", spec.P_final, (n, n), None, out)
    _check_shape("mu_init", spec.mu_init, (n,), None, out)
    if ok_init:
        _check_psd("Sigma_init", spec.Sigma_init, None, out)
    if ok_final:
        _check_psd("P_final", spec.P_final, None, out)

    for t in range(T):
        dyn, nz, cs = spec.dynamics[t], spec.noise[t], spec.cost[t]
        shapes = [
            ("A", dyn.A, (n, n)), ("B", dyn.B, (n, m)), ("C", dyn.C, (p, n)),
            ("W", nz.W, (n, n)), ("U", nz.U, (p, n)), ("V", nz.V, (p, p)),
            ("Q", cs.Q, (n, n)), ("S", cs.S, (n, m)), ("R", cs.R, (m, m)),
        ]
        ok = [_check_shape(k, X, s, t, out) for k, X, s in shapes]
        if not all(ok):
            continue
        _check_zero("A12", dyn.A, t, d.x1, d.x2, out)
        _check_zero("B12", dyn.B, t, d.x1, d.u2, out)
        _check_zero("C12", dyn.C, t, d.y1, d.x2, out)
        _check_psd("[[W, U^T], [U, V]]", nz.joint, t, out)
        _check_psd("V", nz.V, t, out, strict=True)
        _check_psd("[[Q, S], [S^T, R]]", cs.joint, t, out)
        _check_psd("R", cs.R, t, out, strict=True)
    return out


_ERROR_FOR = {"dimension": DimensionError, "structure": StructureError,
              "definiteness": DefinitenessError}


def validate(spec: ProblemSpec) -> ValidatedProblem:
    """Check dimensions, triangular zero blocks and the positivity assumptions.

    Raises the error class matching the first violation found; the exception
    carries the complete list in ``violations``.
    """
    if isinstance(spec, ValidatedProblem):
        return spec
    violations = find_violations(spec)
    if violations:
        first = violations[0]
        lines = "\n".join(f"  - {v}" for v in violations)
        raise _ERROR_FOR[first.kind](
            f"{len(violations)} violation(s); first: {first}\n{lines}", violations)
    return ValidatedProblem(
        dims=spec.dims, horizon=spec.horizon, dynamics=spec.dynamics, noise=spec.noise,
        cost=spec.cost, Sigma_init=spec.Sigma_init, P_final=spec.P_final,
        mu_init=spec.mu_init,
    )


def ensure_valid(problem) -> ValidatedProblem:
    return problem if isinstance(problem, ValidatedProblem) else validate(problem)


# --- JSON ------------------------------------------------------------------

_MATRIX_KEYS = {
    "dynamics": ("A", "B", "C"),
    "noise": ("W", "U", "V"),
    "cost": ("Q", "S", "R"),
}
_SYMMETRIC = {"W", "V", "Q", "R"}


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _read_matrix(where: str, value, T: int) -> np.ndarray:
    try:
        a = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: not a rectangular numeric array ({exc})") from None
    if isinstance(value, (int, float)) or a.ndim not in (2, 3):
        raise SchemaError(f"{where}: expected a matrix or an array of {T} matrices")
    if a.ndim == 3 and a.shape[0] != T:
        raise SchemaError(f"{where}: {a.shape[0]} stages given, horizon is {T}")
    return a


def spec_from_dict(doc: dict) -> ProblemSpec:
    """Parse the problem-file document (already decoded from JSON)."""
    if not isinstance(doc, dict):
        raise SchemaError("top level must be a JSON object")
    for key in ("horizon", "dims", "dynamics", "noise", "cost", "Sigma_init", "P_final"):
        if key not in doc:
            raise SchemaError(f"missing field {key!r}")
    T = doc["horizon"]
    if isinstance(T, bool) or not isinstance(T, int):
        raise SchemaError(f"horizon must be an integer, got {T!r}")
    dd = doc["dims"]
    if not isinstance(dd, dict):
        raise SchemaError("dims must be an object")
    try:
        dims = BlockDims(**{k: dd[k] for k in ("n1", "n2", "m1", "m2", "p1", "p2")})
    except KeyError as exc:
        raise SchemaError(f"dims: missing field {exc.args[0]!r}") from None
    except (DimensionError, TypeError) as exc:
        raise SchemaError(f"dims: {exc}") from None
    if T < 1:
        raise SchemaError(f"horizon must be >= 1, got {T}")

    arrays = {}
    for group, names in _MATRIX_KEYS.items():
        obj = doc[group]
        if not isinstance(obj, dict):
            raise SchemaError(f"{group} must be an object")
        for name in names:
            if name not in obj:
                raise SchemaError(f"missing field {group}.{name}")
            a = _read_matrix(f"{group}.{name}", obj[name], T)
            arrays[name] = _symmetrize(a) if name in _SYMMETRIC else a
    for name in ("Sigma_init", "P_final"):
        a = _read_matrix(name, doc[name], T)
        if a.ndim != 2:
            raise SchemaError(f"{name}: expected a single matrix")
        arrays[name] = _symmetrize(a)
    mu = doc.get("mu_init")
    if mu is not None:
        try:
            mu = np.array(mu, dtype=float)
        except (TypeError, ValueError):
            raise SchemaError("mu_init: not a numeric vector") from None
        if mu.ndim != 1:
            raise SchemaError("mu_init: expected a vector")
    try:
        return ProblemSpec.from_arrays(dims, T, mu_init=mu, **arrays)
    except DimensionError as exc:
        raise SchemaError(str(exc)) from None


def load_spec(path) -> ProblemSpec:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return spec_from_dict(doc)


def _compact(stack: np.ndarray):
    """A single matrix when every stage is identical, otherwise the stack."""
    if all(np.array_equal(stack[0], s) for s in stack[1:]):
        return stack[0].tolist()
    return stack.tolist()


def spec_to_dict(spec: ProblemSpec) -> dict:
    g = spec.plant
    doc = {"horizon": spec.horizon, "dims": spec.dims.as_dict()}
    for group, names in _MATRIX_KEYS.items():
        doc[group] = {k: _compact(getattr(g, k)) for k in names}
    doc["Sigma_init"] = spec.Sigma_init.tolist()
    doc["P_final"] = spec.P_final.tolist()
    doc["mu_init"] = spec.mu_init.tolist()
    return doc


def save_spec(spec: ProblemSpec, path) -> None:
    # json writes floats with repr(), which round-trips exactly
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=1))


# --- generators and derived instances ----------------------------------------

def _spectral_scale(rng, X, lo=0.6, hi=1.05):
    rho = max(np.abs(np.linalg.eigvals(X)))
    if rho == 0:
        return X
    return X * (rng.uniform(lo, hi) / rho)


def _grouped_psd(rng, groups: Sequence[tuple[int, int]], coupling: float, eps=1e-6):
    """Random PSD matrix over the stacked blocks ``(a1, b1, a2, b2)`` whose
    cross-player part is scaled by ``coupling``.

    ``groups`` is ``[(a1, b1), (a2, b2)]``, the sizes of the components owned
    by each player.  Blending with the player-block-diagonal part keeps the
    matrix PSD for every coupling in [0, 1].
    """
    (a1, b1), (a2, b2) = groups
    k1 = a1 + b1
    k = k1 + a2 + b2
    G = rng.standard_normal((k, k)) / np.sqrt(k)
    X = G @ G.T
    D = np.zeros_like(X)
    D[:k1, :k1] = X[:k1, :k1]
    D[k1:, k1:] = X[k1:, k1:]
    X = coupling * X + (1.0 - coupling) * D + eps * np.eye(k)
    return 0.5 * (X + X.T)


def random_instance(seed: int, dims: BlockDims, T: int, coupling: float = 1.0) -> ProblemSpec:
    """Deterministic random instance satisfying every standing assumption.

    All random draws happen regardless of ``coupling`` so instances with the
    same seed differ only in their cross-player terms.  ``coupling=0`` gives a
    block-diagonal problem made of two independent subsystems.
    """
    if not 0.0 <= coupling <= 1.0:
        raise ValueError("coupling must lie in [0, 1]")
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(seed)
    d = dims
    n1, n2, m1, m2, p1, p2 = d.n1, d.n2, d.m1, d.m2, d.p1, d.p2
    A, B, C, W, U, V, Q, S, R = ([] for _ in range(9))
    for _ in range(T):
        a = np.zeros((d.n, d.n))
        a[d.x1, d.x1] = _spectral_scale(rng, rng.standard_normal((n1, n1)))
        a[d.x2, d.x2] = _spectral_scale(rng, rng.standard_normal((n2, n2)))
        a[d.x2, d.x1] = coupling * rng.standard_normal((n2, n1)) / np.sqrt(d.n)
        b = np.zeros((d.n, d.m))
        b[d.x1, d.u1] = rng.standard_normal((n1, m1)) / np.sqrt(n1)
        b[d.x2, d.u2] = rng.standard_normal((n2, m2)) / np.sqrt(n2)
        b[d.x2, d.u1] = coupling * rng.standard_normal((n2, m1)) / np.sqrt(d.n)
        c = np.zeros((d.p, d.n))
        c[d.y1, d.x1] = rng.standard_normal((p1, n1)) / np.sqrt(n1)
        c[d.y2, d.x2] = rng.standard_normal((p2, n2)) / np.sqrt(n2)
        c[d.y2, d.x1] = coupling * rng.standard_normal((p2, n1)) / np.sqrt(d.n)
        A.append(a)
        B.append(b)
        C.append(c)

        # joint (w, v) ordered (w1, w2, v1, v2)
        N = _grouped_psd(rng, [(n1, p1), (n2, p2)], coupling)
        N = _permute(N, [n1, p1, n2, p2], [0, 2, 1, 3])
        W.append(N[:d.n, :d.n])
        U.append(N[d.n:, :d.n])
        V.append(N[d.n:, d.n:])
        # joint (x, u) ordered (x1, x2, u1, u2)
        Z = _grouped_psd(rng, [(n1, m1), (n2, m2)], coupling)
        Z = _permute(Z, [n1, m1, n2, m2], [0, 2, 1, 3])
        Q.append(Z[:d.n, :d.n])
        S.append(Z[:d.n, d.n:])
        R.append(Z[d.n:, d.n:])

    Sigma_init = _grouped_psd(rng, [(n1, 0), (n2, 0)], coupling)
    P_final = _grouped_psd(rng, [(n1, 0), (n2, 0)], coupling)
    return ProblemSpec.from_arrays(
        dims, T, A=np.array(A), B=np.array(B), C=np.array(C), W=np.array(W),
        U=np.array(U), V=np.array(V), Q=np.array(Q), S=np.array(S), R=np.array(R),
        Sigma_init=Sigma_init, P_final=P_final,
    )


def _permute(X: np.ndarray, sizes: Sequence[int], new_order: Sequence[int]) -> np.ndarray:
    """Reorder the block rows/columns of ``X`` (block sizes ``sizes``)."""
    starts = np.cumsum([0, *sizes])
    idx = np.concatenate([np.arange(starts[b], starts[b + 1]) for b in new_order])
    return X[np.ix_(idx, idx)]


def y1_only(spec: ProblemSpec) -> ProblemSpec:
    """Variant in which the second measurement carries no information.

    The ``y2`` rows of ``C`` and ``U`` are zeroed and ``V`` is made block
    diagonal, so ``y2`` becomes noise independent of everything else.  The
    joint noise covariance stays PSD because what remains of it is a principal
    submatrix of the original plus the untouched ``V22``.
    """
    d = spec.dims
    g = spec.plant
    C = np.array(g.C)
    U = np.array(g.U)
    V = np.array(g.V)
    C[:, d.y2, :] = 0.0
    U[:, d.y2, :] = 0.0
    V[:, d.y1, d.y2] = 0.0
    V[:, d.y2, d.y1] = 0.0
    return spec.replace(C=C, U=U, V=V)


def with_mean(spec: ProblemSpec, mu_init) -> ProblemSpec:
    return spec.replace(mu_init=np.asarray(mu_init, dtype=float))
