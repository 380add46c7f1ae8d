"""Order-parameter state shared by the microscopic and macroscopic levels."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .spectrum import EigenSpectrum, reduction_coefficients


@dataclass
class OrderParameterState:
    """Overlaps of orders e = 0..n-1 plus second-layer products.

    ``Q[e] = J Sigma^e J^T`` (K x K), ``R[e] = J Sigma^e B^T`` (K x M),
    ``T[e] = B Sigma^e B^T`` (M x M), ``D = w w^T``, ``E = w v^T``,
    ``F = v v^T``.  T and F are constants of the dynamics.
    """

    Q: np.ndarray
    R: np.ndarray
    T: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray

    def __post_init__(self):
        for name in ("Q", "R", "T", "D", "E", "F"):
            setattr(self, name, np.array(getattr(self, name), dtype=float))
        n, K, K2 = self.Q.shape
        M = self.T.shape[1]
        if K != K2 or self.R.shape != (n, K, M) or self.T.shape != (n, M, M):
            raise ValueError("inconsistent order-parameter shapes")
        if self.D.shape != (K, K) or self.E.shape != (K, M) or self.F.shape != (M, M):
            raise ValueError("inconsistent second-layer shapes")

    @property
    def n_orders(self) -> int:
        return self.Q.shape[0]

    @property
    def K(self) -> int:
        return self.Q.shape[1]

    @property
    def M(self) -> int:
        return self.T.shape[1]

    def copy(self) -> "OrderParameterState":
        return OrderParameterState(self.Q.copy(), self.R.copy(), self.T.copy(),
                                   self.D.copy(), self.E.copy(), self.F.copy())

    def gram(self) -> np.ndarray:
        """Stacked ``[[Q, R], [R^T, T]]`` for each stored order, shape (n, K+M, K+M)."""
        top = np.concatenate([self.Q, self.R], axis=2)
        bottom = np.concatenate([self.R.transpose(0, 2, 1), self.T], axis=2)
        return np.concatenate([top, bottom], axis=1)

    def symmetrize(self):
        self.Q = 0.5 * (self.Q + self.Q.transpose(0, 2, 1))
        self.D = 0.5 * (self.D + self.D.T)
        return self

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.Q, self.R, self.D, self.E))

    # -- checkpointing -------------------------------------------------------
    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("Q", "R", "T", "D", "E", "F")}

    @classmethod
    def from_dict(cls, data: dict) -> "OrderParameterState":
        return cls(**{k: np.array(data[k], dtype=float) for k in ("Q", "R", "T", "D", "E", "F")})

    def to_json(self) -> str:
        # repr of a float round-trips exactly through json
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "OrderParameterState":
        return cls.from_dict(json.loads(text))


def lift_coefficients(spec: EigenSpectrum, e: int) -> np.ndarray:
    """Coefficients a with ``Omega^(e) = sum_k a[k] Omega^(k)``, k < d.

    These are the coefficients of ``x^e mod P(x)``, P the monic polynomial
    whose roots are the distinct eigenvalues.
    """
    c = reduction_coefficients(spec)
    d = c.size
    a = np.zeros(d)
    if e < d:
        a[e] = 1.0
        return a
    a[d - 1] = 1.0  # x^(d-1)
    for _ in range(e - d + 1):
        top = a[d - 1]
        a = np.concatenate([[0.0], a[:-1]]) - top * c
    return a


def lift_order(state: OrderParameterState, spec: EigenSpectrum, e: int):
    """(Q^(e), R^(e), T^(e)) for any e >= 0, expressed via stored orders."""
    if state.n_orders != spec.d:
        raise ValueError(f"state stores {state.n_orders} orders but spectrum has d={spec.d}")
    if e < 0:
        raise ValueError("order must be >= 0")
    a = lift_coefficients(spec, e)
    return (np.tensordot(a, state.Q, axes=1),
            np.tensordot(a, state.R, axes=1),
            np.tensordot(a, state.T, axes=1))


def gram_of_order(state: OrderParameterState, spec: EigenSpectrum, e: int) -> np.ndarray:
    a = lift_coefficients(spec, e)
    return np.tensordot(a, state.gram(), axes=1)


def csv_columns(K: int, M: int) -> list:
    cols = ["alpha", "eps_g"]
    cols += [f"Q{i}{j}" for i in range(K) for j in range(i, K)]
    cols += [f"R{i}{n}" for i in range(K) for n in range(M)]
    cols += [f"D{i}{j}" for i in range(K) for j in range(i, K)]
    cols += [f"E{i}{n}" for i in range(K) for n in range(M)]
    return cols


def csv_row_values(Q1, R1, D, E) -> list:
    """Flatten order-1 overlaps and second-layer products in CSV column order."""
    K = Q1.shape[0]
    iu = np.triu_indices(K)
    return list(Q1[iu]) + list(R1.ravel()) + list(D[iu]) + list(E.ravel())


@dataclass
class Trajectory:
    """Recorded learning curve: alpha (steps / N), eps_g and optional overlaps.

    ``rows`` holds, per record, the flattened order-1 overlaps and second
    layer products (see :func:`csv_columns`); ``states`` optionally keeps
    full state snapshots.
    """

    alpha: np.ndarray
    eps_g: np.ndarray
    K: int = 0
    M: int = 0
    rows: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.eps_g = np.asarray(self.eps_g, dtype=float)
        if self.alpha.shape != self.eps_g.shape:
            raise ValueError("alpha and eps_g must have the same length")

    def __len__(self):
        return self.alpha.size

    def to_csv(self, path, header_lines=()):
        cols = csv_columns(self.K, self.M) if self.rows else ["alpha", "eps_g"]
        with open(path, "w") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(",".join(cols) + "\n")
            for k in range(len(self)):
                vals = [self.alpha[k], self.eps_g[k]] + (list(self.rows[k]) if self.rows else [])
                fh.write(",".join(repr(float(v)) for v in vals) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path) as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
        cols = lines[0].strip().split(",")
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]], dtype=float)
        data = data.reshape(-1, len(cols))
        K = sum(1 for c in cols if c.startswith("Q") and c[1] == c[2])
        M = sum(1 for c in cols if c.startswith("R0"))
        rows = [list(r[2:]) for r in data] if len(cols) > 2 else []
        return cls(data[:, 0], data[:, 1], K, M, rows)
