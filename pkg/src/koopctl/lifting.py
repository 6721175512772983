"""State lifting and offline identification of the nominal lifted model.

A dictionary maps the physical state x (dim n) to observables z (dim p >= n)
whose first n entries are x itself, so the physical state is always
recoverable as the leading block of z.  Offline identification fits the
one-step lifted dynamics z+ = A z + B u by (optionally ridge-regularized)
least squares over a batch of transitions.
"""

from __future__ import annotations

import io
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc


class IdentifiabilityError(ValueError):
    """Raised when the regressor batch cannot pin down the operator."""


def _check_vector(x, n: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != n:
        raise ValueError(f"{name} has length {x.shape[0]}, expected {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


@dataclass(frozen=True)
class ObservableDictionary:
    """Feature map for lifting.  kind is 'poly' or 'rbf'.

    poly: observables are the state followed by all monomials of total
    degree 2..degree (degree 1 reduces to the identity map).
    rbf: observables are the state followed by one radial basis function
    per center ('gaussian' or 'thin_plate').
    """

    kind: str
    n: int
    degree: int = 1
    centers: np.ndarray | None = None
    width: float = 1.0
    rbf_kind: str = "gaussian"

    def __post_init__(self):
        if self.kind not in ("poly", "rbf"):
            raise ValueError(f"unknown dictionary kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("state dimension must be positive")
        if self.kind == "poly" and self.degree < 1:
            raise ValueError("polynomial degree must be >= 1")
        if self.kind == "rbf":
            if self.centers is None or np.asarray(self.centers).ndim != 2:
                raise ValueError("rbf dictionary needs a (n_centers, n) array")
            if np.asarray(self.centers).shape[1] != self.n:
                raise ValueError("rbf centers have wrong state dimension")
            if self.width <= 0:
                raise ValueError("rbf width must be positive")
            if self.rbf_kind not in ("gaussian", "thin_plate"):
                raise ValueError(f"unknown rbf kind {self.rbf_kind!r}")

    @property
    def _monomials(self) -> list[tuple[int, ...]]:
        terms = []
        for deg in range(2, self.degree + 1):
            terms.extend(itertools.combinations_with_replacement(range(self.n), deg))
        return terms

    @property
    def p(self) -> int:
        """Lifted dimension."""
        if self.kind == "poly":
            return self.n + len(self._monomials)
        return self.n + np.asarray(self.centers).shape[0]


def encode(x, dictionary: ObservableDictionary) -> np.ndarray:
    """Lift a physical state into observable space (first n entries = x)."""
    x = _check_vector(x, dictionary.n, "state")
    if dictionary.kind == "poly":
        extra = [float(np.prod(x[list(term)])) for term in dictionary._monomials]
        return np.concatenate([x, np.asarray(extra, dtype=float)])
    centers = np.asarray(dictionary.centers, dtype=float)
    r = np.linalg.norm(x[None, :] - centers, axis=1)
    if dictionary.rbf_kind == "gaussian":
        feats = np.exp(-(r ** 2) / (2.0 * dictionary.width ** 2))
    else:
        # thin-plate r^2 log r, continuous 0 at r = 0
        with np.errstate(divide="ignore", invalid="ignore"):
            feats = np.where(r > 0.0, r ** 2 * np.log(r), 0.0)
    return np.concatenate([x, feats])


def encode_batch(X: np.ndarray, dictionary: ObservableDictionary) -> np.ndarray:
    """Lift each column of X (n x N) into a p x N array."""
    X = np.asarray(X, dtype=float)
    return np.column_stack([encode(X[:, j], dictionary) for j in range(X.shape[1])])


def decode(z, C: np.ndarray) -> np.ndarray:
    """Recover the physical state from a lifted state: x = C z."""
    z = np.asarray(z, dtype=float).reshape(-1)
    C = np.asarray(C, dtype=float)
    if C.shape[1] != z.shape[0]:
        raise ValueError(f"selector expects dim {C.shape[1]}, got {z.shape[0]}")
    return C @ z


def selector_matrix(n: int, p: int) -> np.ndarray:
    """The fixed n x p selector [I 0] that reads the state block out of z."""
    if p < n:
        raise ValueError("lifted dimension must be >= state dimension")
    C = np.zeros((n, p))
    C[:, :n] = np.eye(n)
    return C


def make_rbf_dictionary(n: int, box_lo, box_hi, n_centers: int, seed: int,
                        rbf_kind: str = "gaussian") -> ObservableDictionary:
    """RBF dictionary with Latin-hypercube centers over a state box.

    Width defaults to the median pairwise distance between centers.
    """
    lo = _check_vector(box_lo, n, "box_lo")
    hi = _check_vector(box_hi, n, "box_hi")
    if np.any(hi <= lo):
        raise ValueError("state box is empty")
    sampler = qmc.LatinHypercube(d=n, seed=seed)
    unit = sampler.random(n_centers)
    centers = lo + unit * (hi - lo)
    diffs = centers[:, None, :] - centers[None, :, :]
    dists = np.linalg.norm(diffs, axis=2)
    pairwise = dists[np.triu_indices(n_centers, k=1)]
    width = float(np.median(pairwise)) if pairwise.size else 1.0
    return ObservableDictionary(kind="rbf", n=n, centers=centers, width=width,
                                rbf_kind=rbf_kind)


@dataclass
class TrainingBatch:
    """Transition data: columns of X map to columns of Y under inputs U."""

    X: np.ndarray
    Y: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        N = self.X.shape[1]
        if self.Y.shape != self.X.shape:
            raise ValueError("X and Y shapes differ")
        if self.U.shape[1] != N:
            raise ValueError("U has a different number of samples than X")
        for name, M in (("X", self.X), ("Y", self.Y), ("U", self.U)):
            if not np.all(np.isfinite(M)):
                raise ValueError(f"batch {name} contains non-finite entries")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def size(self) -> int:
        return self.X.shape[1]


@dataclass
class NominalModel:
    """Lifted linear model z+ = A z + B (u / input_scale), x = C z.

    input_scale is a per-channel normalisation of the input block of the
    regressor; B is stored in the scaled convention, so the physical input
    matrix is B / input_scale.  The default (all ones) keeps raw units.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dictionary: ObservableDictionary
    residual: float = field(default=0.0)
    input_scale: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.C = np.asarray(self.C, dtype=float)
        p = self.dictionary.p
        if self.A.shape != (p, p):
            raise ValueError(f"A has shape {self.A.shape}, expected {(p, p)}")
        if self.B.shape[0] != p:
            raise ValueError("B row count does not match lifted dimension")
        if self.C.shape != (self.dictionary.n, p):
            raise ValueError("C has the wrong shape")
        if self.input_scale is None:
            self.input_scale = np.ones(self.B.shape[1])
        else:
            self.input_scale = np.asarray(self.input_scale, dtype=float).reshape(-1)
        if self.input_scale.shape[0] != self.B.shape[1]:
            raise ValueError("input_scale length does not match the input count")
        if np.any(self.input_scale <= 0) or not np.all(np.isfinite(self.input_scale)):
            raise ValueError("input_scale entries must be positive and finite")

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def n(self) -> int:
        return self.C.shape[0]

    def stacked(self) -> np.ndarray:
        """The p x (p+m) operator [A B]."""
        return np.hstack([self.A, self.B])

    def encode(self, x) -> np.ndarray:
        return encode(x, self.dictionary)

    def decode(self, z) -> np.ndarray:
        return decode(z, self.C)


def identify_nominal(batch: TrainingBatch, dictionary: ObservableDictionary,
                     ridge: float = 1e-8, input_scale=None) -> NominalModel:
    """Fit [A B] by least squares on lifted transitions.

    Solves min_W ||Z' - W V||_F^2 + ridge ||W||_F^2 with V = [Z; U/s].
    input_scale chooses s: None keeps raw units, "auto" uses the per-channel
    RMS of the batch inputs (so thrust- or torque-scale channels do not
    dominate the regressor Gramian), and an array fixes it explicitly.
    With ridge = 0 the minimum-norm solution is used and a rank-deficient
    regressor matrix raises IdentifiabilityError.
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    if batch.n != dictionary.n:
        raise ValueError("batch state dimension does not match dictionary")
    if input_scale is None:
        scale = np.ones(batch.m)
    elif isinstance(input_scale, str):
        if input_scale != "auto":
            raise ValueError(f"unknown input_scale policy {input_scale!r}")
        scale = np.sqrt(np.mean(batch.U ** 2, axis=1))
        scale = np.maximum(scale, 1e-6)
    else:
        scale = np.asarray(input_scale, dtype=float).reshape(-1)
        if scale.shape[0] != batch.m or np.any(scale <= 0):
            raise ValueError("input_scale must hold one positive entry per channel")
    Z = encode_batch(batch.X, dictionary)
    Zp = encode_batch(batch.Y, dictionary)
    V = np.vstack([Z, batch.U / scale[:, None]])
    d = V.shape[0]
    if ridge == 0.0:
        if np.linalg.matrix_rank(V) < d:
            raise IdentifiabilityError(
                "regressor matrix is rank deficient; enlarge the batch or use ridge > 0")
        W = np.linalg.lstsq(V.T, Zp.T, rcond=None)[0].T
    else:
        G = V @ V.T + ridge * np.eye(d)
        W = np.linalg.solve(G, V @ Zp.T).T
    p = dictionary.p
    A, B = W[:, :p], W[:, p:]
    residual = float(np.linalg.norm(Zp - W @ V) / max(1, np.sqrt(batch.size)))
    C = selector_matrix(dictionary.n, p)
    return NominalModel(A=A, B=B, C=C, dictionary=dictionary, residual=residual,
                        input_scale=scale)


def save_model(model: NominalModel, path: str) -> None:
    """Write the model as a small text header plus CSV matrix blocks."""
    buf = io.StringIO()
    d = model.dictionary
    buf.write(f"n={d.n}\nm={model.m}\np={model.p}\nkind={d.kind}\n")
    buf.write("input_scale=" +
              ",".join(repr(float(v)) for v in model.input_scale) + "\n")
    if d.kind == "poly":
        buf.write(f"degree={d.degree}\n")
    else:
        buf.write(f"rbf_kind={d.rbf_kind}\nwidth={d.width!r}\n"
                  f"n_centers={np.asarray(d.centers).shape[0]}\n")
    for name, M in (("A", model.A), ("B", model.B), ("C", model.C)):
        buf.write(f"[{name}]\n")
        for row in np.atleast_2d(M):
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
    if d.kind == "rbf":
        buf.write("[centers]\n")
        for row in np.asarray(d.centers):
            buf.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(path, "w") as f:
        f.write(buf.getvalue())


def load_model(path: str) -> NominalModel:
    """Inverse of save_model."""
    header: dict[str, str] = {}
    blocks: dict[str, list[list[float]]] = {}
    current = None
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1]
                blocks[current] = []
            elif current is None:
                key, _, value = line.partition("=")
                header[key] = value
            else:
                blocks[current].append([float(v) for v in line.split(",")])
    n, m, p = int(header["n"]), int(header["m"]), int(header["p"])
    if header["kind"] == "poly":
        dictionary = ObservableDictionary(kind="poly", n=n, degree=int(header["degree"]))
    else:
        dictionary = ObservableDictionary(
            kind="rbf", n=n, centers=np.array(blocks["centers"]),
            width=float(header["width"]), rbf_kind=header["rbf_kind"])
    if dictionary.p != p:
        raise ValueError("model file header is inconsistent with its dictionary")
    A = np.array(blocks["A"])
    B = np.array(blocks["B"]).reshape(p, m)
    C = np.array(blocks["C"])
    if "input_scale" in header:
        scale = np.array([float(v) for v in header["input_scale"].split(",")])
    else:
        scale = None
    return NominalModel(A=A, B=B, C=C, dictionary=dictionary, input_scale=scale)
