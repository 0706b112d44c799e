"""Plane-strain fourth-order tensors in Voigt form.

Storage convention
------------------
A symmetric strain ``E`` is stored as the engineering vector
``(E11, E22, 2*E12)`` and a stress ``S`` as ``(S11, S22, S12)``.  With that
pairing the 3x3 Voigt matrix ``D`` of a tensor ``C`` satisfies

    (C E) : E' = e(E) . D e(E')

exactly, where ``e(E)`` is the engineering vector.  Spectral statements
(positive definiteness, bounds alpha/beta) refer to the Mandel matrix
``Q D Q`` with ``Q = diag(1, 1, 1/sqrt(2))`` applied on the engineering side,
i.e. the matrix of ``C`` acting on the orthonormal basis of symmetric
matrices.  ``voigt_to_mandel`` performs that change of basis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SQRT2 = np.sqrt(2.0)
# engineering vector = _ENG_FROM_MANDEL * mandel vector
_ENG_FROM_MANDEL = np.array([1.0, 1.0, SQRT2])


def voigt_to_mandel(voigt: np.ndarray) -> np.ndarray:
    """Mandel matrix of one or many Voigt matrices (last two axes)."""
    q = _ENG_FROM_MANDEL
    return voigt * q[:, None] * q[None, :]


def mandel_to_voigt(mandel: np.ndarray) -> np.ndarray:
    q = 1.0 / _ENG_FROM_MANDEL
    return mandel * q[:, None] * q[None, :]


@dataclass(frozen=True)
class SymMatrix2:
    """Symmetric 2x2 matrix (strain or stress) by its three components."""

    e11: float
    e22: float
    e12: float

    @classmethod
    def from_matrix(cls, a) -> "SymMatrix2":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0, 0]), float(a[1, 1]), 0.5 * float(a[0, 1] + a[1, 0]))

    @classmethod
    def from_engineering(cls, v) -> "SymMatrix2":
        return cls(float(v[0]), float(v[1]), 0.5 * float(v[2]))

    def matrix(self) -> np.ndarray:
        return np.array([[self.e11, self.e12], [self.e12, self.e22]])

    def engineering(self) -> np.ndarray:
        """Strain-type vector (E11, E22, 2 E12)."""
        return np.array([self.e11, self.e22, 2.0 * self.e12])

    def components(self) -> np.ndarray:
        """Stress-type vector (S11, S22, S12)."""
        return np.array([self.e11, self.e22, self.e12])

    def dot(self, other: "SymMatrix2") -> float:
        """Frobenius product A : B."""
        return float(self.e11 * other.e11 + self.e22 * other.e22 + 2.0 * self.e12 * other.e12)


@dataclass(frozen=True, eq=False)
class Tensor4Sym:
    """Major and minor symmetric 4th-order tensor in 2D.

    ``voigt`` is the 3x3 matrix mapping engineering strains to stresses,
    ordering (11, 22, 12).  ``voigt[2, 2]`` equals ``C_1212``.
    """

    voigt: np.ndarray

    def __post_init__(self):
        d = np.array(self.voigt, dtype=float)
        if d.shape != (3, 3):
            raise ValueError(f"Voigt matrix must be 3x3, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("Voigt matrix has non-finite entries")
        scale = max(np.abs(d).max(), np.finfo(float).tiny)
        if np.abs(d - d.T).max() > 1e-8 * scale:
            raise ValueError("tensor lacks major symmetry")
        d = 0.5 * (d + d.T)
        d.setflags(write=False)
        object.__setattr__(self, "voigt", d)

    @classmethod
    def identity(cls) -> "Tensor4Sym":
        """Identity on symmetric matrices, C E = E."""
        return cls(np.diag([1.0, 1.0, 0.5]))

    @classmethod
    def zero(cls) -> "Tensor4Sym":
        return cls(np.zeros((3, 3)))

    @classmethod
    def from_full(cls, c) -> "Tensor4Sym":
        c = np.asarray(c, dtype=float)
        idx = [(0, 0), (1, 1), (0, 1)]
        d = np.array([[c[i + k] for k in idx] for i in idx])
        return cls(d)

    def full(self) -> np.ndarray:
        """Full 2x2x2x2 component array C_ijkl."""
        pos = {(0, 0): 0, (1, 1): 1, (0, 1): 2, (1, 0): 2}
        c = np.empty((2, 2, 2, 2))
        for (i, j), a in pos.items():
            for (k, l), b in pos.items():
                c[i, j, k, l] = self.voigt[a, b]
        return c

    def mandel(self) -> np.ndarray:
        return voigt_to_mandel(self.voigt)

    def quad(self, e: SymMatrix2, e2: SymMatrix2 | None = None) -> float:
        """Bilinear form C E . E' (E' defaults to E)."""
        v = e.engineering()
        w = v if e2 is None else e2.engineering()
        return float(v @ self.voigt @ w)

    def __add__(self, other: "Tensor4Sym") -> "Tensor4Sym":
        return Tensor4Sym(self.voigt + other.voigt)

    def __sub__(self, other: "Tensor4Sym") -> "Tensor4Sym":
        return Tensor4Sym(self.voigt - other.voigt)

    def __mul__(self, a: float) -> "Tensor4Sym":
        return Tensor4Sym(float(a) * self.voigt)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor4Sym":
        return Tensor4Sym(-self.voigt)

    def __eq__(self, other) -> bool:
        return isinstance(other, Tensor4Sym) and np.array_equal(self.voigt, other.voigt)

    def __repr__(self) -> str:
        return f"Tensor4Sym({np.array2string(self.voigt, precision=6)})"


def make_isotropic(young: float, poisson: float) -> Tensor4Sym:
    """Plane-strain isotropic tensor from Young's modulus and Poisson ratio."""
    if not (young > 0 and np.isfinite(young)):
        raise ValueError(f"Young's modulus must be positive, got {young}")
    if not (-1.0 < poisson < 0.5):
        raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {poisson}")
    lam = young * poisson / ((1 + poisson) * (1 - 2 * poisson))
    mu = young / (2 * (1 + poisson))
    return Tensor4Sym(
        np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])
    )


def apply(c: Tensor4Sym, e: SymMatrix2) -> SymMatrix2:
    """Contraction (C E)_ij = C_ijkl E_kl."""
    s = c.voigt @ e.engineering()
    return SymMatrix2(float(s[0]), float(s[1]), float(s[2]))


def spectral_bounds(c) -> tuple[float, float]:
    """Smallest and largest eigenvalue of ``C`` on symmetric matrices.

    Accepts a ``Tensor4Sym`` or a raw Voigt matrix; raw input must be
    symmetric.
    """
    d = c.voigt if isinstance(c, Tensor4Sym) else np.asarray(c, dtype=float)
    if d.shape != (3, 3):
        raise ValueError("expected a 3x3 Voigt matrix")
    if not np.array_equal(d, d.T):
        scale = max(np.abs(d).max(), np.finfo(float).tiny)
        if np.abs(d - d.T).max() > 1e-12 * scale:
            raise ValueError("spectral bounds need a major-symmetric tensor")
        d = 0.5 * (d + d.T)
    ev = np.linalg.eigvalsh(voigt_to_mandel(d))
    return float(ev[0]), float(ev[-1])


def min_eigenvalues(voigt: np.ndarray) -> np.ndarray:
    """Batched smallest Mandel eigenvalue over leading axes."""
    return np.linalg.eigvalsh(voigt_to_mandel(voigt))[..., 0]


@dataclass(frozen=True)
class Materials:
    """Stiff phase ``c1`` and Ersatz phase ``c2``."""

    c1: Tensor4Sym
    c2: Tensor4Sym

    @classmethod
    def isotropic(cls, young: float = 1.0, poisson: float = 0.3, delta: float = 1e-3) -> "Materials":
        if not delta > 0:
            raise ValueError(f"Ersatz contrast must be positive, got {delta}")
        c1 = make_isotropic(young, poisson)
        return cls(c1, delta * c1)

    @property
    def contrast(self) -> float | None:
        """delta with c2 = delta c1 and 0 < delta < 1, or None if the phases are not proportional."""
        a, b = self.c1.voigt, self.c2.voigt
        k = np.unravel_index(np.argmax(np.abs(a)), a.shape)
        delta = float(b[k] / a[k])
        if 0 < delta < 1 and np.allclose(b, delta * a, rtol=1e-13, atol=0):
            return delta
        return None

    def mixture(self, phi: float, m: float) -> Tensor4Sym:
        """C(phi, m) = phi m C1 + (1 - phi) C2."""
        return Tensor4Sym(phi * m * self.c1.voigt + (1.0 - phi) * self.c2.voigt)

    def mixture_voigt(self, phi, m) -> np.ndarray:
        """Vectorized mixture: Voigt matrices with shape ``broadcast(phi, m) + (3, 3)``."""
        phi = np.asarray(phi, dtype=float)[..., None, None]
        m = np.asarray(m, dtype=float)[..., None, None]
        return phi * m * self.c1.voigt + (1.0 - phi) * self.c2.voigt
