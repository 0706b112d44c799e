"""Structured Q1 finite elements on rectangles and on the periodic unit cell.

Nodes are numbered row by row, ``node = j * nnx + i``; elements likewise,
``elem = j * nx + i``.  Local node order inside an element is
(0,0), (1,0), (1,1), (0,1) and the 2x2 Gauss points follow the same order.
Displacement DOFs are interleaved, ``dof = 2 * node + component``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .tensors import Tensor4Sym, min_eigenvalues

_G = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_LOCAL = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])
# Gauss points in reference coordinates of [0, 1]^2, ordered like the nodes
QUAD_REF = _G[_LOCAL]
# 2-point Gauss rule on [0, 1]
EDGE_GAUSS = _G.copy()
EDGE_WEIGHTS = np.array([0.5, 0.5])


def shape_values(xi: np.ndarray) -> np.ndarray:
    """Bilinear shape functions at reference points ``xi`` (..., 2) -> (..., 4)."""
    x, y = xi[..., 0], xi[..., 1]
    return np.stack([(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y], axis=-1)


def shape_gradients_ref(xi: np.ndarray) -> np.ndarray:
    """Reference gradients (..., 4, 2) of the shape functions."""
    x, y = xi[..., 0], xi[..., 1]
    dx = np.stack([-(1 - y), 1 - y, y, -y], axis=-1)
    dy = np.stack([-(1 - x), -x, x, 1 - x], axis=-1)
    return np.stack([dx, dy], axis=-1)


def strain_operator(dn: np.ndarray) -> np.ndarray:
    """Engineering strain matrices (..., 3, 8) from shape gradients (..., 4, 2)."""
    out = np.zeros(dn.shape[:-2] + (3, 8))
    out[..., 0, 0::2] = dn[..., 0]
    out[..., 1, 1::2] = dn[..., 1]
    out[..., 2, 0::2] = dn[..., 1]
    out[..., 2, 1::2] = dn[..., 0]
    return out


class SolverError(RuntimeError):
    """Iterative solve failed; carries the last relative residual."""

    def __init__(self, message: str, residual: float = np.nan, iterations: int = 0):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class AssemblyError(ValueError):
    """Coefficient is not positive definite at some quadrature point."""


class Grid:
    """Uniform rectangular Q1 grid, optionally periodic in both directions."""

    def __init__(self, nx: int, ny: int, lx: float = 1.0, ly: float = 1.0, periodic: bool = False):
        if nx < 1 or ny < 1:
            raise ValueError("grid needs at least one element per direction")
        if periodic and (nx < 2 or ny < 2):
            raise ValueError("periodic grid needs at least two elements per direction")
        if not (lx > 0 and ly > 0):
            raise ValueError("domain lengths must be positive")
        self.nx, self.ny = int(nx), int(ny)
        self.lx, self.ly = float(lx), float(ly)
        self.periodic = bool(periodic)
        self.hx = self.lx / self.nx
        self.hy = self.ly / self.ny
        self.nnx = self.nx if periodic else self.nx + 1
        self.nny = self.ny if periodic else self.ny + 1
        self.n_nodes = self.nnx * self.nny
        self.n_dofs = 2 * self.n_nodes
        self.n_elems = self.nx * self.ny
        self.area = self.lx * self.ly
        self._patterns: dict[int, tuple] = {}

    # ---- topology -------------------------------------------------------
    def node_index(self, i, j):
        i = np.asarray(i)
        j = np.asarray(j)
        if self.periodic:
            i = i % self.nnx
            j = j % self.nny
        return j * self.nnx + i

    @cached_property
    def elements(self) -> np.ndarray:
        jj, ii = np.divmod(np.arange(self.n_elems), self.nx)
        cols = [self.node_index(ii + a, jj + b) for a, b in _LOCAL]
        return np.stack(cols, axis=1)

    @cached_property
    def dofs(self) -> np.ndarray:
        e = self.elements
        return np.stack([2 * e, 2 * e + 1], axis=2).reshape(self.n_elems, 8)

    @cached_property
    def node_coords(self) -> np.ndarray:
        jj, ii = np.divmod(np.arange(self.n_nodes), self.nnx)
        return np.stack([ii * self.hx, jj * self.hy], axis=1)

    @cached_property
    def elem_origin(self) -> np.ndarray:
        jj, ii = np.divmod(np.arange(self.n_elems), self.nx)
        return np.stack([ii * self.hx, jj * self.hy], axis=1)

    @cached_property
    def quad_points(self) -> np.ndarray:
        """Physical Gauss points, shape (n_elems, 4, 2)."""
        h = np.array([self.hx, self.hy])
        return self.elem_origin[:, None, :] + QUAD_REF[None] * h

    # ---- reference data ---------------------------------------------------
    @cached_property
    def N(self) -> np.ndarray:
        """Shape values at Gauss points, (4 points, 4 nodes)."""
        return shape_values(QUAD_REF)

    @cached_property
    def dN(self) -> np.ndarray:
        """Physical shape gradients at Gauss points, (4, 4, 2)."""
        return shape_gradients_ref(QUAD_REF) / np.array([self.hx, self.hy])

    @cached_property
    def B(self) -> np.ndarray:
        """Strain operators at Gauss points, (4, 3, 8)."""
        return strain_operator(self.dN)

    @property
    def qweight(self) -> float:
        return 0.25 * self.hx * self.hy

    # ---- field evaluation -------------------------------------------------
    def values_at_quad(self, f: np.ndarray) -> np.ndarray:
        return np.asarray(f, dtype=float)[self.elements] @ self.N.T

    def grad_at_quad(self, f: np.ndarray) -> np.ndarray:
        return np.einsum("ea,qad->eqd", np.asarray(f, dtype=float)[self.elements], self.dN)

    def strain_at_quad(self, u: np.ndarray) -> np.ndarray:
        """Engineering strains (n_elems, 4, 3) of a nodal displacement."""
        return np.einsum("qij,ej->eqi", self.B, np.asarray(u, dtype=float)[self.dofs])

    def strain_at_quad_multi(self, u: np.ndarray) -> np.ndarray:
        """Strains of several displacements stored as columns: (n_elems, 4, 3, k)."""
        return np.einsum("qij,ejk->eqik", self.B, np.asarray(u, dtype=float)[self.dofs])

    def vector_values_at_quad(self, u: np.ndarray) -> np.ndarray:
        ue = np.asarray(u, dtype=float).reshape(-1, 2)[self.elements]
        return np.einsum("qa,eac->eqc", self.N, ue)

    def vector_grad_at_quad(self, u: np.ndarray) -> np.ndarray:
        """Displacement gradients (n_elems, 4, 2, 2), entry [c, d] = d u_c / d x_d."""
        ue = np.asarray(u, dtype=float).reshape(-1, 2)[self.elements]
        return np.einsum("eac,qad->eqcd", ue, self.dN)

    def integrate_quad(self, values: np.ndarray) -> float:
        return float(self.qweight * np.sum(values))

    def locate(self, points: np.ndarray):
        """Element indices and local coordinates in [0,1]^2 of physical points."""
        p = np.asarray(points, dtype=float)
        sx = p[..., 0] / self.hx
        sy = p[..., 1] / self.hy
        if self.periodic:
            sx = np.mod(sx, self.nx)
            sy = np.mod(sy, self.ny)
        i = np.clip(np.floor(sx).astype(int), 0, self.nx - 1)
        j = np.clip(np.floor(sy).astype(int), 0, self.ny - 1)
        xi = np.stack([sx - i, sy - j], axis=-1)
        return j * self.nx + i, xi

    def interpolate(self, f: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Evaluate the Q1 interpolant of nodal ``f`` at arbitrary points."""
        e, xi = self.locate(points)
        return np.sum(np.asarray(f, dtype=float)[self.elements[e]] * shape_values(xi), axis=-1)

    def interpolate_grad(self, f: np.ndarray, points: np.ndarray) -> np.ndarray:
        e, xi = self.locate(points)
        dn = shape_gradients_ref(xi) / np.array([self.hx, self.hy])
        return np.einsum("...a,...ad->...d", np.asarray(f, dtype=float)[self.elements[e]], dn)

    def nodal(self, func) -> np.ndarray:
        """Sample a callable ``func(points) -> values`` at the nodes."""
        return np.asarray(func(self.node_coords), dtype=float)

    def image(self, f: np.ndarray) -> np.ndarray:
        """Nodal field reshaped to (nny, nnx), row index = y."""
        return np.asarray(f).reshape(self.nny, self.nnx)

    # ---- assembly ---------------------------------------------------------
    def _pattern(self, per_node: int):
        if per_node not in self._patterns:
            emap = self.dofs if per_node == 2 else self.elements
            k = emap.shape[1]
            n = per_node * self.n_nodes
            rows = np.repeat(emap, k, axis=1).ravel()
            cols = np.tile(emap, (1, k)).ravel()
            keys = rows.astype(np.int64) * n + cols
            uniq, inverse = np.unique(keys, return_inverse=True)
            r, c = np.divmod(uniq, n)
            indptr = np.zeros(n + 1, dtype=np.int64)
            np.add.at(indptr, r + 1, 1)
            np.cumsum(indptr, out=indptr)
            self._patterns[per_node] = (inverse, c.astype(np.int32), indptr, n)
        return self._patterns[per_node]

    def assemble_matrix(self, ke: np.ndarray) -> sp.csr_matrix:
        """Global sparse matrix from element matrices (n_elems, k, k).

        Summation order is fixed (element order), so symmetric element
        matrices give a bitwise symmetric global matrix.
        """
        per_node = ke.shape[1] // 4
        inverse, cols, indptr, n = self._pattern(per_node)
        data = np.bincount(inverse, weights=ke.ravel(), minlength=cols.size)
        return sp.csr_matrix((data, cols, indptr), shape=(n, n))

    def assemble_vector(self, fe: np.ndarray) -> np.ndarray:
        """Scatter element vectors (n_elems, 8) or (n_elems, 4) into a global vector."""
        if fe.shape[1] == 8:
            return np.bincount(self.dofs.ravel(), weights=fe.ravel(), minlength=self.n_dofs)
        return np.bincount(self.elements.ravel(), weights=fe.ravel(), minlength=self.n_nodes)

    def dual_scalar(self, values_q: np.ndarray) -> np.ndarray:
        """Nodal load vector of a scalar density given at Gauss points: int v N_i."""
        return self.assemble_vector(self.qweight * values_q @ self.N)

    @cached_property
    def lumped_weights(self) -> np.ndarray:
        """Integrals of the nodal basis functions (lumped mass)."""
        return self.dual_scalar(np.ones((self.n_elems, 4)))

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        """Scalar stiffness matrix of int grad f . grad g."""
        ke = self.qweight * np.einsum("qad,qbd->ab", self.dN, self.dN)
        return self.assemble_matrix(np.broadcast_to(ke, (self.n_elems, 4, 4)))

    @cached_property
    def mass(self) -> sp.csr_matrix:
        """Consistent scalar mass matrix."""
        me = self.qweight * self.N.T @ self.N
        return self.assemble_matrix(np.broadcast_to(me, (self.n_elems, 4, 4)))


class CellMesh(Grid):
    """Periodic grid on Y = [0, 1)^2 with ``nc`` elements per side."""

    def __init__(self, nc: int):
        super().__init__(nc, nc, 1.0, 1.0, periodic=True)
        self.nc = int(nc)


_SIDES = {
    "bottom": np.array([0.0, -1.0]),
    "right": np.array([1.0, 0.0]),
    "top": np.array([0.0, 1.0]),
    "left": np.array([-1.0, 0.0]),
}


@dataclass(frozen=True)
class BoundarySegment:
    """Tag ``D`` (clamped) or ``N`` (traction) on part of one side.

    ``start``/``end`` are coordinates along the side (x for bottom/top,
    y for left/right); an edge belongs to the segment when its midpoint does.
    """

    side: str
    tag: str
    start: float = -np.inf
    end: float = np.inf

    def __post_init__(self):
        if self.side not in _SIDES:
            raise ValueError(f"unknown side {self.side!r}")
        if self.tag not in ("D", "N"):
            raise ValueError(f"boundary tag must be 'D' or 'N', got {self.tag!r}")


class MacroMesh(Grid):
    """Grid on [0, lx] x [0, ly] with Dirichlet/Neumann boundary tags."""

    def __init__(self, nx: int, ny: int, lx: float = 1.0, ly: float = 1.0, boundary=None):
        super().__init__(nx, ny, lx, ly, periodic=False)
        if boundary is None:
            boundary = [BoundarySegment("left", "D")]
        self.boundary = tuple(boundary)
        self._tag_edges()

    def _tag_edges(self):
        nodes, sides, along = [], [], []
        for i in range(self.nx):
            nodes.append((self.node_index(i, 0), self.node_index(i + 1, 0)))
            sides.append("bottom")
            along.append((i + 0.5) * self.hx)
        for j in range(self.ny):
            nodes.append((self.node_index(self.nx, j), self.node_index(self.nx, j + 1)))
            sides.append("right")
            along.append((j + 0.5) * self.hy)
        for i in range(self.nx):
            nodes.append((self.node_index(i + 1, self.ny), self.node_index(i, self.ny)))
            sides.append("top")
            along.append((i + 0.5) * self.hx)
        for j in range(self.ny):
            nodes.append((self.node_index(0, j + 1), self.node_index(0, j)))
            sides.append("left")
            along.append((j + 0.5) * self.hy)
        self.edge_nodes = np.array(nodes, dtype=int)
        self.edge_side = np.array(sides)
        along = np.array(along)
        tags = np.full(len(sides), "", dtype="<U1")
        for seg in self.boundary:
            hit = (self.edge_side == seg.side) & (along >= seg.start) & (along <= seg.end)
            clash = hit & (tags != "") & (tags != seg.tag)
            if np.any(clash):
                raise ValueError("boundary edge tagged both D and N")
            tags[hit] = seg.tag
        self.edge_tag = tags
        self.edge_normal = np.array([_SIDES[s] for s in sides])
        self.edge_length = np.where(np.isin(self.edge_side, ["bottom", "top"]), self.hx, self.hy)
        if not np.any(tags == "D"):
            raise ValueError("Dirichlet boundary is empty; the state problem is ill-posed")
        dnodes = np.unique(self.edge_nodes[tags == "D"])
        nedges = self.edge_nodes[tags == "N"]
        if nedges.size and np.any(np.isin(nedges, dnodes)):
            warnings.warn(
                "traction edges touch clamped nodes; shared corner nodes are treated as clamped",
                stacklevel=3,
            )
        self.dirichlet_nodes = dnodes
        mask = np.zeros(self.n_dofs, dtype=bool)
        mask[2 * dnodes] = True
        mask[2 * dnodes + 1] = True
        self.fixed_dofs = mask

    @cached_property
    def neumann(self) -> dict:
        """Two-point Gauss data on traction edges."""
        sel = np.flatnonzero(self.edge_tag == "N")
        a = self.node_coords[self.edge_nodes[sel, 0]]
        b = self.node_coords[self.edge_nodes[sel, 1]]
        pts = a[:, None, :] + EDGE_GAUSS[None, :, None] * (b - a)[:, None, :]
        return {
            "edges": sel,
            "nodes": self.edge_nodes[sel],
            "points": pts,
            "weights": EDGE_WEIGHTS[None, :] * self.edge_length[sel][:, None],
            "shape": np.stack([1 - EDGE_GAUSS, EDGE_GAUSS], axis=1),
            "normals": self.edge_normal[sel],
        }


def coefficient_array(grid: Grid, coefficient) -> np.ndarray:
    """Normalize a coefficient to Voigt matrices at Gauss points (n_elems, 4, 3, 3)."""
    if isinstance(coefficient, Tensor4Sym):
        return np.broadcast_to(coefficient.voigt, (grid.n_elems, 4, 3, 3))
    if callable(coefficient):
        d = np.empty((grid.n_elems, 4, 3, 3))
        for e in range(grid.n_elems):
            for q in range(4):
                c = coefficient(e, q)
                d[e, q] = c.voigt if isinstance(c, Tensor4Sym) else c
        return d
    d = np.asarray(coefficient, dtype=float)
    return np.broadcast_to(d, (grid.n_elems, 4, 3, 3))


def elasticity_element_matrices(grid: Grid, d: np.ndarray, b=None, weights=None) -> np.ndarray:
    """Element stiffness matrices sum_q w B^T D B, symmetrized exactly.

    ``b`` (n_elems, 4, 3, 8) and ``weights`` (n_elems, 4) override the
    standard strain operators and Gauss weights (used by pulled-back forms).
    """
    if b is None and weights is None and d.strides[0] == 0 and d.strides[1] == 0:
        ke0 = grid.qweight * np.einsum("qai,ab,qbj->ij", grid.B, d[0, 0], grid.B)
        ke = np.broadcast_to(0.5 * (ke0 + ke0.T), (grid.n_elems, 8, 8))
        return ke
    if b is None:
        db = np.einsum("eqab,qbj->eqaj", d, grid.B)
        w = grid.qweight if weights is None else weights[:, :, None, None]
        ke = np.einsum("qai,eqaj->eij", grid.B, w * db)
    else:
        w = grid.qweight if weights is None else weights[:, :, None, None]
        db = np.einsum("eqab,eqbj->eqaj", d, b)
        ke = np.einsum("eqai,eqaj->eij", b, w * db)
    return 0.5 * (ke + ke.transpose(0, 2, 1))


def assemble_elasticity(grid: Grid, coefficient, check: bool = True) -> sp.csr_matrix:
    """Global elasticity stiffness for a coefficient given at Gauss points.

    ``coefficient`` may be a Tensor4Sym, a Voigt array broadcastable to
    (n_elems, 4, 3, 3), or a callable ``(element, gauss_point) -> Tensor4Sym``.
    """
    d = coefficient_array(grid, coefficient)
    if check:
        if d.strides[0] == 0 and d.strides[1] == 0:
            alpha = min_eigenvalues(d[0, 0])
        else:
            alpha = min_eigenvalues(d).min()
        if not alpha > 0:
            raise AssemblyError(f"coefficient not positive definite (min eigenvalue {alpha:.3e})")
    return grid.assemble_matrix(elasticity_element_matrices(grid, d))


def pcg(matvec, b, diag, tol=1e-10, max_iter=None, project=None, x0=None):
    """Jacobi-preconditioned conjugate gradients.

    ``project`` (optional) removes kernel components; it is applied to the
    right-hand side and to every preconditioned residual.
    Returns ``(x, iterations, relative_residual)``.
    """
    n = b.size
    max_iter = 10 * n + 100 if max_iter is None else max_iter
    if project is not None:
        b = project(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - matvec(x) if x0 is not None else b.copy()
    inv_d = 1.0 / diag
    z = inv_d * r
    if project is not None:
        z = project(z)
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    it = 0
    while res > tol and it < max_iter:
        ap = matvec(p)
        pap = p @ ap
        if not pap > 0:
            raise SolverError("operator not positive definite on search direction", res, it)
        a = rz / pap
        x += a * p
        r -= a * ap
        it += 1
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            break
        z = inv_d * r
        if project is not None:
            z = project(z)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if res > tol:
        raise SolverError("conjugate gradients did not converge", res, it)
    return x, it, res


def mean_free_projector(components: int):
    def project(v):
        w = v.reshape(-1, components)
        return (w - w.mean(axis=0)).ravel()

    return project


def solve_spd(
    operator: sp.spmatrix,
    rhs: np.ndarray,
    constraint: str = "dirichlet",
    tol_rel: float = 1e-10,
    fixed: np.ndarray | None = None,
    components: int = 2,
    max_iter: int | None = None,
) -> np.ndarray:
    """Solve ``operator x = rhs`` with CG under the given constraint.

    constraint='dirichlet' eliminates the DOFs flagged in the boolean mask
    ``fixed`` (solution zero there).  constraint='periodic' works on the
    mean-zero subspace: the constant mode of each of the ``components``
    interleaved components is projected out of rhs and iterates.
    ``rhs`` may hold several right-hand sides as columns.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.ndim == 2:
        return np.stack(
            [solve_spd(operator, rhs[:, k], constraint, tol_rel, fixed, components, max_iter) for k in range(rhs.shape[1])],
            axis=1,
        )
    a = sp.csr_matrix(operator)
    if constraint == "dirichlet":
        if fixed is None:
            x, _, _ = pcg(a.dot, rhs, a.diagonal(), tol_rel, max_iter)
            return x
        free = ~np.asarray(fixed, dtype=bool)
        aff = a[free][:, free]
        x = np.zeros_like(rhs)
        x[free], _, _ = pcg(aff.dot, rhs[free], aff.diagonal(), tol_rel, max_iter)
        return x
    if constraint == "periodic":
        project = mean_free_projector(components)
        x, _, _ = pcg(a.dot, rhs, a.diagonal(), tol_rel, max_iter, project=project)
        return project(x)
    raise ValueError(f"unknown constraint {constraint!r}")


def integrate_h1_seminorm(grid: Grid, field: np.ndarray) -> float:
    """int |grad f|^2 of the Q1 interpolant (2x2 Gauss)."""
    g = grid.grad_at_quad(field)
    return grid.integrate_quad(np.sum(g * g, axis=-1))


def integrate_mean(grid: Grid, field: np.ndarray) -> float:
    """Integral of the Q1 interpolant over the grid domain (mean times area)."""
    return grid.integrate_quad(grid.values_at_quad(field))
