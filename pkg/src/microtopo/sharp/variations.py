"""Closed-form velocity fields, their flow maps and admissibility checks.

Fields are autonomous (Phi(t, x) = Phi(x)).  ``grad`` returns the Jacobian
with entry [a, b] = d Phi_a / d x_b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class VariationField:
    """Base class; subclasses implement ``value`` and ``grad``."""

    domain = "omega"

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x):
        return self.value(np.asarray(x, dtype=float))

    def div(self, x) -> np.ndarray:
        g = self.grad(np.asarray(x, dtype=float))
        return g[..., 0, 0] + g[..., 1, 1]

    def __add__(self, other: "VariationField") -> "VariationField":
        return FieldSum((self, other), (1.0, 1.0))

    def __rmul__(self, a: float) -> "VariationField":
        return FieldSum((self,), (float(a),))


class FieldSum(VariationField):
    def __init__(self, fields, coeffs):
        self.fields = tuple(fields)
        self.coeffs = tuple(coeffs)
        self.domain = self.fields[0].domain

    def value(self, x):
        return sum(c * f.value(x) for c, f in zip(self.coeffs, self.fields))

    def grad(self, x):
        return sum(c * f.grad(x) for c, f in zip(self.coeffs, self.fields))


class ZeroField(VariationField):
    def __init__(self, domain: str = "omega"):
        self.domain = domain

    def value(self, x):
        return np.zeros(x.shape)

    def grad(self, x):
        return np.zeros(x.shape + (2,))


class ConstantField(VariationField):
    """Rigid translation; a valid cell field only up to the tangency condition."""

    def __init__(self, vector, domain: str = "cell"):
        self.v = np.asarray(vector, dtype=float)
        self.domain = domain

    def value(self, x):
        return np.broadcast_to(self.v, x.shape).copy()

    def grad(self, x):
        return np.zeros(x.shape + (2,))


class LinearField(VariationField):
    """Phi(x) = A (x - x0)."""

    def __init__(self, a, x0=(0.0, 0.0), domain: str = "omega"):
        self.a = np.asarray(a, dtype=float)
        self.x0 = np.asarray(x0, dtype=float)
        self.domain = domain

    def value(self, x):
        return (x - self.x0) @ self.a.T

    def grad(self, x):
        return np.broadcast_to(self.a, x.shape + (2,)).copy()


class SinBump(VariationField):
    """Phi(x) = v sin(k1 pi x1 / lx) sin(k2 pi x2 / ly); vanishes on the rectangle boundary."""

    def __init__(self, vector, lx: float = 1.0, ly: float = 1.0, k=(1, 1), domain: str = "omega"):
        self.v = np.asarray(vector, dtype=float)
        self.w = np.pi * np.array([k[0] / lx, k[1] / ly])
        self.domain = domain

    def value(self, x):
        s = np.sin(self.w[0] * x[..., 0]) * np.sin(self.w[1] * x[..., 1])
        return s[..., None] * self.v

    def grad(self, x):
        s1, s2 = np.sin(self.w[0] * x[..., 0]), np.sin(self.w[1] * x[..., 1])
        c1, c2 = np.cos(self.w[0] * x[..., 0]), np.cos(self.w[1] * x[..., 1])
        ds = np.stack([self.w[0] * c1 * s2, self.w[1] * s1 * c2], axis=-1)
        return self.v[:, None] * ds[..., None, :]


def _bump(rho, power):
    """b(rho) = (1 - rho)^power for rho < 1, else 0, with derivative."""
    inside = rho < 1.0
    r = np.where(inside, 1.0 - rho, 0.0)
    return r**power, -power * r ** (power - 1)


class _CompactBase(VariationField):
    def __init__(self, center, radius: float, power: int, domain: str, period: float | None):
        self.c = np.asarray(center, dtype=float)
        self.r = float(radius)
        self.power = power
        self.domain = domain
        self.period = period

    def _offset(self, x):
        d = x - self.c
        if self.period is not None:
            d = d - self.period * np.round(d / self.period)
        return d


class TranslationBump(_CompactBase):
    """Phi(x) = v (1 - |x - c|^2 / R^2)^3 inside the disk of radius R (C^{2,1})."""

    def __init__(self, center, radius, vector, domain: str = "omega", period: float | None = None):
        super().__init__(center, radius, 3, domain, period)
        self.v = np.asarray(vector, dtype=float)

    def value(self, x):
        d = self._offset(x)
        b, _ = _bump(np.sum(d * d, axis=-1) / self.r**2, self.power)
        return b[..., None] * self.v

    def grad(self, x):
        d = self._offset(x)
        _, db = _bump(np.sum(d * d, axis=-1) / self.r**2, self.power)
        dgrad = (2.0 / self.r**2) * db[..., None] * d
        return self.v[:, None] * dgrad[..., None, :]


class RadialBump(_CompactBase):
    """Phi(x) = a b(|x - c|^2 / R^2) (x - c), b(rho) = (1 - rho)^3."""

    def __init__(self, center, radius, amplitude: float = 1.0, domain: str = "omega", period: float | None = None):
        super().__init__(center, radius, 3, domain, period)
        self.a = float(amplitude)

    def value(self, x):
        d = self._offset(x)
        b, _ = _bump(np.sum(d * d, axis=-1) / self.r**2, self.power)
        return self.a * b[..., None] * d

    def grad(self, x):
        d = self._offset(x)
        b, db = _bump(np.sum(d * d, axis=-1) / self.r**2, self.power)
        outer = (2.0 / self.r**2) * db[..., None, None] * d[..., :, None] * d[..., None, :]
        return self.a * (b[..., None, None] * np.eye(2) + outer)


class CompactSwirl(_CompactBase):
    """Divergence-free field (d2 psi, -d1 psi) with psi = a (1 - |x - c|^2 / R^2)^4."""

    def __init__(self, center, radius, amplitude: float = 1.0, domain: str = "omega", period: float | None = None):
        super().__init__(center, radius, 4, domain, period)
        self.a = float(amplitude)

    def _derivs(self, x):
        d = self._offset(x)
        rho = np.sum(d * d, axis=-1) / self.r**2
        inside = rho < 1.0
        r = np.where(inside, 1.0 - rho, 0.0)
        k = 2.0 / self.r**2
        # psi = a r^4, grad psi = -4 a r^3 k d
        g1 = -4 * self.a * r**3 * k
        g2 = 12 * self.a * r**2 * k * k
        return d, g1, g2

    def value(self, x):
        d, g1, _ = self._derivs(x)
        gpsi = g1[..., None] * d
        return np.stack([gpsi[..., 1], -gpsi[..., 0]], axis=-1)

    def grad(self, x):
        d, g1, g2 = self._derivs(x)
        # hessian of psi: g1 I + g2 d d^T
        hess = g1[..., None, None] * np.eye(2) + g2[..., None, None] * d[..., :, None] * d[..., None, :]
        out = np.empty(hess.shape)
        out[..., 0, :] = hess[..., 1, :]
        out[..., 1, :] = -hess[..., 0, :]
        return out


class CellSwirl(VariationField):
    """Periodic divergence-free cell field from psi = a sin^2(pi y1) sin^2(pi y2)."""

    domain = "cell"

    def __init__(self, amplitude: float = 1.0):
        self.a = float(amplitude)

    def value(self, y):
        p = np.pi
        s1, s2 = np.sin(p * y[..., 0]), np.sin(p * y[..., 1])
        c1, c2 = np.cos(p * y[..., 0]), np.cos(p * y[..., 1])
        d1 = 2 * p * s1 * c1 * s2 * s2
        d2 = 2 * p * s1 * s1 * s2 * c2
        return self.a * np.stack([d2, -d1], axis=-1)

    def grad(self, y):
        p = np.pi
        t1, t2 = 2 * p * y[..., 0], 2 * p * y[..., 1]
        # psi = a/4 (1 - cos t1)(1 - cos t2)
        h11 = p * p * np.cos(t1) * (1 - np.cos(t2))
        h22 = p * p * (1 - np.cos(t1)) * np.cos(t2)
        h12 = p * p * np.sin(t1) * np.sin(t2)
        out = np.empty(y.shape + (2,))
        out[..., 0, 0] = h12
        out[..., 0, 1] = h22
        out[..., 1, 0] = -h11
        out[..., 1, 1] = -h12
        return self.a * out


class CellSine(VariationField):
    """Periodic cell field Psi_a = amp_a sin(2 pi k_a y_a) cos(2 pi l_a y_b + theta_a), b != a.

    Psi_1 vanishes on y1 in {0, 1} and Psi_2 on y2 in {0, 1}, so the field
    is tangent to the faces of Y and smooth across the periodic seam.
    """

    domain = "cell"

    def __init__(self, amp=(1.0, 0.0), k=(1, 1), l=(0, 0), theta=(0.0, 0.0)):
        self.amp = np.asarray(amp, dtype=float)
        self.k = np.asarray(k, dtype=float)
        self.l = np.asarray(l, dtype=float)
        self.theta = np.asarray(theta, dtype=float)

    def value(self, y):
        tp = 2 * np.pi
        p1 = self.amp[0] * np.sin(tp * self.k[0] * y[..., 0]) * np.cos(tp * self.l[0] * y[..., 1] + self.theta[0])
        p2 = self.amp[1] * np.sin(tp * self.k[1] * y[..., 1]) * np.cos(tp * self.l[1] * y[..., 0] + self.theta[1])
        return np.stack([p1, p2], axis=-1)

    def grad(self, y):
        tp = 2 * np.pi
        a1 = tp * self.k[0] * y[..., 0]
        b1 = tp * self.l[0] * y[..., 1] + self.theta[0]
        a2 = tp * self.k[1] * y[..., 1]
        b2 = tp * self.l[1] * y[..., 0] + self.theta[1]
        out = np.empty(y.shape + (2,))
        out[..., 0, 0] = self.amp[0] * tp * self.k[0] * np.cos(a1) * np.cos(b1)
        out[..., 0, 1] = -self.amp[0] * tp * self.l[0] * np.sin(a1) * np.sin(b1)
        out[..., 1, 1] = self.amp[1] * tp * self.k[1] * np.cos(a2) * np.cos(b2)
        out[..., 1, 0] = -self.amp[1] * tp * self.l[1] * np.sin(a2) * np.sin(b2)
        return out


def _substeps(t: float, substeps: int | None) -> int:
    return substeps if substeps is not None else max(8, int(np.ceil(64 * abs(t))))


def flow(points, field: VariationField, t: float, substeps: int | None = None) -> np.ndarray:
    """RK4 solution of dx/dt = Phi(x) at time t."""
    x = np.array(points, dtype=float)
    if t == 0:
        return x
    k = _substeps(t, substeps)
    h = t / k
    for _ in range(k):
        k1 = field.value(x)
        k2 = field.value(x + 0.5 * h * k1)
        k3 = field.value(x + 0.5 * h * k2)
        k4 = field.value(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def flow_with_jacobian(points, field: VariationField, t: float, substeps: int | None = None):
    """Flow and its spatial Jacobian F = grad T_t (variational equation dF/dt = grad Phi(x) F)."""
    x = np.array(points, dtype=float)
    f = np.broadcast_to(np.eye(2), x.shape + (2,)).copy()
    if t == 0:
        return x, f
    k = _substeps(t, substeps)
    h = t / k

    def rhs(xx, ff):
        return field.value(xx), field.grad(xx) @ ff

    for _ in range(k):
        a1, b1 = rhs(x, f)
        a2, b2 = rhs(x + 0.5 * h * a1, f + 0.5 * h * b1)
        a3, b3 = rhs(x + 0.5 * h * a2, f + 0.5 * h * b2)
        a4, b4 = rhs(x + h * a3, f + h * b3)
        x = x + (h / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
        f = f + (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
    return x, f


@dataclass
class Certificate:
    """Outcome of the sampled admissibility checks."""

    checks: dict

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def __str__(self) -> str:
        return ", ".join(f"{k}={'pass' if v else 'fail'}" for k, v in self.checks.items())


def _side_samples(lx, ly, n):
    s = (np.arange(n) + 0.5) / n
    return {
        "bottom": (np.stack([s * lx, 0 * s], -1), np.array([0.0, -1.0])),
        "right": (np.stack([lx + 0 * s, s * ly], -1), np.array([1.0, 0.0])),
        "top": (np.stack([s * lx, ly + 0 * s], -1), np.array([0.0, 1.0])),
        "left": (np.stack([0 * s, s * ly], -1), np.array([-1.0, 0.0])),
    }


def certify(field: VariationField, mesh=None, n: int = 257, tol: float = 1e-12) -> Certificate:
    """Sampled checks of the admissibility conditions.

    Omega fields (``mesh`` a MacroMesh): tangency on the boundary, vanishing
    of the field and its Jacobian on clamped edges (support away from them),
    tangency at the end points of the traction part.  Cell fields:
    periodicity of value and Jacobian and tangency on the faces of Y.
    Smoothness and Lipschitz bounds hold by construction of the closed forms.
    """
    checks = {"smooth closed form": True}
    if field.domain == "cell":
        s = (np.arange(n) + 0.5) / n
        left = np.stack([0 * s, s], -1)
        bottom = np.stack([s, 0 * s], -1)
        per = np.allclose(field.value(left), field.value(left + [1, 0]), atol=tol) and np.allclose(field.value(bottom), field.value(bottom + [0, 1]), atol=tol)
        per &= np.allclose(field.grad(left), field.grad(left + [1, 0]), atol=1e3 * tol) and np.allclose(field.grad(bottom), field.grad(bottom + [0, 1]), atol=1e3 * tol)
        checks["periodic"] = bool(per)
        tang = np.all(np.abs(field.value(left)[:, 0]) <= tol) and np.all(np.abs(field.value(bottom)[:, 1]) <= tol)
        checks["tangent on cell faces"] = bool(tang)
        return Certificate(checks)
    if mesh is None:
        raise ValueError("Omega fields need the mesh for boundary tags")
    sides = _side_samples(mesh.lx, mesh.ly, n)
    tang = True
    for pts, nu in sides.values():
        tang &= bool(np.all(np.abs(field.value(pts) @ nu) <= tol))
    checks["tangent on boundary"] = tang
    # clamped edges: sample edge points of D-tagged edges
    d_edges = mesh.edge_nodes[mesh.edge_tag == "D"]
    a = mesh.node_coords[d_edges[:, 0]]
    b = mesh.node_coords[d_edges[:, 1]]
    s = np.linspace(0, 1, 9)
    pts = (a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]).reshape(-1, 2)
    vanish = np.all(np.abs(field.value(pts)) <= tol) and np.all(np.abs(field.grad(pts)) <= 1e3 * tol)
    checks["support away from clamped edges"] = bool(vanish)
    # end points of traction segments, tangent of the side
    ends_ok = True
    tagged = mesh.edge_tag == "N"
    for side, (pts_side, nu) in sides.items():
        sel = np.flatnonzero(tagged & (mesh.edge_side == side))
        if sel.size == 0:
            continue
        en = mesh.edge_nodes[sel]
        counts = {}
        for e in en:
            for v in e:
                counts[v] = counts.get(v, 0) + 1
        ends = [v for v, c in counts.items() if c == 1]
        tangent = np.array([-nu[1], nu[0]])
        for v in ends:
            ends_ok &= bool(abs(field.value(mesh.node_coords[v]) @ tangent) <= tol)
    checks["tangent at traction end points"] = ends_ok
    return Certificate(checks)
