"""Finsler metric families, their duals, and the support-function bridge.

A Finsler metric here is a continuous gauge H(x, p), convex and positively
1-homogeneous in p, pinched between a|p| and b|p| with 0 < a <= b.  Its dual
is H*(x, q) = sup {<p, q> : H(x, p) <= 1}, the derivative of which satisfies
Euler's identity dH*(x, q).q = H*(x, q) and the normalization
H(x, dH*(x, q)) = 1.  Both are exercised by :func:`check_identities`.

Four families are provided:

* ``WeightedEuclidean``  H = k(x)|p|, dual |q|/k(x)           (closed form)
* ``Riemannian``         H = sqrt(p^T A(x) p)                 (closed form)
* ``Polytope``           H = support function of a polygon    (direction scan)
* ``Shifted``            H = |p| + b(x).p with |b| < 1        (direction scan)

Families without a closed-form dual are evaluated by maximizing
<d, q> / H(x, d) over precomputed unit directions followed by a
golden-section refinement of the winning bracket.  The ratio is quasiconcave
in the direction angle (its superlevel sets are the directions of convex
cones), so the scan bracket always contains the global maximum and the
refinement drives both the dual value and its Danskin gradient to roundoff
accuracy.  The refined maximizer doubles as the subgradient selection at
polytope kinks and is deterministic.

Spatially varying parameters are node-sampled fields interpolated bilinearly,
matching the order of the grid discretization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import Grid

N_SCAN_DIRECTIONS = 4096
_GOLDEN_ITERS = 32
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


class ZeroVector(ValueError):
    """The dual derivative is undefined at q = 0."""


# ---------------------------------------------------------------------------
# Spatially varying parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridField:
    """Node-sampled parameter field evaluated anywhere by bilinear interpolation.

    ``values`` has shape (ny, nx) for scalars or (ny, nx, ...) for vector or
    vertex-list parameters; trailing axes are interpolated componentwise.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.values.shape[:2] != self.grid.shape:
            raise ValueError(
                f"grid field leading shape {self.values.shape[:2]} != grid {self.grid.shape}"
            )

    def at(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        g = self.grid
        fx = np.clip((pts[..., 0] - g.origin[0]) / g.h, 0.0, g.nx - 1.0)
        fy = np.clip((pts[..., 1] - g.origin[1]) / g.h, 0.0, g.ny - 1.0)
        ix = np.minimum(fx.astype(int), g.nx - 2)
        iy = np.minimum(fy.astype(int), g.ny - 2)
        tx = fx - ix
        ty = fy - iy
        for _ in range(self.values.ndim - 2):
            tx = tx[..., None]
            ty = ty[..., None]
        v = self.values
        return (
            v[iy, ix] * (1 - tx) * (1 - ty)
            + v[iy, ix + 1] * tx * (1 - ty)
            + v[iy + 1, ix] * (1 - tx) * ty
            + v[iy + 1, ix + 1] * tx * ty
        )


Param = float | GridField


def _eval_param(param, points: np.ndarray) -> np.ndarray:
    if isinstance(param, GridField):
        return param.at(points)
    return np.asarray(param, dtype=float)


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(v * v, axis=-1))


def _unit_directions(n: int) -> np.ndarray:
    th = 2 * np.pi * np.arange(n) / n
    return np.stack([np.cos(th), np.sin(th)], axis=-1)


_SCAN_DIRS = _unit_directions(N_SCAN_DIRECTIONS)
_SCAN_DIRS_T32 = np.ascontiguousarray(_SCAN_DIRS.T, dtype=np.float32)
_SCAN_ANGLES = 2 * np.pi * np.arange(N_SCAN_DIRECTIONS) / N_SCAN_DIRECTIONS


# ---------------------------------------------------------------------------
# Metric families
# ---------------------------------------------------------------------------


class FinslerMetric:
    """Base class bundling H, H* and the derivative of H*.

    Subclasses implement ``primal``; closed-form families override ``dual``
    and ``grad_dual``, the rest inherit the direction-scan evaluation.  All
    evaluators are pure and vectorized over leading axes of ``x`` and the
    vector argument (broadcast against each other).
    """

    family = "abstract"

    def primal(self, x: np.ndarray, p: np.ndarray) -> np.ndarray:
        """H(x, p)."""
        raise NotImplementedError

    def primal_at_directions(self, x: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """H(x_m, d_j); shape (M, D), or (D,) when independent of location."""
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        out = np.empty((x.shape[0], dirs.shape[0]))
        for j, d in enumerate(dirs):
            out[:, j] = self.primal(x, np.broadcast_to(d, x.shape))
        return out

    def primal_unit(self, x: np.ndarray, d: np.ndarray) -> np.ndarray:
        """H(x, d) for unit vectors d; hook for families with cheaper forms."""
        return self.primal(x, d)

    def dual(self, x: np.ndarray, q: np.ndarray) -> np.ndarray:
        """H*(x, q) = sup over H(x, .) <= 1 of the pairing with q."""
        val, _ = self._scan_dual(x, q)
        return val

    def grad_dual(self, x: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Derivative of H* in q; the maximizer on the unit H-sphere (Danskin)."""
        q = np.asarray(q, dtype=float)
        if np.any(_norm(q) == 0.0):
            raise ZeroVector("grad_dual is undefined at q = 0")
        _, g = self._scan_dual(x, q)
        return g

    def dual_and_grad(self, x: np.ndarray, q: np.ndarray):
        """(H*(x, q), dH*(x, q)) with zero gradient rows at q = 0."""
        return self._scan_dual(x, q)

    def _scan_dual(self, x, q):
        x = np.asarray(x, dtype=float)
        q = np.asarray(q, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], q.shape[:-1])
        xf = np.ascontiguousarray(np.broadcast_to(x, shape + (2,)).reshape(-1, 2))
        qf = np.ascontiguousarray(np.broadcast_to(q, shape + (2,)).reshape(-1, 2))

        # The scan only selects the bracket; single precision is plenty and
        # halves the memory traffic of the (M, D) sweep.
        hd = self.primal_at_directions(xf, _SCAN_DIRS)  # (M, D) or (D,)
        ratio = qf.astype(np.float32) @ _SCAN_DIRS_T32
        ratio /= hd.astype(np.float32)
        best = np.argmax(ratio, axis=1)
        step = 2 * np.pi / N_SCAN_DIRECTIONS
        lo = _SCAN_ANGLES[best] - step
        hi = _SCAN_ANGLES[best] + step

        def g(theta):
            d = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
            return np.sum(qf * d, axis=-1) / self.primal_unit(xf, d)

        # Golden-section maximization on the winning bracket, vectorized with
        # one fresh evaluation per iteration (the other interior point is
        # reused from the previous bracket).
        c = hi - _INVPHI * (hi - lo)
        d_ = lo + _INVPHI * (hi - lo)
        gc = g(c)
        gd = g(d_)
        for _ in range(_GOLDEN_ITERS):
            take = gc > gd
            lo = np.where(take, lo, c)
            hi = np.where(take, d_, hi)
            width = hi - lo
            c_next = np.where(take, hi - _INVPHI * width, d_)
            d_next = np.where(take, c, lo + _INVPHI * width)
            theta_eval = np.where(take, c_next, d_next)
            g_eval = g(theta_eval)
            gc, gd = np.where(take, g_eval, gd), np.where(take, gc, g_eval)
            c, d_ = c_next, d_next
        theta = np.where(gc > gd, c, d_)
        dbest = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        hbest = self.primal_unit(xf, dbest)
        val = np.sum(qf * dbest, axis=-1) / hbest
        grad = dbest / hbest[..., None]

        qn = _norm(qf)
        val = np.where(qn == 0.0, 0.0, np.maximum(val, 0.0))
        grad = np.where(qn[..., None] == 0.0, 0.0, grad)
        return val.reshape(shape), grad.reshape(shape + (2,))

    def dual_hessian(self, x: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Second derivative of H* in q, shape (..., 2, 2).

        By 1-homogeneity the Hessian annihilates q, so in the plane it is
        kappa t t^T with t the unit tangent to q.  The default estimates
        kappa by a central difference of the dual along t, which is accurate
        enough for Newton-type polishing; closed-form families override it.
        """
        x = np.asarray(x, dtype=float)
        q = np.asarray(q, dtype=float)
        n = _norm(q)
        safe = np.where(n == 0.0, 1.0, n)
        t = np.stack([-q[..., 1] / safe, q[..., 0] / safe], axis=-1)
        step = 1e-4 * safe[..., None]
        h0 = self.dual(x, q)
        hp = self.dual(x, q + step * t)
        hm = self.dual(x, q - step * t)
        kappa = np.maximum((hp + hm - 2 * h0) / (step[..., 0] ** 2), 0.0)
        kappa = np.where(n == 0.0, 0.0, kappa)
        return kappa[..., None, None] * t[..., :, None] * t[..., None, :]

    def smoothed_dual_and_grad(self, x, q, eps: float):
        """C^1 regularization of (H*, dH*) used inside energy minimization.

        The default composes the exact dual with sqrt(H*^2 + eps^2), which
        removes the kink at q = 0 and leaves smooth families otherwise
        untouched.  Families whose dual has angular creases override this
        with a mollification that is smooth in every direction.
        """
        hs, dh = self.dual_and_grad(x, q)
        hse = np.sqrt(hs * hs + eps * eps)
        return hse, (hs / hse)[..., None] * dh

    def smoothed_dual_hessian(self, x, q, eps: float):
        """Hessian of the smoothed dual; used by the Newton polish."""
        hs, dh = self.dual_and_grad(x, q)
        hse = np.sqrt(hs * hs + eps * eps)
        d2 = self.dual_hessian(x, q)
        outer = dh[..., :, None] * dh[..., None, :]
        return (eps * eps / hse ** 3)[..., None, None] * outer + (hs / hse)[..., None, None] * d2

    def smoothed_dual_at_zero(self, eps: float) -> float:
        """Value of the smoothed dual at q = 0 (the constant energy offset)."""
        return eps

    def _param_grid(self) -> Grid | None:
        for value in vars(self).values():
            if isinstance(value, GridField):
                return value.grid
        return None

    def bounds(self, grid: Grid | None = None, n_dirs: int = 256) -> tuple[float, float]:
        """Nondegeneracy constants (a, b) with a|p| <= H(x, p) <= b|p|, sampled."""
        dirs = _unit_directions(n_dirs)
        grid = grid or self._param_grid()
        if grid is None:
            pts = np.zeros((1, 2))
        else:
            pts = grid.node_points.reshape(-1, 2)
        h = self.primal_at_directions(pts, dirs)
        return float(h.min()), float(h.max())

    def dual_bounds(self, grid: Grid | None = None) -> tuple[float, float]:
        """(a~, b~) with a~|q| <= H*(x, q) <= b~|q|; the reciprocals of (b, a)."""
        a, b = self.bounds(grid)
        return 1.0 / b, 1.0 / a


@dataclass
class WeightedEuclidean(FinslerMetric):
    """H(x, p) = k(x) |p| with k > 0; dual |q| / k(x)."""

    k: Param = 1.0
    family = "weighted_euclidean"

    def __post_init__(self):
        if isinstance(self.k, GridField):
            if np.min(self.k.values) <= 0:
                raise ValueError("weight k must be strictly positive")
        elif self.k <= 0:
            raise ValueError("weight k must be strictly positive")

    def primal(self, x, p):
        return _eval_param(self.k, x) * _norm(np.asarray(p, dtype=float))

    def primal_at_directions(self, x, dirs):
        if isinstance(self.k, GridField):
            return np.repeat(self.k.at(x)[:, None], dirs.shape[0], axis=1)
        return np.full(dirs.shape[0], float(self.k))

    def dual(self, x, q):
        return _norm(np.asarray(q, dtype=float)) / _eval_param(self.k, x)

    def grad_dual(self, x, q):
        q = np.asarray(q, dtype=float)
        n = _norm(q)
        if np.any(n == 0.0):
            raise ZeroVector("grad_dual is undefined at q = 0")
        k = np.asarray(_eval_param(self.k, x))
        return q / (k[..., None] * n[..., None])

    def dual_and_grad(self, x, q):
        q = np.asarray(q, dtype=float)
        k = np.asarray(_eval_param(self.k, x))
        n = _norm(q)
        safe = np.where(n == 0.0, 1.0, n)
        grad = q / (k[..., None] * safe[..., None])
        grad = np.where(n[..., None] == 0.0, 0.0, grad)
        return n / k, grad

    def dual_hessian(self, x, q):
        q = np.asarray(q, dtype=float)
        k = np.asarray(_eval_param(self.k, x))
        n = _norm(q)
        safe = np.where(n == 0.0, 1.0, n)
        qh = q / safe[..., None]
        eye = np.broadcast_to(np.eye(2), qh.shape + (2,))
        hess = (eye - qh[..., :, None] * qh[..., None, :]) / (
            np.broadcast_to(k, n.shape)[..., None, None] * safe[..., None, None]
        )
        return np.where(n[..., None, None] == 0.0, 0.0, hess)


@dataclass
class Riemannian(FinslerMetric):
    """H(x, p) = sqrt(p^T A(x) p) for a symmetric positive-definite A."""

    a11: Param = 1.0
    a12: Param = 0.0
    a22: Param = 1.0
    family = "riemannian"

    def _matrix(self, x):
        a11 = np.asarray(_eval_param(self.a11, x), dtype=float)
        a12 = np.asarray(_eval_param(self.a12, x), dtype=float)
        a22 = np.asarray(_eval_param(self.a22, x), dtype=float)
        return np.broadcast_arrays(a11, a12, a22)

    def primal(self, x, p):
        p = np.asarray(p, dtype=float)
        a11, a12, a22 = self._matrix(x)
        px, py = p[..., 0], p[..., 1]
        return np.sqrt(a11 * px * px + 2 * a12 * px * py + a22 * py * py)

    def primal_at_directions(self, x, dirs):
        a11, a12, a22 = self._matrix(x)
        dx, dy = dirs[:, 0], dirs[:, 1]
        return np.sqrt(
            np.multiply.outer(a11, dx * dx)
            + 2 * np.multiply.outer(a12, dx * dy)
            + np.multiply.outer(a22, dy * dy)
        )

    def _inverse(self, x):
        a11, a12, a22 = self._matrix(x)
        det = a11 * a22 - a12 * a12
        return a22 / det, -a12 / det, a11 / det

    def dual(self, x, q):
        q = np.asarray(q, dtype=float)
        i11, i12, i22 = self._inverse(x)
        qx, qy = q[..., 0], q[..., 1]
        return np.sqrt(i11 * qx * qx + 2 * i12 * qx * qy + i22 * qy * qy)

    def grad_dual(self, x, q):
        q = np.asarray(q, dtype=float)
        if np.any(_norm(q) == 0.0):
            raise ZeroVector("grad_dual is undefined at q = 0")
        val, grad = self.dual_and_grad(x, q)
        return grad

    def dual_and_grad(self, x, q):
        q = np.asarray(q, dtype=float)
        i11, i12, i22 = self._inverse(x)
        qx, qy = q[..., 0], q[..., 1]
        ax = i11 * qx + i12 * qy
        ay = i12 * qx + i22 * qy
        val = np.sqrt(ax * qx + ay * qy)
        safe = np.where(val == 0.0, 1.0, val)
        grad = np.stack([ax / safe, ay / safe], axis=-1)
        grad = np.where(val[..., None] == 0.0, 0.0, grad)
        return val, grad

    def dual_hessian(self, x, q):
        # B / H* - (Bq)(Bq)^T / H*^3 with B the inverse matrix field.
        q = np.asarray(q, dtype=float)
        i11, i12, i22 = self._inverse(x)
        qx, qy = q[..., 0], q[..., 1]
        ax = i11 * qx + i12 * qy
        ay = i12 * qx + i22 * qy
        val = np.sqrt(ax * qx + ay * qy)
        safe = np.where(val == 0.0, 1.0, val)
        bq = np.stack([ax, ay], axis=-1)
        B = np.stack(
            [
                np.stack([np.broadcast_to(i11, safe.shape), np.broadcast_to(i12, safe.shape)], axis=-1),
                np.stack([np.broadcast_to(i12, safe.shape), np.broadcast_to(i22, safe.shape)], axis=-1),
            ],
            axis=-2,
        )
        hess = B / safe[..., None, None] - bq[..., :, None] * bq[..., None, :] / safe[..., None, None] ** 3
        return np.where(val[..., None, None] == 0.0, 0.0, hess)


@dataclass
class Polytope(FinslerMetric):
    """H(x, p) = max over polygon vertices of <v, p>, the support function.

    ``vertices`` is a constant (m, 2) array, or a GridField with values of
    shape (ny, nx, m, 2) for location-dependent polygons.  The polygon must
    contain the origin strictly inside so that H is nondegenerate.
    """

    vertices: np.ndarray | GridField = None
    family = "polytope"

    def __post_init__(self):
        if not isinstance(self.vertices, GridField):
            self.vertices = np.asarray(self.vertices, dtype=float)
            if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
                raise ValueError("constant vertices must have shape (m, 2)")
        a, _ = self.bounds()
        if a <= 0:
            raise ValueError("polygon must contain the origin strictly inside")

    def _verts(self, x):
        if isinstance(self.vertices, GridField):
            return self.vertices.at(x)  # (..., m, 2)
        return self.vertices

    def primal(self, x, p):
        p = np.asarray(p, dtype=float)
        v = self._verts(x)
        if isinstance(self.vertices, GridField):
            return np.max(np.sum(v * p[..., None, :], axis=-1), axis=-1)
        return np.max(p @ v.T, axis=-1)

    def primal_at_directions(self, x, dirs):
        if isinstance(self.vertices, GridField):
            v = self._verts(x)  # (M, m, 2)
            return np.max(np.einsum("mkc,dc->mkd", v, dirs), axis=1)
        return np.max(dirs @ self.vertices.T, axis=-1)  # (D,)

    def polar_vertices(self) -> np.ndarray:
        """Vertices of the polar polygon; the dual is their pairing maximum.

        Each hull edge with outward normal n and support value s contributes
        the polar vertex n / s, so H*(q) = max_i <w_i, q> exactly.  Only
        available for location-independent polygons.
        """
        if isinstance(self.vertices, GridField):
            raise ValueError("polar vertices need location-independent polygons")
        cached = getattr(self, "_polar", None)
        if cached is not None:
            return cached
        from scipy.spatial import ConvexHull

        hull = ConvexHull(self.vertices)
        pts = self.vertices[hull.vertices]  # counterclockwise
        out = []
        for a, b in zip(pts, np.roll(pts, -1, axis=0)):
            edge = b - a
            n = np.array([edge[1], -edge[0]])
            n /= np.linalg.norm(n)
            s = float(n @ a)
            if s < 0:  # orientation flip: keep the outward normal
                n, s = -n, -s
            out.append(n / s)
        self._polar = np.array(out)
        return self._polar

    def smoothed_dual_and_grad(self, x, q, eps: float):
        # Angular creases of the piecewise-linear dual defeat line searches,
        # so the solver sees a log-sum-exp mollification over the polar
        # vertices: smooth in every direction, convex, and within
        # eps log(m) of the exact gauge.
        if isinstance(self.vertices, GridField):
            return super().smoothed_dual_and_grad(x, q, eps)
        W = self.polar_vertices()
        a = np.asarray(q, dtype=float) @ W.T
        amax = np.max(a, axis=-1, keepdims=True)
        lam = np.exp((a - amax) / eps)
        norm = np.sum(lam, axis=-1, keepdims=True)
        lam = lam / norm
        val = amax[..., 0] + eps * np.log(norm[..., 0])
        grad = lam @ W
        return val, grad

    def smoothed_dual_hessian(self, x, q, eps: float):
        if isinstance(self.vertices, GridField):
            return super().smoothed_dual_hessian(x, q, eps)
        W = self.polar_vertices()
        a = np.asarray(q, dtype=float) @ W.T
        amax = np.max(a, axis=-1, keepdims=True)
        lam = np.exp((a - amax) / eps)
        lam = lam / np.sum(lam, axis=-1, keepdims=True)
        mean = lam @ W
        second = np.einsum("...k,ki,kj->...ij", lam, W, W)
        return (second - mean[..., :, None] * mean[..., None, :]) / eps

    def smoothed_dual_at_zero(self, eps: float) -> float:
        if isinstance(self.vertices, GridField):
            return eps
        m = self.polar_vertices().shape[0]
        return eps * float(np.log(m))


@dataclass
class Shifted(FinslerMetric):
    """H(x, p) = |p| + b(x).p, an asymmetric drift gauge with |b(x)| < 1."""

    b: np.ndarray | GridField = (0.0, 0.0)
    family = "shifted"

    def __post_init__(self):
        if isinstance(self.b, GridField):
            if np.max(_norm(self.b.values)) >= 1.0:
                raise ValueError("drift must satisfy |b(x)| < 1 everywhere")
        else:
            self.b = np.asarray(self.b, dtype=float)
            if _norm(self.b) >= 1.0:
                raise ValueError("drift must satisfy |b| < 1")

    def _b(self, x):
        if isinstance(self.b, GridField):
            return self.b.at(x)
        return self.b

    def primal(self, x, p):
        p = np.asarray(p, dtype=float)
        return _norm(p) + np.sum(self._b(x) * p, axis=-1)

    def primal_at_directions(self, x, dirs):
        if isinstance(self.b, GridField):
            return 1.0 + self.b.at(x) @ dirs.T
        return 1.0 + dirs @ self.b

    def primal_unit(self, x, d):
        return 1.0 + np.sum(self._b(x) * d, axis=-1)


METRIC_FAMILIES = {
    cls.family: cls for cls in (WeightedEuclidean, Riemannian, Polytope, Shifted)
}


# ---------------------------------------------------------------------------
# Hamiltonian sublevel sets and their support functions
# ---------------------------------------------------------------------------


@dataclass
class SublevelSet:
    """Convex compact zero-sublevel set Z(x) of a Hamiltonian, 0 strictly inside.

    ``shape`` is one of "ball" (radius parameter), "ellipse" (matrix
    parameters of {p : p^T A p <= 1}) or "polytope" (vertex list).
    """

    shape: str
    radius: Param = 1.0
    a11: Param = 1.0
    a12: Param = 0.0
    a22: Param = 1.0
    vertices: np.ndarray | GridField | None = None

    def __post_init__(self):
        if self.shape not in ("ball", "ellipse", "polytope"):
            raise ValueError(f"unknown sublevel shape {self.shape!r}")
        if self.shape == "ball":
            r = self.radius.values if isinstance(self.radius, GridField) else self.radius
            if np.min(r) <= 0:
                raise ValueError("ball radius must be positive")
        if self.shape == "polytope":
            # Delegates the strict-interior check to the metric constructor.
            Polytope(self.vertices)

    def support(self, x: np.ndarray, q: np.ndarray) -> np.ndarray:
        """sigma(x, q) = sup over Z(x) of <p, q>."""
        return self.as_metric().primal(x, q)

    def as_metric(self) -> FinslerMetric:
        """The support function of Z is itself a Finsler metric."""
        if self.shape == "ball":
            return WeightedEuclidean(self.radius)
        if self.shape == "ellipse":
            # Support of {p^T A p <= 1} is sqrt(q^T A^{-1} q).
            a11 = self.a11 if not isinstance(self.a11, GridField) else self.a11
            probe = Riemannian(self.a11, self.a12, self.a22)

            def inv(p11, p12, p22):
                det = p11 * p22 - p12 * p12
                return p22 / det, -p12 / det, p11 / det

            if any(isinstance(p, GridField) for p in (self.a11, self.a12, self.a22)):
                g = next(p.grid for p in (self.a11, self.a12, self.a22) if isinstance(p, GridField))
                shape = g.shape
                p11 = np.broadcast_to(np.asarray(_as_values(self.a11)), shape)
                p12 = np.broadcast_to(np.asarray(_as_values(self.a12)), shape)
                p22 = np.broadcast_to(np.asarray(_as_values(self.a22)), shape)
                i11, i12, i22 = inv(p11, p12, p22)
                return Riemannian(GridField(g, i11), GridField(g, i12), GridField(g, i22))
            i11, i12, i22 = inv(float(self.a11), float(self.a12), float(self.a22))
            return Riemannian(i11, i12, i22)
        return Polytope(self.vertices)


def _as_values(p: Param):
    return p.values if isinstance(p, GridField) else p


def support_function(Z: SublevelSet, x: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Support function sigma(x, q) of the sublevel set Z at location x."""
    return Z.support(x, q)


# ---------------------------------------------------------------------------
# Identity checks
# ---------------------------------------------------------------------------


@dataclass
class IdentityReport:
    """Worst violations of the primal/dual identities over a sample set."""

    cauchy_schwarz: float
    pairing_bound: float
    uniform_pairing_bound: float
    euler: float
    normalization: float
    n_samples: int

    @property
    def max_violation(self) -> float:
        return max(
            self.cauchy_schwarz,
            self.pairing_bound,
            self.uniform_pairing_bound,
            self.euler,
            self.normalization,
        )


def check_identities(
    metric: FinslerMetric,
    samples: list[tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None,
    *,
    xs: np.ndarray | None = None,
    ps: np.ndarray | None = None,
    qs: np.ndarray | None = None,
    grid: Grid | None = None,
) -> IdentityReport:
    """Evaluate the dual-pairing identities on (x, p, q) samples.

    Checks, in order: the Cauchy-Schwarz style bound <p,q> <= H(x,p) H*(x,q),
    the convexity bound dH*(x,p).q <= H*(x,q), its uniform version against
    the dual upper bound, Euler's identity dH*(x,q).q = H*(x,q), and the
    normalization H(x, dH*(x,q)) = 1.  Violations are signed excesses, so a
    perfect evaluator reports zeros.
    """
    if samples is not None:
        xs = np.array([s[0] for s in samples], dtype=float)
        ps = np.array([s[1] for s in samples], dtype=float)
        qs = np.array([s[2] for s in samples], dtype=float)
    if xs is None or ps is None or qs is None or len(xs) == 0:
        raise ValueError("need a nonempty sample list")

    hp = metric.primal(xs, ps)
    hq, dq = metric.dual_and_grad(xs, qs)
    _, dp = metric.dual_and_grad(xs, ps)

    cs = np.max(np.sum(ps * qs, axis=-1) - hp * hq)
    pairing = np.max(np.sum(dp * qs, axis=-1) - hq)
    _, b_tilde = metric.dual_bounds(grid)
    uniform = np.max(np.abs(np.sum(dp * qs, axis=-1)) - b_tilde * _norm(qs))
    euler = np.max(np.abs(np.sum(dq * qs, axis=-1) - hq))
    normal = np.max(np.abs(metric.primal(xs, dq) - 1.0))

    return IdentityReport(
        cauchy_schwarz=float(max(cs, 0.0)),
        pairing_bound=float(max(pairing, 0.0)),
        uniform_pairing_bound=float(max(uniform, 0.0)),
        euler=float(euler),
        normalization=float(normal),
        n_samples=len(xs),
    )


def numeric_dual(fn: Callable, x: np.ndarray, q: np.ndarray, n_dirs: int = N_SCAN_DIRECTIONS):
    """Brute-force dual of an arbitrary gauge by a plain direction scan.

    Used as an independent oracle for the refined dual evaluators: returns
    max over n_dirs unit directions d of <d, q> / fn(x, d), with no
    refinement step.
    """
    dirs = _unit_directions(n_dirs)
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    q = np.asarray(q, dtype=float).reshape(-1, 2)
    best = np.full(x.shape[0], -np.inf)
    for d in dirs:
        db = np.broadcast_to(d, x.shape)
        best = np.maximum(best, np.sum(q * db, axis=-1) / fn(x, db))
    return np.maximum(best, 0.0)
