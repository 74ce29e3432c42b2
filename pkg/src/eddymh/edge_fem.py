"""Lowest-order Nedelec (edge) element discretization on tetrahedra.

The basis function attached to edge e = (a, b) is the Whitney form
``phi_e = lambda_a grad lambda_b - lambda_b grad lambda_a`` with
``curl phi_e = 2 grad lambda_a x grad lambda_b`` constant per tet.  Global
orientation follows ascending vertex indices; the per-tet signs from the mesh
make the assembled fields tangentially continuous.
"""

import functools
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from eddymh.mesh import LOCAL_EDGES
from eddymh.quadrature import (
    TET_P2_BARY,
    TET_P2_WEIGHTS,
    TET_P5_BARY,
    TET_P5_POINTS,
    TET_P5_WEIGHTS,
)

_EA = LOCAL_EDGES[:, 0]
_EB = LOCAL_EDGES[:, 1]


@dataclass(eq=False)
class SparseSym:
    """Square sparse matrix in compressed-row form.

    Attributes
    ----------
    dimension : int
    indptr, indices, values : ndarray
        CSR arrays.
    symmetric : bool
        Set for Galerkin matrices (mass, stiffness); unset for pairings.
    """

    dimension: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    symmetric: bool = True

    @classmethod
    def from_csr(cls, A, symmetric=True):
        A = A.tocsr()
        A.sum_duplicates()
        A.eliminate_zeros()
        return cls(A.shape[0], A.indptr, A.indices, A.data, symmetric)

    def tocsr(self):
        return sparse.csr_matrix(
            (self.values, self.indices, self.indptr),
            shape=(self.dimension, self.dimension),
        )

    def toarray(self):
        return self.tocsr().toarray()

    def __matmul__(self, other):
        return self.tocsr() @ other


@dataclass(eq=False)
class DofMap:
    """Mapping between all mesh edges and the free (interior) DOFs.

    Boundary edges carry the essential condition y x n = 0 and are removed by
    row/column elimination.
    """

    num_edges: int
    free: np.ndarray
    index: np.ndarray  # edge -> free dof, -1 if constrained

    @classmethod
    def from_mesh(cls, mesh):
        free = np.setdiff1d(np.arange(mesh.num_edges), mesh.boundary_edges)
        index = np.full(mesh.num_edges, -1, dtype=np.int64)
        index[free] = np.arange(free.size)
        return cls(mesh.num_edges, free, index)

    @property
    def num_free(self):
        return self.free.size

    def restrict(self, full_vec):
        return np.asarray(full_vec)[self.free]

    def extend(self, free_vec):
        out = np.zeros(self.num_edges)
        out[self.free] = free_vec
        return out


@dataclass(eq=False)
class Coefficients:
    """Piecewise-constant conductivity and reluctivity, one value per tet."""

    sigma: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        self.sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        self.nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        if np.any(self.sigma <= 0.0) or np.any(self.nu <= 0.0):
            raise ValueError("sigma and nu must be strictly positive")
        if not (np.all(np.isfinite(self.sigma)) and np.all(np.isfinite(self.nu))):
            raise ValueError("sigma and nu must be finite")

    @classmethod
    def constant(cls, mesh, sigma=1.0, nu=1.0):
        nt = mesh.num_tets
        return cls(np.full(nt, float(sigma)), np.full(nt, float(nu)))

    @property
    def sigma_min(self):
        return float(self.sigma.min())

    @property
    def sigma_max(self):
        return float(self.sigma.max())

    @property
    def nu_min(self):
        return float(self.nu.min())

    @property
    def nu_max(self):
        return float(self.nu.max())


@dataclass(eq=False)
class BasisData:
    """Per-mesh geometry and basis values shared by assembly and estimation.

    ``phi5``/``phi2`` hold the globally signed basis values at the degree-5
    and degree-2 quadrature points; ``curl`` the (constant) signed curls.
    """

    vols: np.ndarray  # (nt,) positive volumes
    grads: np.ndarray  # (nt, 4, 3) barycentric gradients
    points: np.ndarray  # (nt, nq5, 3) degree-5 physical points
    phi5: np.ndarray  # (nt, nq5, 6, 3)
    phi2: np.ndarray  # (nt, nq2, 6, 3)
    phibar: np.ndarray  # (nt, 6, 3) basis at centroid
    curl: np.ndarray  # (nt, 6, 3)


@functools.lru_cache(maxsize=8)
def basis_data(mesh):
    v = mesh.vertices[mesh.tets]  # (nt, 4, 3)
    J = v[:, 1:] - v[:, :1]  # rows are edge vectors
    vols = np.linalg.det(J) / 6.0
    if np.any(vols <= 1e-14):
        raise ValueError("mesh contains a degenerate or misoriented tet")
    Jinv = np.linalg.inv(J)
    g123 = np.transpose(Jinv, (0, 2, 1))
    grads = np.concatenate([-g123.sum(axis=1, keepdims=True), g123], axis=1)

    points = v[:, :1] + np.einsum("qj,tji->tqi", TET_P5_POINTS, J)
    signs = mesh.tet_edge_signs.astype(float)

    def signed_phi(bary):
        phi = (
            bary[None, :, _EA, None] * grads[:, None, _EB, :]
            - bary[None, :, _EB, None] * grads[:, None, _EA, :]
        )
        return phi * signs[:, None, :, None]

    phi5 = signed_phi(TET_P5_BARY)
    phi2 = signed_phi(TET_P2_BARY)
    phibar = 0.25 * (grads[:, _EB, :] - grads[:, _EA, :]) * signs[:, :, None]
    curl = 2.0 * np.cross(grads[:, _EA, :], grads[:, _EB, :]) * signs[:, :, None]
    return BasisData(vols, grads, points, phi5, phi2, phibar, curl)


def element_matrices(verts, sigma=1.0, nu=1.0):
    """Local 6x6 mass, weighted mass, and curl-curl stiffness matrices.

    Local edge ordering follows ``LOCAL_EDGES``; orientation is by local
    vertex order (global signs are applied during assembly).

    Parameters
    ----------
    verts : array_like, shape (4, 3)
    sigma, nu : float
        Constant coefficient values on this tet.

    Returns
    -------
    mass, weighted_mass, stiffness : ndarray, shape (6, 6)
    """
    verts = np.asarray(verts, dtype=float).reshape(4, 3)
    J = verts[1:] - verts[:1]
    vol = np.linalg.det(J) / 6.0
    if abs(vol) < 1e-14:
        raise ValueError("degenerate tet")
    g123 = np.linalg.inv(J).T
    grads = np.vstack([-g123.sum(axis=0, keepdims=True), g123])
    phi = (
        TET_P2_BARY[:, _EA, None] * grads[None, _EB, :]
        - TET_P2_BARY[:, _EB, None] * grads[None, _EA, :]
    )
    mass = 6.0 * abs(vol) * np.einsum("q,qei,qfi->ef", TET_P2_WEIGHTS, phi, phi)
    curls = 2.0 * np.cross(grads[_EA], grads[_EB])
    stiffness = nu * abs(vol) * (curls @ curls.T)
    return mass, sigma * mass, stiffness


def _scatter(mesh, local):
    ne = mesh.num_edges
    rows = np.broadcast_to(mesh.tet_edges[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(mesh.tet_edges[:, None, :], local.shape).ravel()
    A = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(ne, ne))
    return A.tocsr()


def assemble(mesh, coefficients, kind, dofmap=None):
    """Assemble a global matrix on free DOFs (all edges if no dofmap).

    Parameters
    ----------
    kind : {"mass", "weighted_mass", "stiffness"}
        Mass ``(phi_i, phi_j)``, weighted mass with sigma, or curl-curl
        stiffness with nu.
    """
    bd = basis_data(mesh)
    if kind == "stiffness":
        w = coefficients.nu * bd.vols
        local = np.einsum("t,tei,tfi->tef", w, bd.curl, bd.curl)
    elif kind in ("mass", "weighted_mass"):
        local = np.einsum(
            "q,tqei,tqfi->tef", TET_P2_WEIGHTS, bd.phi2, bd.phi2
        ) * (6.0 * bd.vols)[:, None, None]
        if kind == "weighted_mass":
            local = local * coefficients.sigma[:, None, None]
    else:
        raise ValueError(f"unknown kind {kind!r}")
    # enforce bitwise symmetry lost to summation-order roundoff
    local = 0.5 * (local + local.transpose(0, 2, 1))
    A = _scatter(mesh, local)
    if dofmap is not None:
        A = A[dofmap.free][:, dofmap.free]
    return SparseSym.from_csr(A, symmetric=True)


def assemble_cross(mesh, weight, dofmap=None):
    """Pairing matrix C[i, j] = int w phi_i . curl phi_j (not symmetric)."""
    bd = basis_data(mesh)
    w = np.broadcast_to(np.asarray(weight, dtype=float), (mesh.num_tets,))
    local = np.einsum("t,tei,tfi->tef", w * bd.vols, bd.phibar, bd.curl)
    A = _scatter(mesh, local)
    if dofmap is not None:
        A = A[dofmap.free][:, dofmap.free]
    return SparseSym.from_csr(A, symmetric=False)


def assemble_load(mesh, dofmap, f):
    """Load vector (f, phi_e) using the degree-5 rule.

    ``f`` maps an (m, 3) array of points to (m, 3) field values.
    """
    bd = basis_data(mesh)
    nt, nq = bd.points.shape[:2]
    F = np.asarray(f(bd.points.reshape(-1, 3))).reshape(nt, nq, 3)
    L = np.einsum("q,tqi,tqei->te", TET_P5_WEIGHTS, F, bd.phi5) * (6.0 * bd.vols)[:, None]
    full = np.zeros(mesh.num_edges)
    np.add.at(full, mesh.tet_edges, L)
    return full[dofmap.free] if dofmap is not None else full


def assemble_curl_load(mesh, dofmap, f):
    """Load vector (f, curl phi_e) using the degree-5 rule."""
    bd = basis_data(mesh)
    nt, nq = bd.points.shape[:2]
    F = np.asarray(f(bd.points.reshape(-1, 3))).reshape(nt, nq, 3)
    Fint = np.einsum("q,tqi->ti", TET_P5_WEIGHTS, F) * (6.0 * bd.vols)[:, None]
    L = np.einsum("tei,ti->te", bd.curl, Fint)
    full = np.zeros(mesh.num_edges)
    np.add.at(full, mesh.tet_edges, L)
    return full[dofmap.free] if dofmap is not None else full


def fe_values(mesh, coef):
    """FE field values at the degree-5 quadrature points, shape (nt, nq, 3)."""
    bd = basis_data(mesh)
    return np.einsum("tqei,te->tqi", bd.phi5, np.asarray(coef)[mesh.tet_edges])


def fe_curls(mesh, coef):
    """Per-tet constant curl of the FE field, shape (nt, 3)."""
    bd = basis_data(mesh)
    return np.einsum("tei,te->ti", bd.curl, np.asarray(coef)[mesh.tet_edges])


def integrate_squared(mesh, values, weight=None):
    """Integrate |values|^2 over the mesh; values sampled like ``fe_values``."""
    bd = basis_data(mesh)
    sq = np.einsum("tqi,tqi->tq", values, values)
    per_tet = 6.0 * bd.vols * (sq @ TET_P5_WEIGHTS)
    if weight is not None:
        per_tet = per_tet * weight
    return float(per_tet.sum())


def field_norms(mesh, field, weight=None, curl=None):
    """Weighted L2 norm squared and curl seminorm squared of a field.

    Parameters
    ----------
    field : ndarray or callable
        Edge coefficient vector over all edges (computed exactly), or a
        point evaluator integrated with the degree-5 rule.
    weight : None, float, or per-tet array
    curl : callable, optional
        Curl evaluator for analytic fields; without it the seminorm is
        returned as None for callables.

    Returns
    -------
    (norm_sq, curl_sq)
    """
    bd = basis_data(mesh)
    nt = mesh.num_tets
    w = np.ones(nt) if weight is None else np.broadcast_to(np.asarray(weight, float), (nt,))
    if callable(field):
        nq = bd.points.shape[1]
        F = np.asarray(field(bd.points.reshape(-1, 3))).reshape(nt, nq, 3)
        norm_sq = integrate_squared(mesh, F, w)
        if curl is None:
            return norm_sq, None
        C = np.asarray(curl(bd.points.reshape(-1, 3))).reshape(nt, nq, 3)
        return norm_sq, integrate_squared(mesh, C, w)
    coef = np.asarray(field, dtype=float)
    vals2 = np.einsum("tqei,te->tqi", bd.phi2, coef[mesh.tet_edges])
    sq = np.einsum("tqi,tqi->tq", vals2, vals2)
    norm_sq = float((6.0 * bd.vols * w * (sq @ TET_P2_WEIGHTS)).sum())
    cv = fe_curls(mesh, coef)
    curl_sq = float((w * bd.vols * np.einsum("ti,ti->t", cv, cv)).sum())
    return norm_sq, curl_sq


def difference_norms(mesh, coef, f, curl_f, weight=None):
    """Norms of (f - FE field): returns (L2 norm^2, curl seminorm^2).

    The FE parts are linear/constant per tet, so the degree-5 rule leaves
    only the analytic-data approximation error.
    """
    bd = basis_data(mesh)
    nt, nq = bd.points.shape[:2]
    w = None if weight is None else np.broadcast_to(np.asarray(weight, float), (nt,))
    F = np.asarray(f(bd.points.reshape(-1, 3))).reshape(nt, nq, 3) - fe_values(mesh, coef)
    norm_sq = integrate_squared(mesh, F, w)
    C = np.asarray(curl_f(bd.points.reshape(-1, 3))).reshape(nt, nq, 3) - fe_curls(
        mesh, coef
    )[:, None, :]
    curl_sq = integrate_squared(mesh, C, w)
    return norm_sq, curl_sq


def interpolate_tangential(mesh, f, points=4):
    """Edge DOFs of an analytic field: int_e f . t ds per global edge."""
    x, wx = np.polynomial.legendre.leggauss(points)
    s = 0.5 * (x + 1.0)
    a = mesh.vertices[mesh.edges[:, 0]]
    b = mesh.vertices[mesh.edges[:, 1]]
    tang = b - a  # includes edge length
    pts = a[:, None, :] + s[None, :, None] * tang[:, None, :]
    F = np.asarray(f(pts.reshape(-1, 3))).reshape(mesh.num_edges, points, 3)
    return 0.5 * np.einsum("q,eqi,ei->e", wx, F, tang)


def dump_matrix(A):
    """Coordinate text dump (row col value per line) for cross-checks."""
    coo = A.tocsr().tocoo() if isinstance(A, SparseSym) else sparse.coo_matrix(A)
    lines = [f"{i} {j} {v:.17g}" for i, j, v in zip(coo.row, coo.col, coo.data)]
    return "\n".join(lines) + "\n"
