"""Structured tetrahedral meshes of box domains with edge incidence data.

Boxes are subdivided into ``n**3`` subcubes, each split into six tetrahedra
sharing the subcube's main diagonal (Kuhn subdivision).  All faces between
neighbouring subcubes match, so the mesh is conforming by construction and
no geometric tolerances enter anywhere.
"""

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import sparse

# local edges of a tet, lexicographic in the local vertex numbers
LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
_LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])


@dataclass(eq=False)
class TetMesh:
    """Tetrahedral mesh with precomputed edge and boundary incidence.

    Attributes
    ----------
    vertices : ndarray, shape (nv, 3)
    tets : ndarray, shape (nt, 4)
        Vertex indices, ordered so every tet has positive signed volume.
    edges : ndarray, shape (ne, 2)
        Global edges as vertex pairs (a, b) with a < b, lexicographically
        sorted.
    tet_edges : ndarray, shape (nt, 6)
        Global edge index of each local edge (local pairs ``LOCAL_EDGES``).
    tet_edge_signs : ndarray, shape (nt, 6)
        +1 where the local edge runs from lower to higher global vertex
        index, -1 otherwise.
    boundary_edges : ndarray
        Sorted indices of edges lying on a boundary face.
    boundary_nodes : ndarray
        Sorted indices of vertices lying on a boundary face.
    """

    vertices: np.ndarray
    tets: np.ndarray
    edges: np.ndarray
    tet_edges: np.ndarray
    tet_edge_signs: np.ndarray
    boundary_edges: np.ndarray
    boundary_nodes: np.ndarray

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_tets(self):
        return self.tets.shape[0]

    @property
    def num_edges(self):
        return self.edges.shape[0]

    def interior_nodes(self):
        return np.setdiff1d(np.arange(self.num_vertices), self.boundary_nodes)


def tet_volumes(vertices, tets):
    """Signed volumes of the tets given by index quadruples."""
    v = vertices[tets]
    return np.linalg.det(v[:, 1:] - v[:, :1]) / 6.0


def _edge_incidence(tets, num_vertices):
    """Extract global edges and the per-tet (edge index, sign) tables."""
    pairs = tets[:, LOCAL_EDGES]  # (nt, 6, 2)
    lo = pairs.min(axis=2)
    hi = pairs.max(axis=2)
    signs = np.where(pairs[:, :, 0] < pairs[:, :, 1], 1, -1).astype(np.int8)
    keys = lo.astype(np.int64) * num_vertices + hi
    unique_keys, inverse = np.unique(keys.ravel(), return_inverse=True)
    tet_edges = inverse.reshape(tets.shape[0], 6).astype(np.int64)
    edges = np.column_stack(divmod(unique_keys, num_vertices))
    return edges, tet_edges, signs


def _boundary_info(tets, edges, num_vertices):
    """Boundary nodes and edges via face incidence counting.

    A triangular face belonging to exactly one tet is a boundary face; an
    edge is boundary iff it lies on at least one such face.
    """
    faces = np.sort(tets[:, _LOCAL_FACES], axis=2).reshape(-1, 3)
    unique_faces, counts = np.unique(faces, axis=0, return_counts=True)
    bfaces = unique_faces[counts == 1]
    boundary_nodes = np.unique(bfaces)
    face_pairs = np.sort(bfaces[:, [[0, 1], [0, 2], [1, 2]]], axis=2).reshape(-1, 2)
    bkeys = np.unique(face_pairs[:, 0].astype(np.int64) * num_vertices + face_pairs[:, 1])
    edge_keys = edges[:, 0].astype(np.int64) * num_vertices + edges[:, 1]
    boundary_edges = np.searchsorted(edge_keys, bkeys)
    return boundary_edges, boundary_nodes


def build_box_mesh(n, box=(1.0, 1.0, 1.0)):
    """Mesh the box ``[0, box[0]] x [0, box[1]] x [0, box[2]]``.

    Parameters
    ----------
    n : int
        Subdivisions per axis, at least 1.
    box : sequence of 3 floats
        Strictly positive side lengths.

    Returns
    -------
    TetMesh
        ``(n+1)**3`` vertices and ``6 n**3`` tets.
    """
    n = int(n)
    if n < 1:
        raise ValueError("need at least one subdivision per axis")
    box = np.asarray(box, dtype=float)
    if box.shape != (3,) or np.any(box <= 0.0):
        raise ValueError("box extents must be three positive lengths")

    m = n + 1
    grid = np.stack(
        np.meshgrid(
            np.linspace(0.0, box[0], m),
            np.linspace(0.0, box[1], m),
            np.linspace(0.0, box[2], m),
            indexing="ij",
        ),
        axis=-1,
    )
    vertices = grid.reshape(-1, 3)

    def vid(i, j, k):
        return (i * m + j) * m + k

    perms = list(itertools.permutations(range(3)))
    tets = np.empty((6 * n**3, 4), dtype=np.int64)
    t = 0
    for i in range(n):
        for j in range(n):
            for k in range(n):
                base = np.array([i, j, k])
                for p in perms:
                    corners = [base.copy()]
                    c = base.copy()
                    for axis in p:
                        c = c.copy()
                        c[axis] += 1
                        corners.append(c)
                    ids = [vid(*c) for c in corners]
                    # odd permutations give negative volume; swap to fix
                    inversions = sum(
                        p[a] > p[b] for a in range(3) for b in range(a + 1, 3)
                    )
                    if inversions % 2 == 1:
                        ids[2], ids[3] = ids[3], ids[2]
                    tets[t] = ids
                    t += 1

    edges, tet_edges, signs = _edge_incidence(tets, vertices.shape[0])
    boundary_edges, boundary_nodes = _boundary_info(tets, edges, vertices.shape[0])
    return TetMesh(
        vertices=vertices,
        tets=tets,
        edges=edges,
        tet_edges=tet_edges,
        tet_edge_signs=signs,
        boundary_edges=boundary_edges,
        boundary_nodes=boundary_nodes,
    )


def gradient_incidence(mesh, interior_only=False):
    """Node-to-edge incidence map realizing discrete gradients.

    For edge e = (a, b) the map has G[e, b] = +1 and G[e, a] = -1, so that
    (G psi)_e is the tangential edge value of the gradient of the nodal
    function psi.  With ``interior_only`` the columns are restricted to
    interior nodes (nodal functions vanishing on the boundary).

    Returns
    -------
    scipy.sparse.csr_matrix, shape (num_edges, num_nodes)
    """
    ne = mesh.num_edges
    rows = np.repeat(np.arange(ne), 2)
    cols = mesh.edges.ravel()
    vals = np.tile(np.array([-1.0, 1.0]), ne)
    G = sparse.csr_matrix((vals, (rows, cols)), shape=(ne, mesh.num_vertices))
    if interior_only:
        G = G[:, mesh.interior_nodes()]
    return G


def dump_mesh(mesh):
    """Plain-text dump (vertices, tets, edges sections) for cross-checks."""
    lines = ["# vertices"]
    for i, v in enumerate(mesh.vertices):
        lines.append(f"{i} {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    lines.append("# tets")
    for i, t in enumerate(mesh.tets):
        lines.append(f"{i} {t[0]} {t[1]} {t[2]} {t[3]}")
    lines.append("# edges")
    for i, e in enumerate(mesh.edges):
        lines.append(f"{i} {e[0]} {e[1]}")
    return "\n".join(lines) + "\n"
