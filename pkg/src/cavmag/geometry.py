"""NV crystallographic axis algebra.

The four NV symmetry axes point along the cube diagonals and form a
non-orthogonal basis with the Gram structure n_i . n_j = 4/3 delta_ij - 1/3.
This module provides the canonical axis set, rotations of it, projections of
fields onto it, and the recovery of a field magnitude from three projection
magnitudes.
"""

from dataclasses import dataclass

import numpy as np

_UNIT_TOL = 1e-12
_ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class NvBasis:
    """The four NV unit vectors plus derived projection matrices.

    axes : (4, 3) array, rows are the unit vectors n_1..n_4.
    n3 : (3, 3) matrix whose columns are the first three axes.
    a_vec : (3,) vector of +-1 entries with n_4 = n3 @ a_vec.
    """

    axes: np.ndarray
    n3: np.ndarray
    a_vec: np.ndarray

    def __post_init__(self):
        axes = np.asarray(self.axes, dtype=float)
        if axes.shape != (4, 3):
            raise ValueError("axes must be a (4, 3) array")
        norms = np.linalg.norm(axes, axis=1)
        if np.max(np.abs(norms - 1.0)) > _UNIT_TOL:
            raise ValueError("axes must have unit norm")
        gram = axes @ axes.T
        expected = (4.0 / 3.0) * np.eye(4) - 1.0 / 3.0
        if np.max(np.abs(gram - expected)) > 1e-9:
            raise ValueError("axes do not satisfy the tetrahedral Gram structure")
        a = np.asarray(self.a_vec, dtype=float)
        if a.shape != (3,) or np.max(np.abs(np.abs(a) - 1.0)) > _UNIT_TOL:
            raise ValueError("a_vec entries must be exactly +1 or -1")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "n3", np.asarray(self.n3, dtype=float))
        object.__setattr__(self, "a_vec", a)

    @property
    def n4(self) -> np.ndarray:
        """(3, 4) matrix whose columns are all four axes."""
        return self.axes.T


def canonical_basis() -> NvBasis:
    """Return the conventional axis set in the crystal frame.

    The vectors are (1,1,1), (1,-1,-1), (-1,1,-1), (-1,-1,1), each divided by
    sqrt(3).  a_vec solves n3 @ a = n_4 exactly (here a = (-1,-1,-1), since
    n_4 = -(n_1 + n_2 + n_3)).
    """
    axes = np.array(
        [
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ]
    ) / np.sqrt(3.0)
    n3 = axes[:3].T.copy()
    a_vec = np.array([-1.0, -1.0, -1.0])
    return NvBasis(axes=axes, n3=n3, a_vec=a_vec)


def rotate_basis(basis: NvBasis, u: np.ndarray) -> NvBasis:
    """Rotate every axis of `basis` by the orthogonal matrix `u`.

    Parameters
    ----------
    basis : NvBasis
    u : (3, 3) orthogonal matrix (u.T @ u = I to 1e-10).

    Returns
    -------
    NvBasis with axes u @ n_i.  a_vec is unchanged: the linear relation
    n_4 = n3 @ a is preserved under any invertible map.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (3, 3) or np.max(np.abs(u.T @ u - np.eye(3))) > _ORTHO_TOL:
        raise ValueError("u must be orthogonal to within 1e-10")
    axes = basis.axes @ u.T
    return NvBasis(axes=axes, n3=axes[:3].T.copy(), a_vec=basis.a_vec.copy())


def project(b: np.ndarray, basis: NvBasis) -> np.ndarray:
    """Project a field onto all four axes.

    Parameters
    ----------
    b : (3,) field vector in tesla, or (3, n) time series.
    basis : NvBasis

    Returns
    -------
    (4,) or (4, n) array of projections, p = N4^T b.  Satisfies
    ||b||^2 = (3/4) ||p||^2.
    """
    return basis.axes @ np.asarray(b, dtype=float)


def magnitude_from_three(p_abs) -> float:
    """Recover ||B|| from the absolute projections onto three axes.

    Parameters
    ----------
    p_abs : (3,) absolute projections in tesla, sorted descending
        (|p1| >= |p2| >= |p3|).  The caller must guarantee that the
        unmeasured fourth axis carries the smallest projection magnitude.

    Returns
    -------
    float, sqrt((3/4) (p1^2 + p2^2 + p3^2 + (|p1| - |p2| - |p3|)^2)).

    Notes
    -----
    The result uses absolute values only, so it is invariant under sign flips
    of any input component.  At an exact tie |p3| = |p4| the reconstruction
    is ambiguous in principle; the formula is continuous across the tie, so
    ties are accepted as-is.
    """
    p = np.abs(np.asarray(p_abs, dtype=float))
    if p.shape != (3,):
        raise ValueError("expected exactly three projections")
    if not (p[0] >= p[1] >= p[2]):
        raise ValueError("projections must be sorted |p1| >= |p2| >= |p3|")
    p4 = p[0] - p[1] - p[2]
    return float(np.sqrt(0.75 * (p[0] ** 2 + p[1] ** 2 + p[2] ** 2 + p4**2)))
