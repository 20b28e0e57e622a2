"""Direction sets, rotations and quadrature grids on the unit sphere.

Gradient direction sets are generated by minimizing an antipodally
symmetrized Coulomb energy, matching the diffusion-MRI convention that
+g and -g probe the same signal.
"""

import numpy as np

from .errors import InvalidArgumentError

_UNIT_TOL = 1e-12


class DirectionSet:
    """An ordered, non-empty set of unit 3-vectors.

    Parameters
    ----------
    vectors : array_like, shape (n, 3)
        Unit vectors; every row must have Euclidean norm 1 within 1e-12.
    """

    def __init__(self, vectors):
        v = np.array(vectors, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3:
            raise InvalidArgumentError(f"expected shape (n, 3), got {v.shape}")
        if v.shape[0] == 0:
            raise InvalidArgumentError("direction set must be non-empty")
        norms = np.linalg.norm(v, axis=1)
        bad = np.abs(norms - 1.0) > _UNIT_TOL
        if np.any(bad):
            raise InvalidArgumentError(
                f"{int(bad.sum())} direction(s) are not unit vectors "
                f"(worst |norm-1| = {np.abs(norms - 1.0).max():.3e})"
            )
        v.flags.writeable = False
        self.vectors = v

    @classmethod
    def normalized(cls, vectors):
        """Build a set from arbitrary non-zero vectors by normalizing rows."""
        v = np.asarray(vectors, dtype=float)
        norms = np.linalg.norm(v, axis=-1, keepdims=True)
        if np.any(norms == 0.0):
            raise InvalidArgumentError("cannot normalize a zero vector")
        return cls(v / norms)

    def __len__(self):
        return self.vectors.shape[0]

    def __repr__(self):
        return f"DirectionSet(n={len(self)})"


class Rotation:
    """A proper rotation of 3-space (orthonormal matrix, determinant +1)."""

    def __init__(self, matrix):
        m = np.array(matrix, dtype=float)
        if m.shape != (3, 3):
            raise InvalidArgumentError(f"expected 3x3 matrix, got {m.shape}")
        if np.max(np.abs(m.T @ m - np.eye(3))) > _UNIT_TOL:
            raise InvalidArgumentError("matrix is not orthonormal")
        if abs(np.linalg.det(m) - 1.0) > _UNIT_TOL:
            raise InvalidArgumentError("matrix is not a proper rotation (det != +1)")
        m.flags.writeable = False
        self.matrix = m

    def compose(self, other):
        """Rotation equivalent to applying `other` first, then `self`."""
        return Rotation(self.matrix @ other.matrix)

    def inverse(self):
        return Rotation(self.matrix.T)

    def __repr__(self):
        return f"Rotation({self.matrix.tolist()})"


class SphereQuadrature:
    """Nodes and positive weights integrating functions over the sphere."""

    def __init__(self, nodes, weights):
        w = np.array(weights, dtype=float)
        if not isinstance(nodes, DirectionSet):
            nodes = DirectionSet(nodes)
        if w.shape != (len(nodes),):
            raise InvalidArgumentError("weights must match node count")
        if np.any(w <= 0.0):
            raise InvalidArgumentError("quadrature weights must be positive")
        if abs(w.sum() - 4.0 * np.pi) > 1e-10:
            raise InvalidArgumentError(
                f"weights must sum to 4*pi, got {w.sum():.12f}"
            )
        w.flags.writeable = False
        self.nodes = nodes
        self.weights = w

    def integrate(self, values):
        """Integrate sampled values (last axis = nodes) over the sphere."""
        return np.asarray(values, dtype=float) @ self.weights


def _pair_terms(points):
    """Difference/sum norms for all i < j pairs, as flat arrays."""
    i, j = np.triu_indices(points.shape[0], k=1)
    diff = points[i] - points[j]
    summ = points[i] + points[j]
    return i, j, diff, summ


def repulsion_energy(points):
    """Antipodally symmetrized Coulomb energy of a point configuration."""
    points = np.asarray(points, dtype=float)
    if points.shape[0] < 2:
        return 0.0
    _, _, diff, summ = _pair_terms(points)
    dm = np.linalg.norm(diff, axis=1)
    dp = np.linalg.norm(summ, axis=1)
    return float(np.sum(1.0 / dm) + np.sum(1.0 / dp))


def _repulsion_gradient(points):
    n = points.shape[0]
    grad = np.zeros_like(points)
    i, j, diff, summ = _pair_terms(points)
    dm = np.linalg.norm(diff, axis=1)[:, None]
    dp = np.linalg.norm(summ, axis=1)[:, None]
    gm = -diff / dm**3
    gp = -summ / dp**3
    np.add.at(grad, i, gm + gp)
    np.add.at(grad, j, -gm + gp)
    return grad


def _jitter_degenerate(points, rng, tol=1e-8):
    """Perturb configurations with (near-)coincident or antipodal points."""
    for _ in range(100):
        if points.shape[0] < 2:
            return points
        _, _, diff, summ = _pair_terms(points)
        dmin = min(np.linalg.norm(diff, axis=1).min(),
                   np.linalg.norm(summ, axis=1).min())
        if dmin > tol:
            return points
        points = points + 1e-6 * rng.standard_normal(points.shape)
        points /= np.linalg.norm(points, axis=1, keepdims=True)
    raise InvalidArgumentError("could not resolve a degenerate start configuration")


def generate_uniform_directions(n, seed, iterations=1000):
    """Spread n directions over the sphere by electrostatic repulsion.

    Starts from a seeded random configuration and runs projected gradient
    descent with step halving on the pairwise energy
    ``sum_{i<j} 1/|d_i - d_j| + 1/|d_i + d_j|``; the antipodal term makes
    +d and -d equivalent. Energy never increases over iterations, and the
    result is deterministic for fixed (n, seed, iterations).

    Parameters
    ----------
    n : int
        Number of directions, >= 1.
    seed : int
        Seed for the starting configuration.
    iterations : int
        Maximum descent iterations; 0 returns the seeded random start.

    Returns
    -------
    DirectionSet
    """
    if n < 1:
        raise InvalidArgumentError("need at least one direction")
    if iterations < 0:
        raise InvalidArgumentError("iterations must be >= 0")
    rng = np.random.default_rng(seed)
    points = rng.standard_normal((n, 3))
    points /= np.linalg.norm(points, axis=1, keepdims=True)
    points = _jitter_degenerate(points, rng)
    if n == 1:
        return DirectionSet(points)

    energy = repulsion_energy(points)
    step = 0.1
    for _ in range(iterations):
        grad = _repulsion_gradient(points)
        # project onto the tangent plane of each point
        grad -= np.sum(grad * points, axis=1, keepdims=True) * points
        moved = False
        for _ in range(40):
            cand = points - step * grad
            cand /= np.linalg.norm(cand, axis=1, keepdims=True)
            cand_energy = repulsion_energy(cand)
            if cand_energy < energy:
                points, energy = cand, cand_energy
                step *= 1.5
                moved = True
                break
            step *= 0.5
        if not moved:
            break
    return DirectionSet(points)


def _rotation_from_quaternion(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def haar_rotation(rng):
    """Draw one Haar-uniform rotation from an existing generator."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return Rotation(_rotation_from_quaternion(q))


def random_rotation(seed):
    """Haar-uniform random rotation, deterministic per seed.

    Draws a quaternion from four seeded Gaussians and normalizes it; the
    induced rotation matrix is uniform on SO(3).
    """
    return haar_rotation(np.random.default_rng(seed))


def rotate_directions(dirs, rotation):
    """Apply a rotation to every direction, preserving order."""
    out = dirs.vectors @ rotation.matrix.T
    # rotations are isometries; renormalize only to scrub accumulated roundoff
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return DirectionSet(out)


def gauss_sphere_quadrature(n_polar, n_azimuth):
    """Product quadrature: Gauss-Legendre in cos(theta) x uniform azimuth.

    Exactly integrates spherical polynomials with polar degree up to
    2*n_polar - 1 and azimuthal frequency up to n_azimuth - 1.

    Parameters
    ----------
    n_polar, n_azimuth : int
        Node counts along each factor, both >= 1.

    Returns
    -------
    SphereQuadrature
    """
    if n_polar < 1 or n_azimuth < 1:
        raise InvalidArgumentError("node counts must be >= 1")
    x, wx = np.polynomial.legendre.leggauss(n_polar)
    phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth

    ct, pp = np.meshgrid(x, phi, indexing="ij")
    st = np.sqrt(1.0 - ct**2)
    nodes = np.stack(
        [st * np.cos(pp), st * np.sin(pp), ct], axis=-1
    ).reshape(-1, 3)
    nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
    weights = np.repeat(wx, n_azimuth) * (2.0 * np.pi / n_azimuth)
    return SphereQuadrature(DirectionSet(nodes), weights)
