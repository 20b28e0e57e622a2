"""Synthetic multi-shell diffusion data with paired ground-truth FODs.

Voxels are mixtures of one to three Gaussian tensor compartments; the
matching orientation distribution is a Watson mixture projected onto
even spherical harmonics. Each source voxel is augmented with jointly
rotated copies: the rotation is applied to the compartment orientations
and both the signal and the FOD are regenerated from the rotated model,
keeping the pair exactly consistent. Rows that share a source voxel
carry one block id so cross-validation can split at the source level.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import hyp1f1

from .errors import InvalidArgumentError
from .sh import ShSeries, eval_sh_basis, sh_coeff_count
from .shore import QSpaceSamples
from .sphere import (
    DirectionSet,
    SphereQuadrature,
    gauss_sphere_quadrature,
    generate_uniform_directions,
    haar_rotation,
)

_FRACTION_TOL = 1e-9


@dataclass(frozen=True)
class TensorCompartment:
    """One Gaussian diffusion compartment.

    eigenvalues are (axial, radial, radial) in mm^2/s with the principal
    axis along `orientation`.
    """

    eigenvalues: tuple
    orientation: tuple
    fraction: float

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        if ev.shape != (3,) or np.any(ev <= 0):
            raise InvalidArgumentError("eigenvalues must be three positive reals")
        if not 0 < self.fraction <= 1:
            raise InvalidArgumentError("fraction must lie in (0, 1]")
        axis = np.asarray(self.orientation, dtype=float)
        if axis.shape != (3,) or np.linalg.norm(axis) == 0:
            raise InvalidArgumentError("orientation must be a non-zero 3-vector")

    def axis(self):
        axis = np.asarray(self.orientation, dtype=float)
        return axis / np.linalg.norm(axis)

    def tensor(self):
        """Full 3x3 diffusion tensor with a deterministic transverse frame."""
        e1 = self.axis()
        helper = np.array([1.0, 0.0, 0.0]) if abs(e1[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e2 = np.cross(e1, helper)
        e2 /= np.linalg.norm(e2)
        e3 = np.cross(e1, e2)
        ev = np.asarray(self.eigenvalues, dtype=float)
        return ev[0] * np.outer(e1, e1) + ev[1] * np.outer(e2, e2) + ev[2] * np.outer(e3, e3)

    def rotated(self, rotation):
        return TensorCompartment(
            tuple(self.eigenvalues),
            tuple(rotation.matrix @ self.axis()),
            self.fraction,
        )


@dataclass(frozen=True)
class PhantomConfig:
    shell_bvalues: tuple = (3000.0, 6000.0, 9000.0, 12000.0)
    directions_per_shell: int = 25
    crossing_angle_range: tuple = (30.0, 90.0)  # degrees
    fraction_range: tuple = (0.3, 1.0)
    kappa_watson: float = 20.0
    snr: float = 30.0  # math.inf for noiseless data
    n_voxels: int = 10
    rotations_per_voxel: int = 100
    max_fibers: int = 3
    sh_order: int = 8
    seed: int = 0
    # ex-vivo-scaled white matter diffusivities: the shell defaults span the
    # ex-vivo range, where tissue diffusivity is roughly a third of in-vivo
    eigenvalues: tuple = (0.57e-3, 0.1e-3, 0.1e-3)

    def __post_init__(self):
        if len(self.shell_bvalues) == 0:
            raise InvalidArgumentError("need at least one shell")
        if self.n_voxels < 1:
            raise InvalidArgumentError("n_voxels must be >= 1")
        if self.kappa_watson <= 0 or self.snr <= 0:
            raise InvalidArgumentError("kappa_watson and snr must be positive")
        if not 1 <= self.max_fibers <= 3:
            raise InvalidArgumentError("max_fibers must be 1..3")


def simulate_signal(compartments, samples):
    """Multi-tensor forward model, normalized to 1 at b = 0.

    S_i = sum_c f_c exp(-b_i g_i' D_c g_i); the fractions must sum to 1.
    """
    fractions = np.array([c.fraction for c in compartments], dtype=float)
    if abs(fractions.sum() - 1.0) > _FRACTION_TOL:
        raise InvalidArgumentError(
            f"compartment fractions must sum to 1, got {fractions.sum():.12f}"
        )
    g = samples.directions.vectors
    b = samples.bvalues
    signal = np.zeros(len(samples))
    for comp in compartments:
        quad_form = np.einsum("ij,jk,ik->i", g, comp.tensor(), g)
        signal += comp.fraction * np.exp(-b * quad_form)
    return signal


def watson_density(points, mean_axis, kappa):
    """Antipodally symmetric Watson density, unit integral over the sphere."""
    mean_axis = np.asarray(mean_axis, dtype=float)
    mean_axis = mean_axis / np.linalg.norm(mean_axis)
    norm = 1.0 / (4.0 * np.pi * hyp1f1(0.5, 1.5, kappa))
    t = points @ mean_axis
    return norm * np.exp(kappa * t * t)


class FodProjector:
    """Quadrature projection of Watson mixtures, with the basis cached."""

    def __init__(self, quad, max_degree):
        if not isinstance(quad, SphereQuadrature):
            raise InvalidArgumentError("quad must be a SphereQuadrature")
        self.quad = quad
        self.max_degree = max_degree
        self._weighted_basis = eval_sh_basis(quad.nodes, max_degree).T * quad.weights

    def project(self, compartments, kappa):
        nodes = self.quad.nodes.vectors
        density = np.zeros(len(self.quad.nodes))
        for comp in compartments:
            density += comp.fraction * watson_density(nodes, comp.axis(), kappa)
        return ShSeries(self.max_degree, self._weighted_basis @ density)


def ground_truth_fod(compartments, max_degree, kappa, quad):
    """Project the Watson mixture of the compartments onto even harmonics.

    The mixture integrates to 1 and is antipodally symmetric, so the
    even-degree projection loses nothing of the symmetric part.
    """
    return FodProjector(quad, max_degree).project(compartments, kappa)


def add_rician_noise(values, snr, seed):
    """Magnitude-MRI noise: sqrt((v + n1)^2 + n2^2), sigma = 1/snr.

    An infinite snr returns the values unchanged.
    """
    if snr <= 0:
        raise InvalidArgumentError("snr must be positive")
    values = np.asarray(values, dtype=float)
    if math.isinf(snr):
        return values.copy()
    rng = np.random.default_rng(seed)
    sigma = 1.0 / snr
    n1 = rng.standard_normal(values.shape) * sigma
    n2 = rng.standard_normal(values.shape) * sigma
    return np.sqrt((values + n1) ** 2 + n2**2)


def build_acquisition(cfg):
    """Repulsion-spread directions per shell, concatenated shell by shell."""
    bvalues = []
    vectors = []
    for shell_index, b in enumerate(cfg.shell_bvalues):
        dirs = generate_uniform_directions(
            cfg.directions_per_shell, seed=1000 * (cfg.seed + 1) + shell_index,
            iterations=200,
        )
        vectors.append(dirs.vectors)
        bvalues.append(np.full(cfg.directions_per_shell, float(b)))
    return QSpaceSamples(np.concatenate(bvalues), DirectionSet(np.vstack(vectors)))


@dataclass
class PhantomDataset:
    """Signals, acquisition scheme, ground-truth FODs and block grouping."""

    signals: np.ndarray            # (rows, samples)
    samples: QSpaceSamples
    fod_coeffs: np.ndarray         # (rows, sh coefficients)
    sh_order: int
    block_ids: np.ndarray          # (rows,)
    config: PhantomConfig = field(repr=False, default=None)

    def __len__(self):
        return self.signals.shape[0]

    def fod(self, row):
        """Ground-truth FOD of one row as a series object."""
        return ShSeries(self.sh_order, self.fod_coeffs[row])


def _draw_compartments(rng, cfg):
    n_fibers = int(rng.integers(1, cfg.max_fibers + 1))
    first = rng.standard_normal(3)
    first /= np.linalg.norm(first)
    axes = [first]
    lo, hi = np.deg2rad(cfg.crossing_angle_range[0]), np.deg2rad(cfg.crossing_angle_range[1])
    for _ in range(n_fibers - 1):
        angle = rng.uniform(lo, hi)
        azimuth = rng.uniform(0.0, 2.0 * np.pi)
        helper = np.array([1.0, 0.0, 0.0]) if abs(first[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = np.cross(first, helper)
        u /= np.linalg.norm(u)
        v = np.cross(first, u)
        tilted = (
            np.cos(angle) * first
            + np.sin(angle) * (np.cos(azimuth) * u + np.sin(azimuth) * v)
        )
        axes.append(tilted / np.linalg.norm(tilted))
    raw = rng.uniform(cfg.fraction_range[0], cfg.fraction_range[1], size=n_fibers)
    fractions = raw / raw.sum()
    # nudge the rounding remainder into the first fraction so the sum is exact
    fractions[0] += 1.0 - fractions.sum()
    return [
        TensorCompartment(tuple(cfg.eigenvalues), tuple(axis), float(frac))
        for axis, frac in zip(axes, fractions)
    ]


def generate_dataset(cfg, quad=None):
    """Generate the phantom: base voxels plus jointly rotated copies.

    Every source voxel contributes 1 + rotations_per_voxel rows sharing
    one block id. Per-voxel generator streams are spawned from the seed,
    so the output is deterministic and independent of generation order.
    """
    if quad is None:
        quad = gauss_sphere_quadrature(40, 81)
    projector = FodProjector(quad, cfg.sh_order)
    samples = build_acquisition(cfg)
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_voxels)

    rows_per_block = 1 + cfg.rotations_per_voxel
    total = cfg.n_voxels * rows_per_block
    signals = np.empty((total, len(samples)))
    fods = np.empty((total, sh_coeff_count(cfg.sh_order)))
    block_ids = np.empty(total, dtype=int)

    row = 0
    for voxel, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        compartments = _draw_compartments(rng, cfg)
        variants = [compartments]
        for _ in range(cfg.rotations_per_voxel):
            rotation = haar_rotation(rng)
            variants.append([c.rotated(rotation) for c in compartments])
        for comps in variants:
            clean = simulate_signal(comps, samples)
            noise_seed = int(rng.integers(0, 2**63 - 1))
            signals[row] = add_rician_noise(clean, cfg.snr, noise_seed)
            fods[row] = projector.project(comps, cfg.kappa_watson).coeffs
            block_ids[row] = voxel
            row += 1
    return PhantomDataset(signals, samples, fods, cfg.sh_order, block_ids, cfg)
