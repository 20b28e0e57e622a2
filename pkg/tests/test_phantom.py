import numpy as np
import pytest

from deepshore import (
    DirectionSet,
    InvalidArgumentError,
    QSpaceSamples,
    TensorCompartment,
    acc,
    add_rician_noise,
    generate_dataset,
    ground_truth_fod,
    random_rotation,
    rotate_sh,
    simulate_signal,
)
from deepshore.phantom import PhantomConfig, build_acquisition
from deepshore.sphere import gauss_sphere_quadrature, rotate_directions


@pytest.fixture(scope="module")
def quad():
    return gauss_sphere_quadrature(40, 81)


def single_fiber(axis, eigenvalues=(1.7e-3, 0.3e-3, 0.3e-3)):
    return TensorCompartment(eigenvalues, tuple(axis), 1.0)


class TestSimulateSignal:
    def test_closed_form_axial(self):
        comp = single_fiber([0.0, 0.0, 1.0])
        samples = QSpaceSamples([1000.0], DirectionSet([[0.0, 0.0, 1.0]]))
        assert simulate_signal([comp], samples)[0] == pytest.approx(np.exp(-1.7), rel=1e-12)

    def test_closed_form_radial(self):
        comp = single_fiber([0.0, 0.0, 1.0])
        samples = QSpaceSamples([1000.0], DirectionSet([[1.0, 0.0, 0.0]]))
        assert simulate_signal([comp], samples)[0] == pytest.approx(np.exp(-0.3), rel=1e-12)

    def test_b0_normalization(self):
        comp = single_fiber([0.0, 1.0, 0.0])
        samples = QSpaceSamples([0.0], DirectionSet([[1.0, 0.0, 0.0]]))
        assert simulate_signal([comp], samples)[0] == 1.0

    def test_fraction_sum_enforced(self):
        a = TensorCompartment((1e-3, 1e-4, 1e-4), (0, 0, 1), 0.5)
        b = TensorCompartment((1e-3, 1e-4, 1e-4), (1, 0, 0), 0.4)
        samples = QSpaceSamples([1000.0], DirectionSet([[0.0, 0.0, 1.0]]))
        with pytest.raises(InvalidArgumentError):
            simulate_signal([a, b], samples)

    def test_rotation_equivariance(self):
        cfg = PhantomConfig(n_voxels=1, rotations_per_voxel=0, snr=float("inf"))
        samples = build_acquisition(cfg)
        comp = single_fiber([0.37, -0.61, 0.70])
        rot = random_rotation(8)
        rotated_comp = comp.rotated(rot)
        direct = simulate_signal([rotated_comp], samples)
        pulled = simulate_signal(
            [comp],
            QSpaceSamples(samples.bvalues, rotate_directions(samples.directions, rot.inverse())),
        )
        assert np.max(np.abs(direct - pulled)) < 1e-12

    def test_monotone_attenuation_in_b(self):
        comp = single_fiber([0.2, 0.5, 0.84])
        g = np.array([0.5, -0.5, np.sqrt(0.5)])
        g /= np.linalg.norm(g)
        bvals = np.array([0.0, 1000.0, 3000.0, 6000.0, 12000.0])
        samples = QSpaceSamples(bvals, DirectionSet(np.tile(g, (5, 1))))
        signal = simulate_signal([comp], samples)
        assert np.all(np.diff(signal) < 0)


class TestGroundTruthFod:
    def test_axially_symmetric_fiber_kills_m_terms(self, quad):
        fod = ground_truth_fod([single_fiber([0.0, 0.0, 1.0])], 8, 20.0, quad)
        from deepshore.sh import sh_degree_order_table

        _, orders = sh_degree_order_table(8)
        assert np.max(np.abs(fod.coeffs[orders != 0])) < 1e-10

    def test_unit_mass(self, quad):
        comps = [
            TensorCompartment((1e-3, 1e-4, 1e-4), (0.0, 0.0, 1.0), 0.6),
            TensorCompartment((1e-3, 1e-4, 1e-4), (1.0, 0.0, 0.0), 0.4),
        ]
        fod = ground_truth_fod(comps, 8, 20.0, quad)
        assert fod.coeffs[0] == pytest.approx(1.0 / (2.0 * np.sqrt(np.pi)), abs=1e-8)

    def test_compartment_permutation_invariance(self, quad):
        a = TensorCompartment((1e-3, 1e-4, 1e-4), (0.0, 0.0, 1.0), 0.5)
        b = TensorCompartment((1e-3, 1e-4, 1e-4), (0.0, 1.0, 0.0), 0.5)
        fod_ab = ground_truth_fod([a, b], 8, 20.0, quad)
        fod_ba = ground_truth_fod([b, a], 8, 20.0, quad)
        assert acc(fod_ab, fod_ba) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("kappa", [10.0, 20.0, 50.0])
    def test_ringing_bounded_relative_to_peak(self, quad, kappa):
        # a degree-8 projection of a sharp lobe rings; the undershoot stays a
        # small fraction of the peak for the concentrations in use
        dense = gauss_sphere_quadrature(60, 121)
        from deepshore.sh import sample_sh

        fod = ground_truth_fod(
            [
                TensorCompartment((1e-3, 1e-4, 1e-4), (0.0, 0.3, 0.95), 0.7),
                TensorCompartment((1e-3, 1e-4, 1e-4), (0.9, 0.1, 0.4), 0.3),
            ],
            8, kappa, quad,
        )
        values = sample_sh(fod, dense.nodes)
        assert values.min() > -0.2 * values.max()


class TestRicianNoise:
    def test_infinite_snr_is_identity(self):
        values = np.linspace(0.0, 1.0, 32)
        assert np.array_equal(add_rician_noise(values, float("inf"), seed=0), values)

    def test_output_nonnegative(self):
        rng = np.random.default_rng(0)
        values = rng.random(2000)
        assert np.all(add_rician_noise(values, 5.0, seed=1) >= 0.0)

    def test_rayleigh_mean_at_zero_signal(self):
        # oracle: magnitude of pure complex noise has mean sigma * sqrt(pi/2)
        sigma = 1.0 / 25.0
        noisy = add_rician_noise(np.zeros(100_000), 25.0, seed=2)
        expected = sigma * np.sqrt(np.pi / 2.0)
        assert noisy.mean() == pytest.approx(expected, rel=0.02)

    def test_deterministic(self):
        values = np.linspace(0.0, 1.0, 10)
        assert np.array_equal(
            add_rician_noise(values, 10.0, seed=3), add_rician_noise(values, 10.0, seed=3)
        )


class TestGenerateDataset:
    def test_block_structure(self):
        cfg = PhantomConfig(n_voxels=5, rotations_per_voxel=100, snr=float("inf"), seed=1)
        data = generate_dataset(cfg)
        assert len(data) == 505
        ids, counts = np.unique(data.block_ids, return_counts=True)
        assert ids.tolist() == [0, 1, 2, 3, 4]
        assert np.all(counts == 101)

    def test_deterministic(self):
        cfg = PhantomConfig(n_voxels=3, rotations_per_voxel=5, snr=30.0, seed=7)
        a = generate_dataset(cfg)
        b = generate_dataset(cfg)
        assert np.array_equal(a.signals, b.signals)
        assert np.array_equal(a.fod_coeffs, b.fod_coeffs)

    def test_rotated_copies_match_rotate_sh(self, dirs200):
        # oracle: the stored FOD of a rotated copy must agree with rotating
        # the base FOD by resampling
        cfg = PhantomConfig(n_voxels=2, rotations_per_voxel=3, snr=float("inf"), seed=11)
        data = generate_dataset(cfg)
        from deepshore.phantom import _draw_compartments
        from deepshore.sphere import haar_rotation

        for voxel, stream in enumerate(np.random.SeedSequence(cfg.seed).spawn(cfg.n_voxels)):
            rng = np.random.default_rng(stream)
            _draw_compartments(rng, cfg)
            rotations = [haar_rotation(rng) for _ in range(cfg.rotations_per_voxel)]
            base = data.fod(voxel * 4)
            for k, rot in enumerate(rotations):
                expected = rotate_sh(base, rot, dirs200)
                stored = data.fod(voxel * 4 + 1 + k)
                assert acc(expected, stored) >= 0.999

    def test_noiseless_signals_bounded_by_one(self):
        cfg = PhantomConfig(n_voxels=4, rotations_per_voxel=2, snr=float("inf"), seed=2)
        data = generate_dataset(cfg)
        assert np.all(data.signals <= 1.0 + 1e-12)
        assert np.all(data.signals > 0.0)
