import numpy as np
import pytest

from deepshore import build_model, generate_dataset
from deepshore.errors import ContainerFormatError, InvalidArgumentError
from deepshore.io import (
    MAGIC,
    read_bvals_bvecs,
    read_coeffs,
    read_container,
    read_dataset,
    read_directions_text,
    read_model,
    read_report,
    write_bvals_bvecs,
    write_coeffs,
    write_container,
    write_dataset,
    write_directions_text,
    write_model,
    write_report,
    write_report_container,
)
from deepshore.phantom import PhantomConfig


@pytest.fixture()
def small_dataset():
    return generate_dataset(PhantomConfig(n_voxels=3, rotations_per_voxel=2, snr=30.0, seed=4))


class TestContainer:
    def test_layout(self, tmp_path):
        path = tmp_path / "x.dsc"
        write_container(path, "coeffs", [("coeffs", np.arange(6.0).reshape(2, 3))], {"k": 1})
        raw = path.read_bytes()
        assert raw[:8] == MAGIC
        header_len = int.from_bytes(raw[8:12], "little")
        header = raw[12:12 + header_len].decode("utf-8")
        assert '"kind":"coeffs"' in header
        payload = raw[12 + header_len:]
        assert len(payload) == 6 * 4
        assert np.frombuffer(payload, dtype="<f4").tolist() == [0, 1, 2, 3, 4, 5]

    def test_write_read_bit_identical(self, tmp_path):
        path_a = tmp_path / "a.dsc"
        path_b = tmp_path / "b.dsc"
        rng = np.random.default_rng(0)
        segments = [("m", rng.standard_normal((4, 5))), ("v", rng.standard_normal(7))]
        write_container(path_a, "coeffs", segments, {"zeta": 700.0})
        box = read_container(path_a)
        write_container(path_b, box.kind, list(box.segments.items()), box.metadata)
        assert path_a.read_bytes() == path_b.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.dsc"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(ContainerFormatError):
            read_container(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "t.dsc"
        write_container(path, "coeffs", [("coeffs", np.zeros((4, 4)))], {})
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ContainerFormatError):
            read_container(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "t.dsc"
        write_container(path, "coeffs", [("coeffs", np.zeros((2, 2)))], {})
        path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
        with pytest.raises(ContainerFormatError):
            read_container(path)

    def test_unknown_kind_rejected(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            write_container(tmp_path / "k.dsc", "mystery", [], {})


class TestDatasetRoundTrip:
    def test_roundtrip_values(self, tmp_path, small_dataset):
        path = tmp_path / "d.dsc"
        write_dataset(path, small_dataset)
        loaded = read_dataset(path)
        assert loaded.signals.shape == small_dataset.signals.shape
        assert np.allclose(loaded.signals, small_dataset.signals, atol=1e-6)
        assert np.array_equal(loaded.block_ids, small_dataset.block_ids)
        assert loaded.sh_order == small_dataset.sh_order

    def test_rewrite_bit_identical(self, tmp_path, small_dataset):
        a, b = tmp_path / "a.dsc", tmp_path / "b.dsc"
        write_dataset(a, small_dataset)
        write_dataset(b, small_dataset)
        assert a.read_bytes() == b.read_bytes()


class TestCoeffsModel:
    def test_coeffs_roundtrip_with_blocks(self, tmp_path):
        path = tmp_path / "c.dsc"
        coeffs = np.random.default_rng(1).standard_normal((6, 50))
        write_coeffs(path, coeffs, {"representation": "shore", "zeta": 700.0,
                                    "radial_order": 6, "block_ids": np.arange(6)})
        loaded, meta = read_coeffs(path)
        assert np.allclose(loaded, coeffs, atol=1e-6)
        assert meta["zeta"] == 700.0
        assert np.array_equal(meta["block_ids"], np.arange(6))

    def test_model_roundtrip_predictions_match(self, tmp_path):
        path = tmp_path / "m.dsc"
        model = build_model(50, 45, seed=5)
        write_model(path, model)
        loaded = read_model(path)
        x = np.random.default_rng(2).standard_normal((3, 50))
        from deepshore import predict

        # weights survive the f32 payload, predictions agree to f32 precision
        assert np.allclose(predict(loaded, x), predict(model, x), atol=1e-4)
        assert loaded.seed == model.seed

    def test_model_rewrite_bit_identical(self, tmp_path):
        a, b = tmp_path / "a.dsc", tmp_path / "b.dsc"
        model = build_model(50, 45, seed=5)
        write_model(a, model)
        write_model(b, model)
        assert a.read_bytes() == b.read_bytes()


class TestReports:
    def test_json_report_roundtrip(self, tmp_path):
        path = tmp_path / "r.json"
        report = {"kind": "report", "median": 0.85, "acc": [0.1, 0.9], "created_at": "t"}
        write_report(path, report)
        assert read_report(path) == report

    def test_report_container(self, tmp_path):
        path = tmp_path / "r.dsc"
        write_report_container(path, {"kind": "report", "median": 0.5},
                               [("acc_main", np.array([0.4, 0.6]))])
        box = read_container(path)
        assert box.kind == "report"
        assert box.metadata["median"] == 0.5
        assert np.allclose(box.segments["acc_main"], [0.4, 0.6])

    def test_report_container_rewrite_bit_identical(self, tmp_path):
        a, b = tmp_path / "a.dsc", tmp_path / "b.dsc"
        write_report_container(a, {"kind": "report", "median": 0.5},
                               [("acc_main", np.array([0.4, 0.6]))])
        box = read_container(a)
        write_report_container(b, box.metadata, list(box.segments.items()))
        assert a.read_bytes() == b.read_bytes()

    def test_identical_reports_byte_identical_minus_timestamp(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        doc = {"kind": "report", "median": 0.7, "config": {"seed": 3}}
        write_report(a, dict(doc, created_at="2025-01-01T00:00:00"))
        write_report(b, dict(doc, created_at="2026-01-01T00:00:00"))
        ra, rb = read_report(a), read_report(b)
        ra.pop("created_at"), rb.pop("created_at")
        assert ra == rb


class TestFslText:
    def test_bval_bvec_roundtrip(self, tmp_path, small_dataset):
        bval, bvec = tmp_path / "g.bval", tmp_path / "g.bvec"
        write_bvals_bvecs(bval, bvec, small_dataset.samples)
        loaded = read_bvals_bvecs(bval, bvec)
        assert np.allclose(loaded.bvalues, small_dataset.samples.bvalues)
        assert np.allclose(
            loaded.directions.vectors, small_dataset.samples.directions.vectors, atol=1e-12
        )

    def test_bvec_file_has_three_lines(self, tmp_path, small_dataset):
        bvec = tmp_path / "g.bvec"
        write_directions_text(bvec, small_dataset.samples.directions)
        lines = bvec.read_text().strip().split("\n")
        assert len(lines) == 3
        assert all(len(line.split()) == len(small_dataset.samples) for line in lines)

    def test_directions_text_roundtrip(self, tmp_path, dirs100):
        path = tmp_path / "dirs.txt"
        write_directions_text(path, dirs100)
        loaded = read_directions_text(path)
        assert np.allclose(loaded.vectors, dirs100.vectors, atol=1e-12)

    def test_malformed_direction_text_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1 0\n0 1\n0 0\n1 1\n")
        with pytest.raises(ContainerFormatError):
            read_directions_text(path)
