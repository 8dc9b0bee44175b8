import os

import numpy as np
import pytest

from flowsdf.data import (FormatError, SyntheticConfig, generate, generate_sample, load_dataset,
                          read_manifest, read_pgm, read_tensor, to_gray8, verify_manifest,
                          write_pgm, write_tensor)


class TestTensor:
    @pytest.mark.parametrize("shape", [(), (3,), (2, 3), (1, 4, 5), (2, 1, 3, 3), (0, 3), (2, 0, 4)])
    def test_round_trip(self, tmp_path, shape):
        arr = np.random.default_rng(0).standard_normal(shape).astype(np.float32)
        write_tensor(tmp_path / "t.fstn", arr)
        out = read_tensor(tmp_path / "t.fstn")
        assert out.shape == shape and out.dtype == np.float32
        assert out.tobytes() == arr.tobytes()

    def test_special_values(self, tmp_path):
        arr = np.array([-0.0, np.inf, -np.inf, 1e-45, 3.4e38], np.float32)
        write_tensor(tmp_path / "t.fstn", arr)
        assert read_tensor(tmp_path / "t.fstn").tobytes() == arr.tobytes()
        assert np.signbit(read_tensor(tmp_path / "t.fstn")[0])

    def test_layout(self, tmp_path):
        write_tensor(tmp_path / "t.fstn", np.array([[1.0, 2.0]]))
        data = (tmp_path / "t.fstn").read_bytes()
        assert data[:9] == b"FSTN\x01\x00\x00\x00\x02"
        assert len(data) == 9 + 8 + 8

    def test_truncated(self, tmp_path):
        write_tensor(tmp_path / "t.fstn", np.zeros((2, 3)))
        data = (tmp_path / "t.fstn").read_bytes()
        (tmp_path / "bad.fstn").write_bytes(data[:-1])
        with pytest.raises(FormatError) as info:
            read_tensor(tmp_path / "bad.fstn")
        assert info.value.offset == len(data) - 1
        (tmp_path / "bad.fstn").write_bytes(data[:11])
        with pytest.raises(FormatError):
            read_tensor(tmp_path / "bad.fstn")

    def test_bad_magic_version_rank(self, tmp_path):
        path = tmp_path / "b.fstn"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(FormatError) as info:
            read_tensor(path)
        assert info.value.offset == 0
        path.write_bytes(b"FSTN\x02\x00\x00\x00\x00" + bytes(4))
        with pytest.raises(FormatError):
            read_tensor(path)
        path.write_bytes(b"FSTN\x01\x00\x00\x00\x05" + bytes(40))
        with pytest.raises(FormatError):
            read_tensor(path)

    def test_trailing_bytes(self, tmp_path):
        write_tensor(tmp_path / "t.fstn", np.zeros(2))
        with open(tmp_path / "t.fstn", "ab") as fh:
            fh.write(b"\x00")
        with pytest.raises(FormatError):
            read_tensor(tmp_path / "t.fstn")

    def test_rank_limit(self, tmp_path):
        with pytest.raises(ValueError):
            write_tensor(tmp_path / "t.fstn", np.zeros((1,) * 5))


class TestPgm:
    def test_mapping(self):
        np.testing.assert_array_equal(to_gray8([-1.0, 1.0, 0.0, 5.0, -5.0], -1, 1), [0, 255, 128, 255, 0])

    def test_round_trip(self, tmp_path):
        field = np.linspace(0, 1, 12).reshape(3, 4)
        write_pgm(tmp_path / "a.pgm", field, 0, 1)
        data = (tmp_path / "a.pgm").read_bytes()
        assert data.startswith(b"P5\n4 3\n255\n")
        np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), to_gray8(field, 0, 1))

    def test_header_comments(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
        np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), [[0, 255]])

    def test_errors(self, tmp_path):
        (tmp_path / "p2.pgm").write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(FormatError):
            read_pgm(tmp_path / "p2.pgm")
        (tmp_path / "short.pgm").write_bytes(b"P5\n2 2\n255\n\x00")
        with pytest.raises(FormatError):
            read_pgm(tmp_path / "short.pgm")
        with pytest.raises(ValueError):
            to_gray8([0.0], 1, 1)


class TestSynthetic:
    def test_deterministic_per_index(self):
        cfg = SyntheticConfig()
        a, b = generate_sample(cfg, 3), generate_sample(cfg, 3)
        assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
        c = generate_sample(SyntheticConfig(index_offset=1), 2)
        assert c[0].tobytes() == a[0].tobytes()

    def test_ranges(self):
        for i in range(20):
            image, mask, _ = generate_sample(SyntheticConfig(), i)
            assert image.shape == mask.shape == (1, 32, 32)
            assert image.min() >= 0 and image.max() <= 1
            assert set(np.unique(mask)) <= {0.0, 1.0}

    def test_no_objects(self):
        _, mask, skipped = generate_sample(SyntheticConfig(objects_min=0, objects_max=0), 0)
        assert not mask.any() and skipped == 0

    def test_foreground_fraction(self):
        cfg = SyntheticConfig()
        frac = np.mean([generate_sample(cfg, i)[1].mean() for i in range(100)])
        assert 0.1 <= frac <= 0.5

    def test_image_correlates_with_mask(self):
        image, mask, _ = generate_sample(SyntheticConfig(objects_min=2), 0)
        assert image[mask > 0].mean() > image[mask == 0].mean() + 0.2

    @pytest.mark.parametrize("kw", [dict(count=0), dict(objects_min=3, objects_max=2),
                                    dict(radius_min=1.0), dict(size=5), dict(noise_std=-1.0)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            SyntheticConfig(**kw)

    def test_generate_and_load(self, tmp_path):
        cfg = SyntheticConfig(count=5, size=16, radius_min=2.0, radius_max=4.0)
        generate(cfg, tmp_path)
        config, files, _ = read_manifest(tmp_path)
        assert config["count"] == "5" and len(files) == 10
        assert verify_manifest(tmp_path) == []
        images, masks = load_dataset(tmp_path)
        assert images.shape == masks.shape == (5, 1, 16, 16)
        np.testing.assert_array_equal(images[4], generate_sample(cfg, 4)[0])

    def test_generate_is_bitwise_reproducible(self, tmp_path):
        cfg = SyntheticConfig(count=4)
        generate(cfg, tmp_path / "a")
        generate(cfg, tmp_path / "b")
        for name in os.listdir(tmp_path / "a"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_manifest_detects_tampering(self, tmp_path):
        generate(SyntheticConfig(count=2), tmp_path)
        write_tensor(tmp_path / "00001_mask.fstn", np.zeros((1, 32, 32)))
        assert verify_manifest(tmp_path) == ["00001_mask.fstn"]

    def test_skipped_objects_recorded(self, tmp_path):
        cfg = SyntheticConfig(count=3, size=14, objects_min=4, objects_max=4, radius_min=6.0, radius_max=7.0)
        generate(cfg, tmp_path)
        _, _, skipped = read_manifest(tmp_path)
        assert skipped == {i: generate_sample(cfg, i)[2] for i in range(3) if generate_sample(cfg, i)[2]}
        assert skipped
