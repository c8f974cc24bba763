import json

import numpy as np
import pytest

from mr2us.errors import ValidationError
from mr2us.io import read_frames, read_volume, sha256_file, write_frames, write_volume
from mr2us.types import DeformationField, Frame2D, Volume


class TestVolumeRoundtrip:
    def test_volume_roundtrip_exact(self, rng, tmp_path):
        vol = Volume(rng.random((7, 5, 3)).astype(np.float32), (0.5, 0.5, 1.0))
        write_volume(tmp_path / "v", vol)
        back = read_volume(tmp_path / "v")
        assert isinstance(back, Volume)
        assert back.spacing == (0.5, 0.5, 1.0)
        np.testing.assert_array_equal(back.voxels, vol.voxels)

    def test_field_roundtrip_exact(self, rng, tmp_path):
        f = DeformationField(rng.standard_normal((3, 6, 5, 4)).astype(np.float32))
        write_volume(tmp_path / "f", f)
        back = read_volume(tmp_path / "f")
        assert isinstance(back, DeformationField)
        np.testing.assert_array_equal(back.disp, f.disp)

    def test_raw_is_x_fastest(self, tmp_path):
        # voxel (x, y, z) sits at flat index (z*Y + y)*X + x in the raw file
        vol = Volume(np.zeros((4, 3, 2), np.float32))
        vol.voxels[1, 2, 0] = 7.0
        vol.voxels[3, 0, 1] = 9.0
        write_volume(tmp_path / "v", vol)
        raw = np.fromfile(tmp_path / "v.raw", dtype="<f4")
        assert raw[(0 * 3 + 2) * 4 + 1] == 7.0
        assert raw[(1 * 3 + 0) * 4 + 3] == 9.0

    def test_header_contents(self, tmp_path):
        write_volume(tmp_path / "v", Volume(np.zeros((4, 3, 2), np.float32)))
        header = json.loads((tmp_path / "v.json").read_text())
        assert header == {
            "magic": "RVOL1",
            "dims": [4, 3, 2],
            "spacing": [1.0, 1.0, 1.0],
            "dtype": "f32le",
            "order": "x-fastest",
            "components": 1,
        }

    def test_suffix_normalization(self, rng, tmp_path):
        vol = Volume(rng.random((4, 4, 4)).astype(np.float32))
        write_volume(tmp_path / "v.json", vol)
        np.testing.assert_array_equal(read_volume(tmp_path / "v.raw").voxels,
                                      vol.voxels)

    def test_bad_magic_rejected(self, tmp_path):
        write_volume(tmp_path / "v", Volume(np.zeros((4, 4, 4), np.float32)))
        header = json.loads((tmp_path / "v.json").read_text())
        header["magic"] = "BOGUS"
        (tmp_path / "v.json").write_text(json.dumps(header))
        with pytest.raises(ValidationError):
            read_volume(tmp_path / "v")

    def test_truncated_raw_rejected(self, tmp_path):
        write_volume(tmp_path / "v", Volume(np.zeros((4, 4, 4), np.float32)))
        raw = (tmp_path / "v.raw").read_bytes()
        (tmp_path / "v.raw").write_bytes(raw[:-8])
        with pytest.raises(ValidationError):
            read_volume(tmp_path / "v")

    def test_missing_header_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            read_volume(tmp_path / "nothing")

    def test_unwritable_type_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            write_volume(tmp_path / "v", np.zeros((4, 4, 4)))


class TestFrameRoundtrip:
    def test_roundtrip_preserves_order_views_and_indices(self, rng, tmp_path):
        frames = [
            Frame2D(rng.random((8, 8)).astype(np.float32), "sagittal", 0),
            Frame2D(rng.random((8, 8)).astype(np.float32), "transverse", 0,
                    validity=rng.random((8, 8)) > 0.3),
            Frame2D(rng.random((8, 8)).astype(np.float32), "sagittal", 1),
        ]
        write_frames(tmp_path / "frames", frames)
        back = read_frames(tmp_path / "frames")
        assert [(f.view, f.index) for f in back] == \
            [(f.view, f.index) for f in frames]
        assert back[0].validity is None
        np.testing.assert_array_equal(back[1].validity, frames[1].validity)

    def test_16bit_quantization_error_bound(self, rng, tmp_path):
        frames = [Frame2D(rng.random((16, 16)).astype(np.float32), "sagittal", 0)]
        write_frames(tmp_path / "frames", frames)
        back = read_frames(tmp_path / "frames")
        err = np.abs(back[0].pixels - frames[0].pixels).max()
        assert err <= 0.5 / 65535.0 + 1e-9

    def test_missing_manifest_rejected(self, tmp_path):
        (tmp_path / "frames").mkdir()
        with pytest.raises(ValidationError):
            read_frames(tmp_path / "frames")

    def test_written_paths_reported(self, rng, tmp_path):
        frames = [Frame2D(rng.random((8, 8)).astype(np.float32), "sagittal", 0,
                          validity=np.ones((8, 8), bool))]
        paths = write_frames(tmp_path / "frames", frames)
        assert paths[0].name == "manifest.json"
        assert len(paths) == 3  # manifest + frame + validity
        assert all(p.exists() for p in paths)


class TestSha256File:
    def test_known_digest(self, tmp_path):
        p = tmp_path / "f.bin"
        p.write_bytes(b"abc")
        assert sha256_file(p) == (
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad")
