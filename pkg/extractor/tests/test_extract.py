import struct

import numpy as np
import pytest

from crg_extractor.encoders import ExtractorError, ToyEncoder, load_encoder
from crg_extractor.extract import ExtractJob, extract


def job_for(root, out, **kw):
    base = dict(dataset_name="toy-luma", image_root=root, encoder="toy:32",
                out_dir=out, n_views=4, seed=0)
    base.update(kw)
    return ExtractJob(**base)


class TestEncoders:
    def test_toy_unit_norm_and_determinism(self):
        enc = load_encoder("toy:16")
        from PIL import Image
        rng = np.random.default_rng(0)
        images = [Image.fromarray(rng.integers(0, 255, (20, 20, 3), dtype=np.uint8))
                  for _ in range(3)]
        a = enc.encode_images(images)
        b = ToyEncoder(16).encode_images(images)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-12)

    def test_toy_luminance_vocabulary_aligns_modalities(self):
        enc = load_encoder("toy:32")
        from PIL import Image
        dark = Image.fromarray(np.full((24, 24, 3), 50, dtype=np.uint8))
        bright = Image.fromarray(np.full((24, 24, 3), 220, dtype=np.uint8))
        img = enc.encode_images([dark, bright])
        txt = enc.encode_texts(["a photo of a dark.", "a photo of a bright."])
        assert img[0] @ txt[0] > img[0] @ txt[1]
        assert img[1] @ txt[1] > img[1] @ txt[0]

    def test_unknown_encoder_rejected(self):
        with pytest.raises(ExtractorError):
            load_encoder("mystery:9")

    def test_clip_without_weights_aborts(self):
        # no model hub in this environment: the load must fail loudly
        with pytest.raises(ExtractorError):
            load_encoder("clip:openai/clip-vit-base-patch32")


class TestExtract:
    def test_produces_three_files(self, toy_image_root, tmp_path):
        manifest = extract(job_for(toy_image_root, tmp_path / "out"))
        names = sorted(p.name for p in manifest.parent.iterdir())
        assert names == ["manifest.json", "samples.crgemb", "text.crgtxt"]

    def test_single_view_records(self, toy_image_root, tmp_path):
        manifest = extract(job_for(toy_image_root, tmp_path / "out", n_views=1))
        data = (manifest.parent / "samples.crgemb").read_bytes()
        offset = 20
        while offset < len(data):
            _, _, n_views = struct.unpack_from("<QiI", data, offset)
            assert n_views == 1
            offset += 16 + 4 * n_views * 32

    def test_same_seed_identical_files(self, toy_image_root, tmp_path):
        m1 = extract(job_for(toy_image_root, tmp_path / "one"))
        m2 = extract(job_for(toy_image_root, tmp_path / "two"))
        for name in ("manifest.json", "samples.crgemb", "text.crgtxt"):
            assert (m1.parent / name).read_bytes() == (m2.parent / name).read_bytes()

    def test_different_seed_differs(self, toy_image_root, tmp_path):
        m1 = extract(job_for(toy_image_root, tmp_path / "one"))
        m2 = extract(job_for(toy_image_root, tmp_path / "two", seed=1))
        assert ((m1.parent / "samples.crgemb").read_bytes()
                != (m2.parent / "samples.crgemb").read_bytes())

    def test_unreadable_image_skipped(self, toy_image_root, tmp_path, caplog):
        (toy_image_root / "dark" / "broken.png").write_bytes(b"not an image")
        manifest = extract(job_for(toy_image_root, tmp_path / "out"))
        data = (manifest.parent / "samples.crgemb").read_bytes()
        count = 0
        offset = 20
        while offset < len(data):
            _, _, n_views = struct.unpack_from("<QiI", data, offset)
            offset += 16 + 4 * n_views * 32
            count += 1
        assert count == 10  # the broken file did not become a record
        assert "skipping unreadable image" in caplog.text

    def test_template_must_contain_placeholder(self, toy_image_root, tmp_path):
        with pytest.raises(ExtractorError):
            extract(job_for(toy_image_root, tmp_path / "out",
                            templates=["a photo of a cat."]))

    def test_ensemble_vs_single_template(self, toy_image_root, tmp_path):
        templates = ["a photo of a {CLASS}.", "art of the {CLASS}."]
        m_ens = extract(job_for(toy_image_root, tmp_path / "ens", templates=templates))
        m_one = extract(job_for(toy_image_root, tmp_path / "one", templates=templates,
                                ensemble=False, template_index=0))
        ens = (m_ens.parent / "text.crgtxt").read_bytes()
        one = (m_one.parent / "text.crgtxt").read_bytes()
        assert ens != one

    def test_class_order_matches_sorted_folders(self, toy_image_root, tmp_path):
        import json
        manifest = extract(job_for(toy_image_root, tmp_path / "out"))
        payload = json.loads(manifest.read_text())
        assert payload["class_names"] == ["bright", "dark"]
        assert payload["K"] == 2
