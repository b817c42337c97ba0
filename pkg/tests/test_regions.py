import json

import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from scgan.data import Domain, DomainSample
from scgan.errors import ValidationError
from scgan.regions import (
    LandmarkRegionProvider,
    RegionProvider,
    RegionSet,
    SidecarRegionProvider,
    crop_region,
    default_weights,
    detect_regions,
)


def _selfie(path="trainA/a.png"):
    return DomainSample(torch.zeros(3, 16, 16), Domain.A, path)


class TestRegionSet:
    def test_whole_first(self):
        with pytest.raises(ValidationError):
            RegionSet(())
        rs = RegionSet.from_components([("eyes", (0.1, 0.1, 0.5, 0.2))])
        assert rs.k == 2 and rs.labels == ["whole", "eyes"]

    @pytest.mark.parametrize("bbox", [(0, 0, 0, 0.5), (-0.1, 0, 0.5, 0.5), (0.6, 0, 0.5, 0.5), (0, 0.9, 0.5, 0.2)])
    def test_invalid_bbox(self, bbox):
        with pytest.raises(ValidationError):
            RegionSet.from_components([("eyes", bbox)])


class TestDetectRegions:
    def test_sidecar_default_layout(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        regions = [{"label": l, "bbox": b} for l, b in
                   [("eyes", [0.2, 0.3, 0.6, 0.1]), ("nose", [0.4, 0.4, 0.2, 0.2]), ("mouth", [0.3, 0.7, 0.4, 0.1])]]
        path.write_text(json.dumps({"image": "trainA/a.png", "regions": regions}))
        rs = detect_regions(_selfie(), SidecarRegionProvider.from_file(path))
        assert rs.k == 4
        assert rs.labels == ["whole", "eyes", "nose", "mouth"]

    def test_bare_filename_key_matches(self, tmp_path):
        path = tmp_path / "ann.jsonl"
        path.write_text(json.dumps({"image": "a.png", "regions": [{"label": "eyes", "bbox": [0.25, 0.25, 0.5, 0.5]}]}))
        rs = detect_regions(_selfie(), SidecarRegionProvider.from_file(path))
        assert rs.entries[1].bbox == (0.25, 0.25, 0.5, 0.5)

    def test_unannotated_falls_back(self):
        rs = detect_regions(_selfie(), SidecarRegionProvider({}))
        assert rs.k == 1 and rs.labels == ["whole"]
        assert detect_regions(_selfie(), None).k == 1

    def test_provider_failure_falls_back(self, caplog):
        class Broken(RegionProvider):
            def components(self, sample):
                raise RuntimeError("detector crashed")

        rs = detect_regions(_selfie(), Broken())
        assert rs.k == 1
        assert "detector crashed" in caplog.text

    def test_domain_b_rejected(self):
        with pytest.raises(ValidationError):
            detect_regions(DomainSample(torch.zeros(3, 8, 8), Domain.B, "b.png"), None)

    def test_landmark_adapter(self):
        def detector(image):
            return {"eyes": [(4, 4), (12, 4)], "mouth": [(6, 12), (10, 13)], "nose": []}

        rs = detect_regions(_selfie(), LandmarkRegionProvider(detector, margin=0.0))
        assert rs.labels == ["whole", "eyes", "mouth"]
        x, y, w, h = rs.entries[1].bbox
        assert (x * 16, y * 16, (x + w) * 16) == pytest.approx((3, 3, 13))


class TestCropRegion:
    def test_whole_is_identity(self):
        img = torch.randn(3, 8, 8)
        out = crop_region(img, (0, 0, 1, 1))
        assert torch.equal(out, img)

    def test_quarter_box(self):
        img = torch.arange(64.0).reshape(1, 8, 8)
        out = crop_region(img, (0.25, 0.25, 0.5, 0.5))
        assert out.shape == (1, 4, 4)
        assert torch.equal(out, img[:, 2:6, 2:6])

    def test_degenerate_expands_to_one_pixel(self):
        img = torch.arange(64.0).reshape(1, 8, 8)
        out = crop_region(img, (0, 0, 0.1, 0.1))
        assert out.shape == (1, 1, 1)
        assert out.item() == 0.0

    def test_batched(self):
        img = torch.randn(2, 3, 8, 8)
        assert crop_region(img, (0.5, 0, 0.5, 0.25)).shape == (2, 3, 2, 4)

    @given(st.floats(0, 0.99), st.floats(0, 0.99), st.floats(0.001, 1), st.floats(0.001, 1), st.integers(1, 40))
    def test_crop_always_inside_and_nonempty(self, x, y, w, h, size):
        w, h = min(w, 1 - x), min(h, 1 - y)
        if w <= 0 or h <= 0:
            return
        out = crop_region(torch.zeros(1, size, size + 3), (x, y, w, h))
        assert 1 <= out.shape[-2] <= size and 1 <= out.shape[-1] <= size + 3


class TestDefaultWeights:
    def test_default_layout(self):
        rs = RegionSet.from_components([(l, (0.1, 0.1, 0.2, 0.2)) for l in ("eyes", "nose", "mouth")])
        assert default_weights(rs).values == (1.0, 0.5, 0.5, 0.5)

    def test_whole_only(self):
        assert default_weights(RegionSet.whole_only()).values == (1.0,)

    def test_subset_and_unknown(self):
        rs = RegionSet.from_components([("eyes", (0.1, 0.1, 0.2, 0.2)), ("ear", (0.1, 0.1, 0.1, 0.1))])
        assert default_weights(rs).values == (1.0, 0.5, 0.5)
        assert default_weights(rs, overrides={"eyes": 2.0}).values == (1.0, 2.0, 0.5)

    @given(st.lists(st.sampled_from(["eyes", "nose", "mouth", "brow"]), max_size=6))
    def test_aligned_length(self, labels):
        rs = RegionSet.from_components([(l, (0.0, 0.0, 0.5, 0.5)) for l in labels])
        assert len(default_weights(rs)) == rs.k
