import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anatoforge.errors import SpecInfeasibleError
from anatoforge.phantom import OrganPlacement, OrganSpec, PhantomSpec, default_spec, generate, lattice_count, rasterize
from anatoforge.planner import build_index, enumerate_plans
from anatoforge.volume_io import load_image, load_labels
from conftest import small_spec


def naive_count(p, dims):
    n = 0
    for x, y, z in itertools.product(*map(range, dims)):
        q = [(v - c) / a for v, c, a in zip((x, y, z), p.center, p.semi_axes)]
        inside = all(abs(t) <= 1 for t in q) if p.shape == "box" else sum(t * t for t in q) <= 1
        n += inside
    return n


def test_centered_box_count():
    p = OrganPlacement(1, "box", (5.0, 5.0, 5.0), (2.0, 2.0, 2.0))
    assert rasterize(p, (11, 11, 11)).sum() == 125
    assert lattice_count(p, (11, 11, 11)) == (125, (5.0, 5.0, 5.0))


def test_ellipsoid_count_matches_loop():
    p = OrganPlacement(1, "ellipsoid", (8.0, 7.0, 6.0), (4.0, 3.0, 2.0))
    dims = (17, 15, 13)
    n = naive_count(p, dims)
    assert rasterize(p, dims).sum() == n
    assert lattice_count(p, dims)[0] == n


@settings(max_examples=40, deadline=None)
@given(
    shape=st.sampled_from(["box", "ellipsoid"]),
    center=st.tuples(*[st.floats(4, 8)] * 3),
    axes=st.tuples(*[st.floats(0.6, 4)] * 3),
)
def test_lattice_count_matches_grid(shape, center, axes):
    p = OrganPlacement(1, shape, center, axes)
    dims = (13, 13, 13)
    grid = rasterize(p, dims)
    count, cen = lattice_count(p, dims)
    assert count == int(grid.sum())
    if count:
        np.testing.assert_allclose(cen, np.argwhere(grid).mean(axis=0), atol=1e-9)


def test_spec_rejects_organ_leaving_grid():
    with pytest.raises(SpecInfeasibleError):
        PhantomSpec((10, 10, 10), (OrganSpec(1, "box", (2.0, 5.0, 5.0), (2.0, 2.0, 2.0), 0.0, 1),))
    with pytest.raises(SpecInfeasibleError):
        OrganSpec(1, "c", "cone", (5.0, 5.0, 5.0), (1.0, 1.0, 1.0))


def test_spec_dict_round_trip():
    spec = default_spec()
    assert PhantomSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_generate_metadata_matches_volumes(tmp_path):
    meta = generate(small_spec(n_cases=4, n_organs=3), tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["cases"]) == 4 and manifest["organs"] == {"1": "liver", "2": "kidney", "3": "bone"}
    for entry in manifest["cases"]:
        lab = load_labels(tmp_path / entry["label"]).voxels
        img = load_image(tmp_path / entry["image"])
        assert img.dtype == np.int16 and lab.dtype == np.uint8
        for organ, info in meta["cases"][entry["id"]].items():
            bits = lab == int(organ)
            assert info["count"] == int(bits.sum())
            np.testing.assert_allclose(info["centroid"], np.argwhere(bits).mean(axis=0), atol=1e-9)


def test_generate_is_byte_identical(tmp_path):
    spec = small_spec(seed=9)
    generate(spec, tmp_path / "a")
    generate(spec, tmp_path / "b", workers=3)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_case_content_independent_of_case_count(tmp_path):
    generate(small_spec(n_cases=2, seed=4), tmp_path / "two")
    generate(small_spec(n_cases=5, seed=4), tmp_path / "five")
    for name in ("images/case_001.nii.gz", "labels/case_001.nii.gz"):
        assert (tmp_path / "two" / name).read_bytes() == (tmp_path / "five" / name).read_bytes()


def test_different_seeds_differ(tmp_path):
    generate(small_spec(seed=1), tmp_path / "a")
    generate(small_spec(seed=2), tmp_path / "b")
    assert (tmp_path / "a/images/case_000.nii.gz").read_bytes() != (tmp_path / "b/images/case_000.nii.gz").read_bytes()


def test_zero_jitter_makes_identical_sizes(tmp_path):
    generate(small_spec(n_cases=3, size_jitter=0.0, position_jitter=0), tmp_path)
    idx = build_index(tmp_path)
    # identical organ sizes: every donor passes even the tightest positive threshold
    assert len(enumerate_plans(idx, 1e-12)) == 3**3 - 3
    assert enumerate_plans(idx, 0.0) == []


def test_default_spec_generates(tmp_path):
    meta = generate(default_spec(n_cases=2), tmp_path)
    assert all(info["count"] > 0 for case in meta["cases"].values() for info in case.values())
    assert not math.isnan(meta["cases"]["case_000"]["1"]["centroid"][0])
