import json

import numpy as np
import pytest

from anatoforge.maskops import BinaryMask
from anatoforge.phantom import OrganSpec, PhantomSpec, generate
from anatoforge.volume_io import IntensityVolume, LabelVolume, VolumeGeometry, write_volume

# criterion number -> (title, passed, detail)
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[n]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {n}: {title} -- {detail}")


@pytest.fixture
def criterion():
    """Record one acceptance criterion's outcome, then assert it."""

    def record(n, title, passed, detail=""):
        ACCEPTANCE_RESULTS[n] = (title, bool(passed), detail)
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {n}: {title} -- {detail}")
        assert passed, f"criterion {n} failed: {detail}"

    return record


def geom(dims, spacing=(1.0, 1.0, 1.0)):
    return VolumeGeometry(tuple(dims), spacing)


def mask(bits):
    bits = np.asarray(bits, dtype=bool)
    return BinaryMask(geom(bits.shape), bits)


def write_dataset(root, cases, organs, spacing=(1.0, 1.0, 1.0)):
    """Write ``{case_id: (image, labels)}`` arrays plus a manifest; returns the manifest path."""
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for cid, (img, lab) in cases.items():
        g = geom(img.shape, spacing)
        write_volume(IntensityVolume(g, np.asarray(img)), root / f"{cid}.nii.gz")
        write_volume(LabelVolume(g, np.asarray(lab, np.uint8)), root / f"{cid}_seg.nii.gz")
        entries.append({"id": cid, "image": f"{cid}.nii.gz", "label": f"{cid}_seg.nii.gz"})
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps({"organs": {str(k): v for k, v in organs.items()}, "cases": entries}))
    return manifest


def random_blob(rng, dims, n_seeds=None, p=None):
    """Random mask: either Bernoulli noise or a union of small boxes."""
    if p is not None:
        bits = rng.random(dims) < p
    else:
        bits = np.zeros(dims, dtype=bool)
        for _ in range(n_seeds or int(rng.integers(1, 4))):
            lo = [int(rng.integers(0, d)) for d in dims]
            hi = [min(d, l + int(rng.integers(1, max(2, d // 2 + 1)))) for l, d in zip(lo, dims)]
            bits[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] = True
    if not bits.any():
        bits[tuple(int(rng.integers(0, d)) for d in dims)] = True
    return bits


def small_spec(n_cases=3, seed=0, size_jitter=0.1, position_jitter=1, noise=5.0, n_organs=2):
    organs = [
        OrganSpec(1, "liver", "ellipsoid", (7.0, 8.0, 6.0), (4.0, 4.0, 3.0), size_jitter, position_jitter, 60.0, 4.0),
        OrganSpec(2, "kidney", "box", (16.0, 8.0, 6.0), (2.0, 3.0, 2.5), size_jitter, position_jitter, 30.0, 4.0),
        OrganSpec(3, "bone", "ellipsoid", (12.0, 17.0, 6.0), (3.0, 2.0, 3.0), size_jitter, position_jitter, 400.0, 10.0),
    ][:n_organs]
    return PhantomSpec((22, 22, 13), tuple(organs), n_cases=n_cases, spacing=(1.0, 1.0, 2.0), noise_sigma=noise, seed=seed)


@pytest.fixture(scope="session")
def phantom_dataset(tmp_path_factory):
    """Three cases, two organs, written to disk once per session."""
    root = tmp_path_factory.mktemp("phantom")
    meta = generate(small_spec(), root)
    return root, meta
