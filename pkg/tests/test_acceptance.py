"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are also collected in the terminal summary.
"""

import itertools
import math
import time

import numpy as np
import pytest

from anatoforge.cli import main
from anatoforge.inpaint import InpaintConfig, blend, diffusion_fill
from anatoforge.maskops import ShiftWindow, best_shift, best_shift_exhaustive, shift_mask
from anatoforge.metrics import dice
from anatoforge.phantom import generate, lattice_count, place_organs
from anatoforge.planner import CaseEntry, DatasetIndex, build_index, combination_count, enumerate_plans, sample_plans
from anatoforge.transplant import VolumeCache, transplant
from anatoforge.volume_io import IntensityVolume, LabelVolume, VolumeGeometry, load_volume, write_volume
from conftest import geom, mask, random_blob, small_spec


def phantom_count_index(spec):
    """Index straight from the analytic per-organ voxel counts of a phantom spec."""
    cases, counts = [], {}
    for i in range(spec.n_cases):
        cid = f"case_{i:03d}"
        cases.append(CaseEntry(cid, "", ""))
        for p in place_organs(spec, i):
            counts[(cid, p.organ_id)] = lattice_count(p, spec.dims)[0]
    return DatasetIndex(cases, list(spec.organ_table), spec.organ_table, counts)


def brute_force_plans(case_ids, organs, count, threshold):
    """Filter the full Cartesian product directly from voxel counts."""
    kept = set()
    for bg, *donors in itertools.product(case_ids, repeat=len(organs) + 1):
        if all(d == bg for d in donors):
            continue
        good = True
        for organ, d in zip(organs, donors):
            nb, nd = count[(bg, organ)], count[(d, organ)]
            if nb == 0 or nd == 0 or not abs(nd - nb) / nb < threshold:
                good = False
                break
        if good:
            kept.add((bg, *donors))
    return kept


# ---------------------------------------------------------------- 1


def test_criterion_1_combination_count(criterion):
    t0 = time.perf_counter()
    exact = combination_count(28, 4) == 17_210_368
    bad = []
    for n in range(1, 6):
        for k in range(0, 4):
            brute = sum(1 for _ in itertools.product(range(n), repeat=k + 1))
            if combination_count(n, k) != brute:
                bad.append((n, k, "product"))
            if k == 0:
                continue
            # on a phantom with no filtering, every combination is a plan except the n identities
            idx = phantom_count_index(small_spec(n_cases=n, n_organs=k, seed=n * 10 + k))
            if len(enumerate_plans(idx, math.inf)) + n != combination_count(n, k):
                bad.append((n, k, "planner"))
    dt = time.perf_counter() - t0
    criterion(1, "combination count", exact and not bad and dt < 1.0,
              f"C(28,4)={combination_count(28, 4)}, mismatches={bad}, {dt:.3f}s")


# ---------------------------------------------------------------- 2


def test_criterion_2_planner_oracle(criterion, tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    thresholds = [0.0, 0.01, 0.02, 0.1, math.inf]
    n_phantoms, mismatches, total_plans = 24, [], 0
    for i in range(n_phantoms):
        spec = small_spec(
            n_cases=int(rng.integers(1, 6)),
            n_organs=int(rng.integers(1, 4)),
            seed=int(rng.integers(0, 2**31)),
            size_jitter=float(rng.choice([0.0, 0.01, 0.03, 0.1])),
            position_jitter=int(rng.integers(0, 2)),
        )
        root = tmp_path / f"p{i}"
        generate(spec, root)
        idx = build_index(root)
        # oracle counts: recount each organ from the label files
        count = {}
        for c in idx.cases:
            lab = load_volume(c.label, kind="label").voxels
            for o in idx.organs:
                count[(c.case_id, o)] = int(np.count_nonzero(lab == o))
        for tau in thresholds:
            got = [(p.background, *(d for _, d in p.donors)) for p in enumerate_plans(idx, tau)]
            want = brute_force_plans(idx.case_ids, idx.organs, count, tau)
            total_plans += len(got)
            if len(got) != len(set(got)) or set(got) != want:
                mismatches.append((i, tau))
    dt = time.perf_counter() - t0
    criterion(2, "planner equals brute-force filter", not mismatches and dt < 30.0,
              f"{n_phantoms} phantoms x {len(thresholds)} thresholds, {total_plans} plans, "
              f"mismatches={mismatches}, {dt:.2f}s")


# ---------------------------------------------------------------- 3


def test_criterion_3_shift_optimality(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    window = ShiftWindow(radius=(8, 8, 8))
    mismatches, n_pairs = [], 600
    for i in range(n_pairs):
        dims = tuple(int(v) for v in rng.integers(4, 25, 3))
        if i % 3 == 0:
            a = random_blob(rng, dims, p=float(rng.uniform(0.02, 0.5)))
            b = random_blob(rng, dims, p=float(rng.uniform(0.02, 0.5)))
        else:
            a, b = random_blob(rng, dims), random_blob(rng, dims)
        fast = best_shift(mask(a), mask(b), window)
        slow = best_shift_exhaustive(mask(a), mask(b), window)
        if fast != slow:
            mismatches.append((i, dims, fast, slow))

    # analytic: a blob translated by t (kept fully on the grid) is recovered as -t
    analytic_bad = []
    for i in range(60):
        dims = (24, 24, 24)
        core = np.zeros(dims, bool)
        core[8:16, 8:16, 8:16] = random_blob(rng, (8, 8, 8))
        t = tuple(int(v) for v in rng.integers(-8, 9, 3))
        moved = shift_mask(mask(core), t)
        d, ov = best_shift(mask(core), moved, window)
        if d != tuple(-v for v in t) or ov != int(core.sum()):
            analytic_bad.append((t, d, ov))
    dt = time.perf_counter() - t0
    criterion(3, "shift search optimality", not mismatches and not analytic_bad and dt < 120.0,
              f"{n_pairs} random pairs + 60 translations, mismatches={len(mismatches)}, "
              f"analytic failures={len(analytic_bad)}, {dt:.2f}s")


# ---------------------------------------------------------------- 4


def test_criterion_4_transplant_consistency(criterion, tmp_path):
    spec = small_spec(n_cases=5, n_organs=3, seed=44, size_jitter=0.1, position_jitter=1)
    generate(spec, tmp_path)
    idx = build_index(tmp_path)
    plans = sample_plans(enumerate_plans(idx, math.inf), 120, seed=4)
    cache = VolumeCache()
    violations = []
    for plan in plans:
        res = transplant(plan, idx, cache=cache)
        bg = idx.case(plan.background)
        bg_img, bg_lab = cache.image(bg.image).voxels, cache.labels(bg.label).voxels
        out_img, out_lab, holes = res.image.voxels, res.labels.voxels, res.holes.bits
        base_union = np.isin(bg_lab, idx.organs)
        placed_union = np.zeros_like(base_union)
        for organ in idx.organs:
            rec = res.shifts[organ]
            d_img = cache.image(idx.case(rec.donor).image).voxels
            d_lab = cache.labels(idx.case(rec.donor).label).voxels
            # every output voxel of this organ must come from donor voxel p - d of the same organ
            pts = np.argwhere(out_lab == organ)
            src = pts - np.asarray(rec.offset)
            if len(pts) and ((src < 0).any() or (src >= np.asarray(idx.geometry.dims)).any()):
                violations.append((plan, organ, "source off grid"))
                continue
            sx, sy, sz = src.T
            if not (d_lab[sx, sy, sz] == organ).all():
                violations.append((plan, organ, "label source"))
            if not np.array_equal(out_img[tuple(pts.T)], d_img[sx, sy, sz]):
                violations.append((plan, organ, "intensity"))
            # placed mask via explicit index arithmetic
            dpts = np.argwhere(d_lab == organ) + np.asarray(rec.offset)
            ok = ((dpts >= 0) & (dpts < np.asarray(idx.geometry.dims))).all(axis=1)
            placed = np.zeros_like(base_union)
            placed[tuple(dpts[ok].T)] = True
            placed_union |= placed
        if (holes & (out_lab != 0)).any():
            violations.append((plan, "holes labelled"))
        if not np.array_equal(holes, base_union & ~placed_union):
            violations.append((plan, "hole set difference"))
        outside = ~(base_union | placed_union)
        if not (np.array_equal(out_img[outside], bg_img[outside]) and np.array_equal(out_lab[outside], bg_lab[outside])):
            violations.append((plan, "outside changed"))
    criterion(4, "transplant mask consistency", len(plans) >= 100 and not violations,
              f"{len(plans)} plans, violations={len(violations)}")


# ---------------------------------------------------------------- 5


def _ring(holes):
    ring = np.zeros_like(holes)
    for axis, step in itertools.product(range(3), (-1, 1)):
        s = np.roll(holes, step, axis)
        edge = [slice(None)] * 3
        edge[axis] = 0 if step == 1 else -1
        s[tuple(edge)] = False
        ring |= s
    return ring & ~holes


def test_criterion_5_inpainting(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    cfg = InpaintConfig()
    const_err = 0.0
    for _ in range(20):
        dims = tuple(int(v) for v in rng.integers(6, 20, 3))
        c = float(rng.integers(-1000, 1000))
        holes = random_blob(rng, dims)
        holes[0] = False
        img = np.full(dims, c, np.float32)
        img[holes] = rng.normal(0, 500, int(holes.sum()))
        out = diffusion_fill(IntensityVolume(geom(dims), img), mask(holes), cfg).voxels
        const_err = max(const_err, float(np.abs(out[holes] - c).max()))

    max_violations, n_configs = 0, 60
    for _ in range(n_configs):
        dims = tuple(int(v) for v in rng.integers(5, 16, 3))
        img = rng.normal(0, 300, dims).astype(np.float32)
        holes = random_blob(rng, dims, p=float(rng.uniform(0.05, 0.5))) if rng.random() < 0.5 else random_blob(rng, dims)
        holes[:, :, 0] = False
        out = diffusion_fill(IntensityVolume(geom(dims), img), mask(holes), cfg).voxels
        ring = _ring(holes)
        if out[holes].min() < img[ring].min() or out[holes].max() > img[ring].max():
            max_violations += 1

    blend_violations = 0
    for _ in range(30):
        dims = tuple(int(v) for v in rng.integers(3, 12, 3))
        dtype = [np.int16, np.float32][int(rng.integers(0, 2))]
        orig = rng.integers(-1000, 1000, dims).astype(dtype)
        holes = random_blob(rng, dims, p=0.3)
        holes[0] = False
        filled = diffusion_fill(IntensityVolume(geom(dims), orig), mask(holes), cfg)
        out = blend(filled, IntensityVolume(geom(dims), orig), mask(holes)).voxels
        if out.dtype != orig.dtype or out[~holes].tobytes() != orig[~holes].tobytes():
            blend_violations += 1
    dt = time.perf_counter() - t0
    passed = const_err <= 0.5 and max_violations == 0 and blend_violations == 0 and dt < 60
    criterion(5, "inpainting properties", passed,
              f"constant max error={const_err:.3f} HU, max-principle violations={max_violations}/{n_configs}, "
              f"blend violations={blend_violations}, {dt:.2f}s")


# ---------------------------------------------------------------- 6


def _random_affine(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    a = np.eye(4)
    a[:3, :3] = q * rng.uniform(0.5, 3.0, 3)
    a[:3, 3] = rng.uniform(-100, 100, 3)
    return a


def test_criterion_6_round_trip(criterion, tmp_path):
    rng = np.random.default_rng(6)
    failures = []
    kinds = [("image", np.int16), ("image", np.float32), ("label", np.uint8), ("label", np.int16), ("label", np.int32)]
    for i in range(100):
        kind, dtype = kinds[i % len(kinds)]
        dims = tuple(int(v) for v in rng.integers(1, 17, 3))
        spacing = tuple(float(v) for v in rng.uniform(0.3, 5.0, 3))
        g = VolumeGeometry(dims, spacing, _random_affine(rng) if i % 2 else None)
        if kind == "image":
            if dtype == np.float32:
                arr = rng.normal(0, 1000, dims).astype(np.float32)
            else:
                arr = rng.integers(-32768, 32768, dims).astype(np.int16)
            vol = IntensityVolume(g, arr)
        else:
            arr = rng.integers(0, 6, dims).astype(dtype)
            vol = LabelVolume(g, arr)
        path = tmp_path / f"v{i}.nii{'.gz' if i % 3 else ''}"
        write_volume(vol, path)
        back = load_volume(path, kind=kind)
        if back.voxels.dtype != arr.dtype or back.voxels.shape != dims or back.voxels.tobytes() != arr.tobytes():
            failures.append((i, "voxels"))
        if np.abs(back.geometry.affine - vol.geometry.affine).max() > 1e-5:
            failures.append((i, "affine"))
    criterion(6, "volume round trip", not failures, f"100 volumes, failures={failures}")


# ---------------------------------------------------------------- 7


def naive_dice(p, g):
    inter = sp = sg = 0
    for x in range(p.shape[0]):
        for y in range(p.shape[1]):
            for z in range(p.shape[2]):
                a, b = bool(p[x, y, z]), bool(g[x, y, z])
                inter += a and b
                sp += a
                sg += b
    return 1.0 if sp + sg == 0 else 2.0 * inter / (sp + sg)


def test_criterion_7_dice_oracle(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(150):
        dims = tuple(int(v) for v in rng.integers(1, 9, 3))
        p = rng.random(dims) < rng.uniform(0, 1)
        g = rng.random(dims) < rng.uniform(0, 1)
        worst = max(worst, abs(dice(mask(p), mask(g)) - naive_dice(p, g)))
    a = np.zeros((4, 4, 4), bool)
    a[:2] = True
    b = ~a
    p = np.zeros((2, 2, 2), bool)
    g = np.zeros((2, 2, 2), bool)
    p[0, 0, :] = True
    g[0, 0, 0] = g[1, 1, 1] = True
    analytic = (dice(mask(a), mask(a)), dice(mask(a), mask(b)), dice(mask(p), mask(g)))
    passed = worst <= 1e-12 and analytic == (1.0, 0.0, 0.5)
    criterion(7, "dice oracle", passed, f"150 pairs, max |diff|={worst:.2e}, analytic={analytic}")


# ---------------------------------------------------------------- 8


def test_criterion_8_determinism(criterion, tmp_path):
    generate(small_spec(n_cases=4, n_organs=3, seed=8), tmp_path / "data")
    base = ["augment", "--manifest", str(tmp_path / "data"), "--threshold", "0.2",
            "--count", "12", "--seed", "123"]
    codes = [
        main([*base, "--workers", "1", "--out", str(tmp_path / "w1a")]),
        main([*base, "--workers", "1", "--out", str(tmp_path / "w1b")]),
        main([*base, "--workers", "8", "--out", str(tmp_path / "w8")]),
    ]

    def tree(root):
        return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    t1a, t1b, t8 = tree(tmp_path / "w1a"), tree(tmp_path / "w1b"), tree(tmp_path / "w8")
    n_out = sum(k.endswith("_seg.nii.gz") for k in t1a)
    passed = codes == [0, 0, 0] and n_out > 0 and t1a == t1b == t8
    criterion(8, "augment determinism across runs and workers", passed,
              f"exit codes={codes}, {n_out} outputs, {len(t1a)} files, identical={t1a == t1b == t8}")
