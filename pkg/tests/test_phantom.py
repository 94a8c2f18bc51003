import numpy as np
import pytest

from clavage.detector import AnatomicalConfig, check_anatomical_compatibility, laterality_of
from clavage.phantom import (
    PhantomError,
    PhantomSpec,
    generate_dataset,
    generate_mce_pair,
    generate_scene,
    scene_components,
)
from clavage.volume import load_volume, save_volume


def plateau_sequence(line, anchors=(40, 100, 700, 900)):
    """Collapse an HU profile to its nearest-anchor plateau sequence.

    Partial-volume voxels (far from every anchor) are dropped so soft
    edges do not produce spurious plateaus.
    """
    anchors = np.asarray(anchors)
    dist = np.abs(line[:, None] - anchors[None, :])
    near = dist.min(axis=1) < 80
    snapped = anchors[np.argmin(dist, axis=1)][near]
    seq = [int(snapped[0])]
    for v in snapped[1:]:
        if v != seq[-1]:
            seq.append(int(v))
    return seq


def medial_profile(scene, side="right", reach=16):
    """HU along the medial axis, starting just outside the tip, inward."""
    truth = scene.clavicles[side]
    iy, iz = int(round(truth.tip[1])), int(round(truth.tip[2]))
    ix = int(round(truth.tip[0]))
    # the rounded tip extends one radius past the tip centre: start the
    # profile in soft tissue beyond it
    if side == "right":
        return scene.volume.data[ix - reach:ix + 8, iy, iz][::-1]
    return scene.volume.data[ix - 7:ix + reach + 1, iy, iz]


class TestSceneGeneration:
    def test_same_spec_bit_identical(self):
        spec = PhantomSpec(seed=5, age=18.5)
        a, b = generate_scene(spec), generate_scene(spec)
        assert np.array_equal(a.volume.data, b.volume.data)

    def test_component_count_and_labels(self):
        scene = generate_scene(PhantomSpec(seed=2, age=20.0))
        comps = scene_components(scene)
        assert len(comps) == 8
        labels = scene.label_components(comps)
        tags = sorted(labels.values())
        assert tags.count("right-clavicle") == 1
        assert tags.count("left-clavicle") == 1
        assert len(tags) == 8

    def test_anatomical_constraints_by_construction(self):
        for seed in (1, 2, 3):
            scene = generate_scene(PhantomSpec(seed=seed, age=16.0))
            comps = scene_components(scene)
            labels = scene.label_components(comps)
            meshes = {v: comps.components[k] for k, v in labels.items() if "clavicle" in v}
            assert laterality_of(meshes["right-clavicle"]) == "right"
            assert laterality_of(meshes["left-clavicle"]) == "left"
            assert check_anatomical_compatibility(
                meshes["right-clavicle"], meshes["left-clavicle"], AnatomicalConfig()
            )

    def test_dims_too_small_rejected(self):
        with pytest.raises(PhantomError):
            generate_scene(PhantomSpec(seed=0, age=18.0, volume_dims=(80, 80, 80)))

    def test_ctv_round_trip(self, tmp_path):
        scene = generate_scene(PhantomSpec(seed=8, age=22.0))
        p = tmp_path / "scene.ctv"
        save_volume(p, scene.volume)
        again = load_volume(p)
        assert np.array_equal(again.data, scene.volume.data)


class TestGapSignal:
    def test_gap_width_formula(self):
        assert PhantomSpec(seed=0, age=16.0).gap_width() == pytest.approx(2.8)
        assert PhantomSpec(seed=0, age=26.0).gap_width() == 0.0
        assert PhantomSpec(seed=0, age=24.0).gap_width() == 0.0

    def test_ray_march_measures_gap_age_16(self):
        scene = generate_scene(PhantomSpec(seed=7, age=16.0))
        profile = medial_profile(scene)
        bone = profile >= 300
        # profile runs tip -> inward: cap run, gap run, shaft
        i = 0
        while i < len(bone) and not bone[i]:
            i += 1
        while i < len(bone) and bone[i]:
            i += 1
        gap_start = i
        while i < len(bone) and not bone[i]:
            i += 1
        measured_mm = (i - gap_start) * scene.spec.voxel_spacing
        assert abs(measured_mm - 2.8) <= 1.0  # one voxel

    def test_fused_cap_one_fewer_discontinuity(self):
        young = generate_scene(PhantomSpec(seed=7, age=16.0, noise_sigma=0.0))
        fused = generate_scene(PhantomSpec(seed=7, age=26.0, noise_sigma=0.0))
        seq_young = plateau_sequence(medial_profile(young))
        seq_fused = plateau_sequence(medial_profile(fused))
        assert seq_young == [40, 700, 100, 900]
        assert seq_fused == [40, 700, 900]
        assert len(seq_fused) == len(seq_young) - 1

    def test_gap_monotone_in_age(self):
        widths = []
        for age in np.linspace(14.0, 26.0, 9):
            scene = generate_scene(PhantomSpec(seed=11, age=float(age), noise_sigma=0.0))
            profile = medial_profile(scene)
            bone = profile >= 300
            i = 0
            while i < len(bone) and not bone[i]:
                i += 1
            while i < len(bone) and bone[i]:
                i += 1
            start = i
            while i < len(bone) and not bone[i]:
                i += 1
            widths.append(0 if i >= len(bone) else i - start)
        assert all(a >= b for a, b in zip(widths, widths[1:]))
        assert widths[0] >= 3  # age 14: 3.5 mm gap

    def test_gap_plane_index_within_stack(self):
        for seed in (3, 4):
            scene = generate_scene(PhantomSpec(seed=seed, age=15.0))
            for side in ("right", "left"):
                for view, idx in scene.clavicles[side].gap_plane_index.items():
                    assert 0 <= idx <= 49


class TestFastPath:
    def test_returns_valid_pair(self):
        right, left, age = generate_mce_pair(PhantomSpec(seed=13, age=19.0))
        assert age == 19.0
        assert right.laterality == "right" and left.laterality == "left"
        for mce in (right, left):
            assert mce.data.shape == (50, 50, 50)
            assert 0.0 <= mce.data.min() and mce.data.max() <= 1.0

    def test_deterministic(self):
        a = generate_mce_pair(PhantomSpec(seed=14, age=21.0))
        b = generate_mce_pair(PhantomSpec(seed=14, age=21.0))
        assert np.array_equal(a[0].data, b[0].data)
        assert np.array_equal(a[1].data, b[1].data)

    def test_matches_scene_path_geometry(self):
        # same seed: the fast-path crop must anchor at the same world box
        spec = PhantomSpec(seed=15, age=17.0, noise_sigma=0.0, distractor_count=0)
        fast_r, _, _ = generate_mce_pair(spec)
        scene = generate_scene(spec)
        comps = scene_components(scene)
        labels = scene.label_components(comps)
        from clavage.roi import localize_mce

        mesh = next(comps.components[k] for k, v in labels.items() if v == "right-clavicle")
        full_r = localize_mce(mesh, scene.volume, "right")
        assert np.allclose(fast_r.world_box.min, full_r.world_box.min, atol=1e-9)
        assert np.max(np.abs(fast_r.data - full_r.data)) <= 1e-6


class TestDataset:
    def test_split_sizes_100(self):
        ds = generate_dataset(100, seed=3)
        assert len(ds.split["train"]) == 64
        assert len(ds.split["val"]) == 16
        assert len(ds.split["test"]) == 20

    def test_partition_disjoint(self):
        ds = generate_dataset(50, seed=4)
        all_idx = sorted(ds.split["train"] + ds.split["val"] + ds.split["test"])
        assert all_idx == list(range(50))

    def test_every_stratum_in_train_at_120(self):
        ds = generate_dataset(120, seed=5)
        ages = ds.ages
        train_strata = {int(np.floor(ages[i])) for i in ds.split["train"]}
        all_strata = {int(np.floor(a)) for a in ages}
        assert train_strata == all_strata

    def test_ages_uniform_range(self):
        ds = generate_dataset(200, seed=6)
        assert ds.ages.min() >= 14.0 and ds.ages.max() <= 26.0
        assert 19.0 < ds.ages.mean() < 21.0

    def test_too_few_scenes_rejected(self):
        with pytest.raises(PhantomError):
            generate_dataset(10)
