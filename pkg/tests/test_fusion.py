"""Fusion checks: sparse attention, alignment, patching, reversible fusion."""

import json

import numpy as np
import pytest
from oracles import random_state

from qv2x import fusion, qcore
from qv2x.errors import CapacityError, DataError, DomainError, IntegrityError

RNG = np.random.default_rng


def camera(coords, values, grid=None):
    return fusion.ModalityFrame("CAMERA_2D", np.asarray(values), tuple(coords), grid)


def lidar(coords, values, grid=None):
    return fusion.ModalityFrame("LIDAR_3D", np.asarray(values), tuple(coords), grid)


def radar(values):
    return fusion.ModalityFrame("RADAR", np.asarray(values))


class TestModalityFrame:
    def test_defaults_and_validation(self):
        f = camera([(0, 0), (3, 3)], [0.2, 0.9])
        assert f.grid == (4, 4)
        assert lidar([(1, 2, 1)], [0.5]).grid == (4, 4, 2)
        assert radar([0.1, 0.2, 0.3, 0.4]).grid == ()

    def test_feature_count_power_of_two_capped(self):
        with pytest.raises(DomainError):
            camera([(0, 0), (0, 1), (0, 2)], [0.1, 0.2, 0.3])
        with pytest.raises(DomainError):
            fusion.ModalityFrame("RADAR", np.full(32, 0.5))

    def test_feature_range(self):
        with pytest.raises(DomainError):
            radar([0.1, 1.2, 0.3, 0.4])

    def test_coords_match_features(self):
        with pytest.raises(DomainError):
            camera([(0, 0)], [0.1, 0.2])

    def test_duplicate_and_out_of_bounds_cells(self):
        with pytest.raises(DomainError):
            camera([(0, 0), (0, 0)], [0.1, 0.2])
        with pytest.raises(DomainError):
            camera([(0, 4)], [0.1])

    def test_radar_carries_no_grid(self):
        with pytest.raises(DomainError):
            fusion.ModalityFrame("RADAR", np.full(4, 0.5), ((0, 0),) * 4)

    def test_unknown_modality(self):
        with pytest.raises(DomainError):
            fusion.ModalityFrame("SONAR", np.full(4, 0.5))


class TestSelfAttend:
    def test_full_keep_is_amplitude_encoding(self):
        f = radar([0.9, 0.3, 0.1, 0.7])
        probs = qcore.probabilities(fusion.self_attend(f, 4).amplitudes)
        sq = f.features**2
        np.testing.assert_allclose(probs, sq / sq.sum(), atol=1e-12)

    def test_keep_one_is_basis_state_at_max(self):
        f = radar([0.2, 0.8, 0.5, 0.1])
        state = fusion.self_attend(f, 1)
        np.testing.assert_allclose(state.amplitudes, [0, 1, 0, 0], atol=1e-12)

    def test_already_normalized_pair_unchanged(self):
        f = radar([0.8, 0.6, 0.0, 0.0])
        state = fusion.self_attend(f, 2)
        np.testing.assert_allclose(state.amplitudes, [0.8, 0.6, 0, 0], atol=1e-12)

    def test_ties_break_to_lower_basis_index(self):
        f = radar([0.5, 0.5, 0.5, 0.5])
        state = fusion.self_attend(f, 2)
        r = 1 / np.sqrt(2)
        np.testing.assert_allclose(state.amplitudes, [r, r, 0, 0], atol=1e-12)

    def test_sparsity_and_norm_invariant(self):
        rng = RNG(0)
        for _ in range(20):
            f = fusion.ModalityFrame("RADAR", rng.uniform(0.01, 1.0, 4))
            k = int(rng.integers(1, 5))
            state = fusion.self_attend(f, k)
            assert np.count_nonzero(state.amplitudes) <= k
            assert abs(np.linalg.norm(state.amplitudes) - 1.0) < 1e-12

    def test_all_zero_rejected(self):
        with pytest.raises(DomainError):
            fusion.self_attend(camera([(0, 0)], [0.0]), 1)

    def test_k_out_of_range(self):
        with pytest.raises(DomainError):
            fusion.self_attend(radar([0.5] * 4), 5)
        with pytest.raises(DomainError):
            fusion.self_attend(radar([0.5] * 4), 0)


def joint_probs(pair, grid2=(4, 4), grid3=(4, 4, 2)):
    dim2 = np.prod(grid2)
    dim3 = np.prod(grid3)
    return qcore.probabilities(pair.joint_state.amplitudes).reshape(dim2, dim3)


class TestEntangleAlign:
    def test_single_voxel_marginal_is_point_mass(self):
        pair = fusion.entangle_align(
            camera([(2, 1)], [0.5]), lidar([(2, 1, 1)], [0.5])
        )
        marg2 = joint_probs(pair).sum(axis=1)
        expect = np.zeros(16)
        expect[2 * 4 + 1] = 1.0
        np.testing.assert_allclose(marg2, expect, atol=1e-12)

    def test_shifted_voxel_shifts_marginal(self):
        base = fusion.entangle_align(camera([(0, 0)], [0.5]), lidar([(1, 1, 0)], [0.5]))
        shifted = fusion.entangle_align(
            camera([(0, 0)], [0.5]), lidar([(1, 2, 0)], [0.5])
        )
        m0 = joint_probs(base).sum(axis=1).reshape(4, 4)
        m1 = joint_probs(shifted).sum(axis=1).reshape(4, 4)
        np.testing.assert_allclose(np.roll(m0, 1, axis=1), m1, atol=1e-12)

    def test_two_voxels_match_brute_force_enumeration(self):
        voxels = [(0, 0, 0), (3, 2, 1)]
        pair = fusion.entangle_align(
            camera([(0, 0)], [0.5]), lidar(voxels, [0.5, 0.5])
        )
        expected = np.zeros((16, 32))
        for r, c, l in voxels:
            expected[r * 4 + c, (r * 4 + c) * 2 + l] = 0.5
        np.testing.assert_allclose(joint_probs(pair), expected, atol=1e-12)

    def test_random_occupancy_matches_brute_force(self):
        rng = RNG(7)
        flat = rng.choice(32, size=8, replace=False)
        voxels = [(int(i // 8), int(i % 8 // 2), int(i % 2)) for i in flat]
        pair = fusion.entangle_align(
            camera([(1, 1)], [0.5]), lidar(voxels, rng.uniform(0, 1, 8))
        )
        expected = np.zeros((16, 32))
        for r, c, l in voxels:
            expected[r * 4 + c, (r * 4 + c) * 2 + l] = 1 / 8
        np.testing.assert_allclose(joint_probs(pair), expected, atol=1e-12)

    def test_custom_projection_and_mask(self):
        proj = lambda v: (v[2], v[0])  # noqa: E731
        pair = fusion.entangle_align(
            camera([(1, 3), (0, 0)], [0.5, 0.5]),
            lidar([(3, 0, 1), (2, 1, 0)], [0.5, 0.5]),
            projection=proj,
        )
        # voxels project to (1, 3) and (0, 2); only (1, 3) is camera-occupied
        expect = np.zeros((4, 4), dtype=bool)
        expect[1, 3] = True
        np.testing.assert_array_equal(pair.overlap_mask, expect)

    def test_non_total_projection_rejected(self):
        with pytest.raises(DomainError):
            fusion.entangle_align(
                camera([(0, 0)], [0.5]),
                lidar([(0, 0, 0)], [0.5]),
                projection=lambda v: (v[0] + 1, v[1]),
            )

    def test_empty_occupancy_rejected(self):
        with pytest.raises(DomainError):
            fusion.entangle_align(
                fusion.ModalityFrame("CAMERA_2D", [0.5], ((0, 0),)),
                fusion.ModalityFrame("LIDAR_3D", [0.5], ()),
            )

    def test_modality_roles_enforced(self):
        f = camera([(0, 0)], [0.5])
        with pytest.raises(DomainError):
            fusion.entangle_align(f, f)

    def test_register_capacity(self):
        big2 = camera([(0, 0)], [0.5], grid=(8, 8))
        big3 = lidar([(0, 0, 0)], [0.5], grid=(8, 8, 2))
        with pytest.raises(CapacityError):
            fusion.entangle_align(big2, big3)
        # 8x8 camera with the default lidar grid fits: 6 + 5 = 11 qubits
        pair = fusion.entangle_align(big2, lidar([(1, 1, 0)], [0.5]))
        assert pair.joint_state.n_qubits == 11


def full_cover_lidar(values):
    coords = [(r, c, 0) for r in range(4) for c in range(4)]
    return lidar(coords, values)


class TestPhasePatch:
    def test_full_overlap_plain_average(self):
        rng = RNG(1)
        v2 = rng.uniform(0, 1, 16)
        v3 = rng.uniform(0, 1, 16)
        cells = [(r, c) for r in range(4) for c in range(4)]
        f2, f3 = camera(cells, v2), full_cover_lidar(v3)
        out = fusion.phase_patch(fusion.entangle_align(f2, f3), f2, f3)
        np.testing.assert_allclose(
            out.fused_grid, 0.5 * (v2 + v3).reshape(4, 4), atol=1e-12
        )
        np.testing.assert_allclose(out.camera_grid, v2.reshape(4, 4), atol=1e-12)

    def test_adjacent_donor_copied(self):
        f2 = camera([(0, 0), (0, 1), (1, 0), (1, 1)], [0.8, 0.6, 0.4, 0.2])
        f3 = lidar([(3, 3, 0)], [1.0])
        out = fusion.phase_patch(fusion.entangle_align(f2, f3), f2, f3)
        # (0, 2) ties donors (0, 1) and (1, 1) at distance 1; row-major wins
        assert out.camera_grid[0, 2] == 0.6

    def test_max_distance_donor_fills_zero(self):
        f2 = camera([(0, 0)], [0.9])
        f3 = lidar([(0, 0, 0)], [0.7])
        out = fusion.phase_patch(fusion.entangle_align(f2, f3), f2, f3)
        assert abs(out.camera_grid[3, 3]) < 1e-12
        assert abs(out.lidar_grid[3, 3]) < 1e-12

    def test_mid_distance_cosine_decay(self):
        f2 = camera([(0, 0)], [0.9])
        f3 = lidar([(0, 0, 0)], [0.7])
        out = fusion.phase_patch(fusion.entangle_align(f2, f3), f2, f3)
        np.testing.assert_allclose(
            out.camera_grid[0, 2], 0.9 * np.cos(np.pi / 4), atol=1e-12
        )

    def test_shared_cell_projection_takes_mean(self):
        f2 = camera([(2, 2)], [0.5])
        f3 = lidar([(2, 2, 0), (2, 2, 1)], [0.2, 0.8])
        out = fusion.phase_patch(fusion.entangle_align(f2, f3), f2, f3)
        np.testing.assert_allclose(out.lidar_grid[2, 2], 0.5, atol=1e-12)
        np.testing.assert_allclose(out.fused_grid[2, 2], 0.5, atol=1e-12)

    def test_overlap_cells_average_even_with_gaps(self):
        f2 = camera([(0, 0), (3, 3)], [0.4, 0.8])
        f3 = lidar([(0, 0, 1)], [0.6])
        out = fusion.phase_patch(fusion.entangle_align(f2, f3), f2, f3)
        np.testing.assert_allclose(out.fused_grid[0, 0], 0.5, atol=1e-12)

    def test_stale_pair_rejected(self):
        f2 = camera([(0, 0)], [0.9])
        f3 = lidar([(0, 0, 0)], [0.7])
        pair = fusion.entangle_align(f2, f3)
        other = lidar([(3, 3, 1)], [0.7])
        with pytest.raises(DomainError):
            fusion.phase_patch(pair, f2, other)


class TestCrossFuse:
    def test_zero_semantics_is_pure_hadamard_layer(self):
        state = random_state(RNG(3), 2)
        fused, _ = fusion.cross_fuse(state, np.zeros(4))
        layer = qcore.Circuit(2, (qcore.GateOp("H", (0,)), qcore.GateOp("H", (1,))))
        np.testing.assert_allclose(
            fused.amplitudes,
            qcore.apply_circuit(state, layer).amplitudes,
            atol=1e-12,
        )

    def test_ground_state_with_flip_semantics(self):
        fused, _ = fusion.cross_fuse(qcore.init_state(1), np.array([0.0, 1.0]))
        r = 1 / np.sqrt(2)
        np.testing.assert_allclose(fused.amplitudes, [r, r], atol=1e-12)

    def test_random_state_norm_and_handle(self):
        rng = RNG(4)
        state = random_state(rng, 3)
        fused, handle = fusion.cross_fuse(state, rng.uniform(0, 1, 8))
        assert abs(np.sum(np.abs(fused.amplitudes) ** 2) - 1.0) < 1e-10
        assert handle.source_dims == 8
        assert handle.descriptor[0]["kind"] == "PHASE_DIAG"

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            fusion.cross_fuse(qcore.init_state(2), np.zeros(3))

    def test_semantics_range(self):
        with pytest.raises(DomainError):
            fusion.cross_fuse(qcore.init_state(1), np.array([0.0, 1.5]))


class TestUnfuse:
    def test_roundtrip_fidelity_random_states(self):
        rng = RNG(5)
        for n in (1, 2, 3, 4):
            state = random_state(rng, n)
            fused, handle = fusion.cross_fuse(state, rng.uniform(0, 1, 1 << n))
            back = fusion.unfuse(fused, handle)
            assert qcore.state_fidelity(back, state) >= 1 - 1e-9
            np.testing.assert_allclose(back.amplitudes, state.amplitudes, atol=1e-10)

    def test_identity_semantics_hadamard_roundtrip(self):
        state = random_state(RNG(6), 2)
        fused, handle = fusion.cross_fuse(state, np.zeros(4))
        np.testing.assert_allclose(
            fusion.unfuse(fused, handle).amplitudes, state.amplitudes, atol=1e-12
        )

    def test_double_fuse_unfuses_in_reverse_order(self):
        rng = RNG(8)
        state = random_state(rng, 3)
        b1, b2 = rng.uniform(0, 1, 8), rng.uniform(0, 1, 8)
        s1, h1 = fusion.cross_fuse(state, b1)
        s2, h2 = fusion.cross_fuse(s1, b2)
        back = fusion.unfuse(fusion.unfuse(s2, h2), h1)
        assert qcore.state_fidelity(back, state) >= 1 - 1e-9

    def test_dimension_mismatch(self):
        fused, handle = fusion.cross_fuse(qcore.init_state(1), np.zeros(2))
        with pytest.raises(DomainError):
            fusion.unfuse(qcore.init_state(2), handle)

    def test_bad_descriptor_rejected_at_construction(self):
        with pytest.raises(DomainError):
            fusion.FusionHandle(descriptor=({"kind": "H_LAYER"},), source_dims=2)
        with pytest.raises(DomainError):
            fusion.FusionHandle(
                descriptor=(
                    {"kind": "PHASE_DIAG", "phases": (0.0,)},
                    {"kind": "H_LAYER", "wires": (0,)},
                ),
                source_dims=2,
            )


class TestHandleSerialization:
    def test_roundtrip(self, tmp_path):
        rng = RNG(9)
        state = random_state(rng, 2)
        fused, handle = fusion.cross_fuse(state, rng.uniform(0, 1, 4))
        path = tmp_path / "handle.json"
        fusion.save_handle(handle, path)
        loaded = fusion.load_handle(path)
        assert loaded == handle
        np.testing.assert_allclose(
            fusion.unfuse(fused, loaded).amplitudes, state.amplitudes, atol=1e-10
        )

    def test_wrong_tag(self, tmp_path):
        path = tmp_path / "handle.json"
        path.write_text(json.dumps({"format": "other", "descriptor": []}))
        with pytest.raises(IntegrityError):
            fusion.load_handle(path)

    def test_tampered_wires_fail_unfuse(self, tmp_path):
        fused, handle = fusion.cross_fuse(qcore.init_state(2), np.zeros(4))
        path = tmp_path / "handle.json"
        fusion.save_handle(handle, path)
        record = json.loads(path.read_text())
        record["descriptor"][1]["wires"] = [0]
        path.write_text(json.dumps(record))
        with pytest.raises(IntegrityError):
            fusion.unfuse(fused, fusion.load_handle(path))

    def test_corrupt_phases_fail_load(self, tmp_path):
        fused, handle = fusion.cross_fuse(qcore.init_state(2), np.zeros(4))
        path = tmp_path / "handle.json"
        fusion.save_handle(handle, path)
        record = json.loads(path.read_text())
        record["descriptor"][0]["phases"] = [0.0, 0.0]
        path.write_text(json.dumps(record))
        with pytest.raises(IntegrityError):
            fusion.load_handle(path)

    def test_fused_probabilities_for_consumers(self):
        fused, _ = fusion.cross_fuse(qcore.init_state(2), np.full(4, 0.25))
        probs = fusion.fused_probabilities(fused)
        assert abs(probs.sum() - 1.0) < 1e-12
        assert probs.min() >= 0.0


class TestFrameInterchange:
    def test_jsonl_roundtrip(self, tmp_path):
        frames = [
            camera([(0, 0), (1, 2)], [0.3, 0.7]),
            lidar([(2, 2, 1)], [0.5]),
            radar([0.1, 0.9, 0.4, 0.2]),
            camera([(5, 6)], [0.8], grid=(8, 8)),
        ]
        path = tmp_path / "frames.jsonl"
        fusion.frames_to_jsonl(frames, path)
        loaded = fusion.frames_from_jsonl(path)
        assert len(loaded) == 4
        for a, b in zip(frames, loaded):
            assert a.modality == b.modality
            assert a.coords == b.coords
            assert a.grid == b.grid
            np.testing.assert_array_equal(a.features, b.features)

    def test_unknown_field_reports_line(self, tmp_path):
        path = tmp_path / "frames.jsonl"
        good = '{"modality": "RADAR", "coords": [], "features": [0.5, 0.5, 0.5, 0.5]}'
        bad = '{"modality": "RADAR", "coords": [], "features": [0.5], "x": 1}'
        path.write_text(good + "\n" + bad + "\n")
        with pytest.raises(DataError, match="line 2"):
            fusion.frames_from_jsonl(path)

    def test_invalid_frame_reports_line(self, tmp_path):
        path = tmp_path / "frames.jsonl"
        path.write_text('{"modality": "RADAR", "coords": [], "features": [2.0]}\n')
        with pytest.raises(DataError, match="line 1"):
            fusion.frames_from_jsonl(path)
