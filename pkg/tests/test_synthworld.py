import json
import os

import numpy as np
import pytest
import torch

from conftest import draw_params
from emgface import emg
from emgface import synthworld as sw
from emgface.face_model import render_geometry


@pytest.fixture(scope="session")
def layout(toy_model):
    return sw.build_layout(toy_model)


@pytest.fixture(scope="session")
def tiny_dataset(toy_model, tmp_path_factory):
    root = tmp_path_factory.mktemp("world") / "tiny"
    fingerprint = sw.generate_dataset(toy_model, sw.world_tiny(), str(root))
    return str(root), fingerprint


# ---------------------------------------------------------------------------
# montage
# ---------------------------------------------------------------------------


def test_layout_is_22_mirrored_channels(toy_model, layout):
    assert len(layout.labels) == emg.N_CHANNELS == 22
    assert len(set(layout.labels)) == 22
    assert layout.vertex_indices.shape == (22,)
    assert layout.vertex_indices.max().item() < toy_model.n_vertices
    # channels come in left/right pairs mirrored in u, matched in v
    for i in range(0, 22, 2):
        left, right = layout.positions_uv[i], layout.positions_uv[i + 1]
        assert layout.labels[i].endswith("_l") and layout.labels[i + 1].endswith("_r")
        assert left[0] == pytest.approx(-right[0])
        assert left[1] == pytest.approx(right[1])


def test_electrode_centers_shift_exactly_with_translation(toy_model, layout):
    params = draw_params(5)
    centers = sw.electrode_centers(toy_model, params, layout, 64)
    shifted = params.clone()
    shifted.pose[3] = shifted.pose[3] + 0.1
    centers2 = sw.electrode_centers(toy_model, shifted, layout, 64)
    delta = centers2 - centers
    assert torch.allclose(delta[:, 0], torch.full((22,), 6.4, dtype=delta.dtype), atol=1e-9)
    assert torch.allclose(delta[:, 1], torch.zeros(22, dtype=delta.dtype), atol=1e-9)


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------


def test_seventeen_tasks_cover_every_channel():
    templates = sw.task_templates()
    assert len(templates) == 17
    assert sum(t.kind == "functional" for t in templates) == 11
    assert sum(t.kind == "emotion" for t in templates) == 6
    assert len({t.name for t in templates}) == 17
    union = np.zeros(emg.N_CHANNELS)
    for t in templates:
        union = np.maximum(union, sw._drive_vector(t))
    assert (union > 0).all(), "every montage channel must fire in at least one task"


def test_wink_tasks_are_asymmetric():
    templates = {t.name: t for t in sw.task_templates()}
    labels = sw.electrode_labels()
    left = sw._drive_vector(templates["wink_left"])
    assert left[labels.index("orbicularis_oculi_l")] > 0
    assert left[labels.index("orbicularis_oculi_r")] == 0


def test_activation_curve_shape_rest_and_jitter():
    template = sw.task_templates()[0]
    curve = sw.activation_curve(template, 1.4, sw.SAMPLE_RATE_HZ, seed=9)
    assert curve.shape == (int(round(1.4 * sw.SAMPLE_RATE_HZ)), 22)
    assert (curve >= 0).all()
    assert curve[0].max() == 0.0 and curve[-1].max() == 0.0  # rest at both ends
    drive = sw._drive_vector(template)
    active = drive > 0
    peaks = curve.max(axis=0)
    assert (peaks[active] >= 0.9 * drive[active]).all()
    assert (peaks[active] <= 1.1 * drive[active]).all()
    assert (peaks[~active] == 0).all()
    again = sw.activation_curve(template, 1.4, sw.SAMPLE_RATE_HZ, seed=9)
    assert np.array_equal(curve, again)
    other = sw.activation_curve(template, 1.4, sw.SAMPLE_RATE_HZ, seed=10)
    assert not np.array_equal(curve, other)


# ---------------------------------------------------------------------------
# activation -> expression oracle
# ---------------------------------------------------------------------------


def test_oracle_rest_state_is_exactly_zero():
    oracle = sw.build_oracle(101)
    assert np.array_equal(oracle(np.zeros(22)), np.zeros(13))


def test_oracle_shapes_determinism_and_bounds():
    oracle = sw.build_oracle(101)
    batch = np.random.default_rng(0).uniform(0, 1, size=(40, 22))
    out = oracle(batch)
    assert out.shape == (40, 13)
    assert np.array_equal(out, sw.build_oracle(101)(batch))
    assert (np.abs(out) <= oracle.output_scale[None, :]).all()
    assert not np.array_equal(out, sw.build_oracle(102)(batch))


def test_oracle_respects_its_lipschitz_bound():
    oracle = sw.build_oracle(101)
    bound = oracle.lipschitz_bound()
    rng = np.random.default_rng(3)
    for _ in range(50):
        a = rng.uniform(0, 1, 22)
        b = rng.uniform(0, 1, 22)
        lhs = np.linalg.norm(oracle(a) - oracle(b))
        assert lhs <= bound * np.linalg.norm(a - b) + 1e-12


def test_oracle_tasks_are_expressive_and_distinct():
    oracle = sw.build_oracle(101)
    peaks = np.stack([oracle(sw._drive_vector(t)) for t in sw.task_templates()])
    per_task_max = np.abs(peaks).max(axis=1)
    assert per_task_max.min() > 0.3, "weakest task should still move the face visibly"
    dists = [
        np.linalg.norm(peaks[i] - peaks[j])
        for i in range(len(peaks))
        for j in range(i + 1, len(peaks))
    ]
    assert min(dists) > 0.2, "all tasks should produce distinguishable expressions"


# ---------------------------------------------------------------------------
# raw EMG synthesis
# ---------------------------------------------------------------------------


def test_carrier_frequencies_span_the_semg_band():
    freqs = sw.carrier_frequencies()
    assert freqs.shape == (22,)
    assert freqs[0] == 70.0 and freqs[-1] == 196.0
    assert (np.diff(freqs) > 0).all()
    assert freqs[-1] < sw.SAMPLE_RATE_HZ / 2


def test_rectified_plateau_mean_matches_two_over_pi():
    # constant activation -> rectified mean of the carrier = (2/pi) * g * A
    n = int(4.0 * sw.SAMPLE_RATE_HZ)
    activation = np.full((n, 22), 0.8)
    gains = np.ones(22)
    raw = sw.synthesize_raw_emg(activation, sw.SAMPLE_RATE_HZ, gains, seed=5)
    measured = np.abs(raw).mean(axis=0)
    expected = (2.0 / np.pi) * 0.8
    assert np.abs(measured - expected).max() < 0.01 * expected


def test_envelope_recovers_activation_up_to_gain():
    spec = sw.world_tiny()
    oracle = sw.build_oracle(spec.seed)
    identity = sw.make_identity(0, spec.seed, 8)
    gains = sw.channel_gains(7)
    snippet = sw.synthesize_snippet(spec, oracle, identity, gains, "smile_open", 0)
    active = snippet.activation_frames.max(axis=0) > 0.05
    assert active.any()
    for ch in np.flatnonzero(active):
        corr = np.corrcoef(snippet.activation_frames[:, ch], snippet.envelope[:, ch])[0, 1]
        assert corr > 0.99


def test_raw_emg_validation():
    with pytest.raises(ValueError):
        sw.synthesize_raw_emg(np.zeros((10, 5)), sw.SAMPLE_RATE_HZ, np.ones(22), seed=0)


# ---------------------------------------------------------------------------
# identities, poses, frames
# ---------------------------------------------------------------------------


def test_identity_is_deterministic_and_in_range():
    a = sw.make_identity(2, 101, 8)
    b = sw.make_identity(2, 101, 8)
    assert a.participant == "p03"
    assert torch.equal(a.shape_coeffs, b.shape_coeffs)
    assert a.shape_coeffs.abs().max().item() <= 1.2
    assert (a.skin_rgb >= 0.35).all() and (a.skin_rgb <= 0.98).all()
    c = sw.make_identity(3, 101, 8)
    assert not torch.equal(a.shape_coeffs, c.shape_coeffs)


def test_pose_trajectory_stays_inside_the_world_envelope():
    pose = sw.pose_trajectory(120, sw.FRAME_RATE_HZ, seed=4)
    assert pose.shape == (120, 6)
    assert pose[:, :3].abs().max().item() <= 0.12
    assert pose[:, 3:].abs().max().item() <= 0.15
    assert torch.equal(pose, sw.pose_trajectory(120, sw.FRAME_RATE_HZ, seed=4))


def test_frame_pair_identical_outside_discs_and_bounded(toy_model, layout):
    identity = sw.make_identity(0, 101, toy_model.n_shape)
    params = draw_params(11)
    pair = sw.render_frame_pair(toy_model, identity, params, layout, 64)
    assert pair.normal.shape == (64, 64, 3)
    assert pair.normal.min() >= 0.0 and pair.normal.max() <= 1.0
    assert pair.sensor.min() >= 0.0 and pair.sensor.max() <= 1.0
    outside = pair.occlusion == 0.0
    assert outside.any() and (~outside).any()
    assert np.array_equal(pair.normal[outside], pair.sensor[outside])
    assert not np.array_equal(pair.normal, pair.sensor)


def test_discs_substantially_occlude_the_face(toy_model, layout):
    identity = sw.make_identity(1, 101, toy_model.n_shape)
    params = draw_params(13)
    pair = sw.render_frame_pair(toy_model, identity, params, layout, 64)
    with torch.no_grad():
        coverage = render_geometry(toy_model, params, 64).coverage.numpy()
    occluded_face = ((pair.occlusion > 0) & coverage).sum() / coverage.sum()
    assert 0.15 <= occluded_face <= 0.60


# ---------------------------------------------------------------------------
# dataset writing and loading
# ---------------------------------------------------------------------------


def test_tiny_dataset_layout_and_fingerprint(tiny_dataset):
    root, fingerprint = tiny_dataset
    assert fingerprint["format"] == sw.DATASET_FORMAT
    index = sw.load_dataset_index(root)
    assert index.participants() == ["p01", "p02"]
    assert len(index.sessions) == 4  # 2 participants x 1 task x 2 repetitions
    assert index.total_frames() == 4 * sw.world_tiny().frames_per_snippet()
    for ref in index.sessions:
        assert os.path.isfile(os.path.join(ref.directory, "emg_raw.csv"))
        assert os.path.isfile(os.path.join(ref.directory, "emg_envelope.csv"))
        for domain in sw.DOMAINS:
            for k in (0, ref.n_frames - 1):
                assert os.path.isfile(ref.frame_path(domain, k))
        records = sw.read_session_params(ref)
        assert len(records) == ref.n_frames
    for participant in index.participants():
        assert os.path.isfile(os.path.join(root, participant, "normalization.json"))


def test_stored_params_rerender_to_the_exact_stored_pixels(toy_model, layout, tiny_dataset):
    # world consistency: every frame on disk is a pure function of its
    # recorded parameters
    root, _ = tiny_dataset
    index = sw.load_dataset_index(root)
    ref = index.sessions[1]
    records = sw.read_session_params(ref)
    identity = sw.make_identity(
        index.participants().index(ref.participant), index.fingerprint["seed"], toy_model.n_shape
    )
    k = ref.n_frames // 2
    params = sw.params_from_record(records[k])
    pair = sw.render_frame_pair(toy_model, identity, params, layout, index.resolution)
    for domain, rendered in ((sw.NORMAL_DOMAIN, pair.normal), (sw.SENSOR_DOMAIN, pair.sensor)):
        stored = (sw.load_frame(index, sw.FrameRef(1, k), domain).numpy() * 255.0).round().astype(np.uint8)
        assert np.array_equal(stored, sw.image_to_png_bytes(rendered))


def test_dataset_generation_is_deterministic(toy_model, tmp_path, tiny_dataset):
    root, fingerprint = tiny_dataset
    other = tmp_path / "again"
    fingerprint2 = sw.generate_dataset(toy_model, sw.world_tiny(), str(other))
    assert fingerprint == fingerprint2
    index = sw.load_dataset_index(root)
    ref = index.sessions[0]
    rel = os.path.relpath(ref.frame_path(sw.SENSOR_DOMAIN, 3), root)
    with open(os.path.join(root, rel), "rb") as fh_a, open(other / rel, "rb") as fh_b:
        assert fh_a.read() == fh_b.read()
    with open(os.path.join(root, "fingerprint.json"), "rb") as fh_a, open(
        other / "fingerprint.json", "rb"
    ) as fh_b:
        assert fh_a.read() == fh_b.read()


def test_envelope_csv_matches_pipeline_recomputation(tiny_dataset):
    root, _ = tiny_dataset
    index = sw.load_dataset_index(root)
    ref = index.sessions[0]
    raw = emg.read_raw_csv(os.path.join(ref.directory, "emg_raw.csv"))
    env = emg.read_envelope_csv(os.path.join(ref.directory, "emg_envelope.csv"))
    recomputed = emg.envelope_frames(raw.values, sw.SAMPLE_RATE_HZ, sw.FRAME_RATE_HZ)
    assert np.allclose(env.values, recomputed, atol=1e-9)


def test_unpaired_epoch_covers_each_clean_frame_once(tiny_dataset):
    root, _ = tiny_dataset
    index = sw.load_dataset_index(root)
    samples = sw.unpaired_epoch(index, seed=17)
    assert len(samples) == index.total_frames()
    seen = {(s.normal.session_index, s.normal.frame) for s in samples}
    assert len(seen) == len(samples)
    for s in samples:
        n_sess = index.sessions[s.normal.session_index]
        s_sess = index.sessions[s.sensor.session_index]
        assert n_sess.participant == s_sess.participant
        assert s.normal.session_index != s.sensor.session_index
        assert 0 <= s.sensor.frame < s_sess.n_frames
    assert samples == sw.unpaired_epoch(index, seed=17)
    assert samples != sw.unpaired_epoch(index, seed=18)


def test_loaded_frames_are_float_tensors(tiny_dataset):
    root, _ = tiny_dataset
    index = sw.load_dataset_index(root)
    img = sw.load_frame(index, sw.FrameRef(0, 0), sw.NORMAL_DOMAIN)
    assert img.shape == (64, 64, 3)
    assert img.dtype == torch.float32
    assert img.min().item() >= 0.0 and img.max().item() <= 1.0


def test_load_dataset_index_rejects_unknown_format(tmp_path):
    with open(tmp_path / "fingerprint.json", "w", encoding="utf-8") as fh:
        json.dump({"format": "something-else"}, fh)
    with pytest.raises(ValueError):
        sw.load_dataset_index(str(tmp_path))


# ---------------------------------------------------------------------------
# mapping-phase streaming
# ---------------------------------------------------------------------------


def test_stream_mapping_dataset_shapes_and_normalization():
    data = sw.stream_mapping_dataset(sw.world_tiny())
    n_expected = 4 * sw.world_tiny().frames_per_snippet()
    assert data.emg_frames.shape == (n_expected, 22)
    assert data.triplets.shape == (n_expected, 13)
    assert data.snippet_ids.shape == (n_expected,)
    assert len(data.snippet_labels) == 4
    assert len(set(data.snippet_labels)) == 4
    assert data.emg_frames.min() >= 0.0
    assert data.emg_frames.max() <= 1.0 + 1e-12
    # per-participant normalization: some channel of each participant hits 1
    for participant in ("p01", "p02"):
        sids = [i for i, lab in enumerate(data.snippet_labels) if lab.startswith(participant)]
        rows = np.isin(data.snippet_ids, sids)
        assert data.emg_frames[rows].max() == pytest.approx(1.0, abs=1e-12)


def test_stream_mapping_dataset_is_deterministic():
    a = sw.stream_mapping_dataset(sw.world_tiny())
    b = sw.stream_mapping_dataset(sw.world_tiny())
    assert np.array_equal(a.emg_frames, b.emg_frames)
    assert np.array_equal(a.triplets, b.triplets)


def test_five_fold_split_is_a_partition():
    folds = sw.five_fold_snippets(51, seed=9)
    assert len(folds) == 5
    joined = np.concatenate(folds)
    assert sorted(joined.tolist()) == list(range(51))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    again = sw.five_fold_snippets(51, seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(folds, again))
    with pytest.raises(ValueError):
        sw.five_fold_snippets(3, seed=0)
