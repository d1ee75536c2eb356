import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradchecks import MODEL_TOL, OP_TOL, TINY, cell_error, tiny_model_error
from wellcast import numeric as nm
from wellcast.augment import AugmentConfig, SplitSpec, expand_dataset
from wellcast.checkpoint import checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint
from wellcast.errors import BadCheckpoint, ConfigError, ConfigMismatch, EmptyDataset, ShapeMismatch
from wellcast.experiments import mean_frame_mse, preprocessed, raw_records, split_conditioning
from wellcast.predictor import (ModelConfig, PredictorModel, _cell_shapes, forward_sequence, patchify,
                                repeat_last_baseline, st_cell_forward, unpatchify)
from wellcast.simulate import CorpusConfig
from wellcast.training import TrainConfig, predict, predict_with_model, read_log, train
from wellcast.video import ColorSpace, DatasetManifest, Split, Video, WellRecord

SMALL = ModelConfig(num_layers=2, hidden_channels=4, kernel_size=3, patch_size=4, input_frames=4, total_frames=7)


def _hsv_video(rng, frames=7, size=16):
    return Video(rng.uniform(size=(frames, size, size, 3)), ColorSpace.HSV)


# -- patchify -------------------------------------------------------------------------


def test_patchify_default_geometry():
    x = np.zeros((32, 32, 3))
    assert patchify(x, 4).shape == (8, 8, 48)


@given(st.sampled_from([1, 2, 4]), st.integers(1, 3), st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_patchify_roundtrip_and_sums(p, blocks, seed):
    x = np.random.default_rng(seed).uniform(size=(2, p * blocks, p * (blocks + 1), 3))
    y = patchify(x, p)
    assert unpatchify(y, p).tobytes() == x.tobytes()
    assert y.sum() == pytest.approx(x.sum(), rel=1e-12)


def test_patch_size_one_is_identity():
    x = np.random.default_rng(0).uniform(size=(5, 6, 3))
    np.testing.assert_array_equal(patchify(x, 1), x)


def test_patchify_rejects_indivisible():
    with pytest.raises(ShapeMismatch):
        patchify(np.zeros((10, 12, 3)), 4)


# -- cell ----------------------------------------------------------------------------


def _zero_params(cin, nh, k):
    return {n: nm.Tensor(np.zeros(s)) for n, s in _cell_shapes(cin, nh, k)}


def test_zero_weights_halve_both_memories():
    rng = np.random.default_rng(0)
    x = nm.Tensor(rng.normal(size=(1, 4, 4, 3)))
    h, c, m = (nm.Tensor(rng.normal(size=(1, 4, 4, 5))) for _ in range(3))
    h_new, c_new, m_new = st_cell_forward(_zero_params(3, 5, 3), x, h, c, m)
    np.testing.assert_array_equal(c_new.data, 0.5 * c.data)
    np.testing.assert_array_equal(m_new.data, 0.5 * m.data)
    # o = 0.5 and the 1x1 fusion of [C, M] is zero
    np.testing.assert_array_equal(h_new.data, np.zeros_like(h.data))


@given(st.integers(1, 3), st.integers(1, 4), st.sampled_from([1, 3]), st.integers(1, 5))
@settings(max_examples=20, deadline=None)
def test_cell_output_shapes_match_state(cin, nh, k, side):
    rng = np.random.default_rng(cin * 100 + nh)
    params = {n: nm.Tensor(rng.normal(size=s)) for n, s in _cell_shapes(cin, nh, k)}
    x = nm.Tensor(rng.normal(size=(2, side, side, cin)))
    state = [nm.Tensor(rng.normal(size=(2, side, side, nh))) for _ in range(3)]
    for out in st_cell_forward(params, x, *state):
        assert out.shape == state[0].shape
        assert np.isfinite(out.data).all()


def test_cell_rejects_mismatched_state():
    params = _zero_params(2, 3, 3)
    x = nm.Tensor(np.zeros((1, 4, 4, 2)))
    good, bad = nm.Tensor(np.zeros((1, 4, 4, 3))), nm.Tensor(np.zeros((1, 4, 4, 2)))
    with pytest.raises(ShapeMismatch):
        st_cell_forward(params, x, good, bad, good)


def test_cell_gradients_match_finite_differences_over_100_seeds():
    worst = max(cell_error(seed) for seed in range(100))
    assert worst < OP_TOL, worst


def test_tiny_model_gradients_match_finite_differences():
    worst = max(tiny_model_error(seed) for seed in range(100))
    assert worst < MODEL_TOL, worst


# -- model ---------------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(kernel_size=4)
    with pytest.raises(ConfigError):
        ModelConfig(input_frames=10, total_frames=10)


def test_default_config_predicts_ten_32x32_hsv_frames():
    model = PredictorModel(ModelConfig(), seed=0)
    video = _hsv_video(np.random.default_rng(0), frames=10, size=32)
    out = forward_sequence(model, video)
    assert len(out) == 10 and out.data.shape == (10, 32, 32, 3) and out.space is ColorSpace.HSV


def test_forward_is_deterministic_and_bounded():
    model = PredictorModel(SMALL, seed=3)
    video = _hsv_video(np.random.default_rng(1), frames=SMALL.input_frames)
    a, b = forward_sequence(model, video), forward_sequence(model, video)
    assert a.data.tobytes() == b.data.tobytes()
    assert (a.data > 0).all() and (a.data < 1).all()


def test_single_layer_memory_path_is_finite():
    cfg = ModelConfig(num_layers=1, hidden_channels=3, kernel_size=3, patch_size=2, input_frames=3, total_frames=6)
    out = forward_sequence(PredictorModel(cfg, seed=0), _hsv_video(np.random.default_rng(2), frames=3, size=8))
    assert len(out) == 3 and np.isfinite(out.data).all()


def test_inference_feeds_back_predictions():
    # changing a conditioning frame must change every later prediction
    model = PredictorModel(SMALL, seed=1)
    rng = np.random.default_rng(4)
    video = _hsv_video(rng, frames=SMALL.input_frames)
    data = video.data.copy()
    data[-1] = rng.uniform(size=data[-1].shape)
    a, b = forward_sequence(model, video), forward_sequence(model, video.with_data(data))
    for k in range(SMALL.output_frames):
        assert not np.array_equal(a.data[k], b.data[k])


def test_forward_rejects_wrong_frame_count():
    model = PredictorModel(SMALL, seed=0)
    with pytest.raises(ShapeMismatch):
        model.forward(np.zeros((1, 3, 4, 4, 48)), "infer")


def test_untrained_model_no_better_than_repeat_last():
    wells = preprocessed(raw_records(20, CorpusConfig(rng_seed=11)))
    cfg = ModelConfig(num_layers=1, hidden_channels=8, kernel_size=3)
    model = PredictorModel(cfg, seed=0)
    model_mse, base_mse = [], []
    for rec in wells:
        cond, gt = split_conditioning(rec.video, cfg.input_frames)
        model_mse.append(mean_frame_mse(gt, predict_with_model(model, cond)))
        base_mse.append(mean_frame_mse(gt, repeat_last_baseline(rec.video, cfg.input_frames, cfg.output_frames)))
    assert np.mean(model_mse) >= np.mean(base_mse)


# -- training and checkpoints --------------------------------------------------------------


def _manifest(rng, n_train=3, n_valid=2, cfg=SMALL):
    records = [WellRecord(f"w{i}", _hsv_video(rng, cfg.total_frames), Split.TRAIN if i < n_train else Split.VALID)
               for i in range(n_train + n_valid)]
    return DatasetManifest(records, seed=0)


def test_training_logs_and_checkpoints(tmp_path):
    ckpt, log = tmp_path / "m.wckp", tmp_path / "log.csv"
    model = PredictorModel(SMALL, seed=0)
    cfg = TrainConfig(iterations=6, batch_size=2, valid_every=3, checkpoint_every=4,
                      checkpoint_path=str(ckpt), log_path=str(log))
    result = train(model, _manifest(np.random.default_rng(0)), cfg)
    rows = read_log(log)
    assert [r.iteration for r in rows] == list(range(1, 7))
    assert [r.iteration for r in rows if r.valid_mse is not None] == [3, 6]
    assert load_checkpoint(ckpt).iteration == 6
    assert result.optimizer.step == 6
    assert log.read_text().splitlines()[0] == "iteration,train_mse,valid_mse"


def test_training_is_bit_deterministic(tmp_path):
    blobs = []
    for run in range(2):
        path = tmp_path / f"{run}.wckp"
        train(PredictorModel(SMALL, seed=5), _manifest(np.random.default_rng(1)),
              TrainConfig(iterations=4, batch_size=2, seed=9, checkpoint_path=str(path)))
        blobs.append(path.read_bytes())
    assert blobs[0] == blobs[1]


def test_empty_split_raises():
    manifest = _manifest(np.random.default_rng(0), n_train=2, n_valid=0)
    with pytest.raises(EmptyDataset):
        train(PredictorModel(SMALL), manifest, TrainConfig(iterations=1))


def test_checkpoint_roundtrip_is_bit_exact(tmp_path):
    model = PredictorModel(SMALL, seed=2)
    result = train(model, _manifest(np.random.default_rng(2)), TrainConfig(iterations=2, batch_size=2))
    path = tmp_path / "c.wckp"
    save_checkpoint(path, model, result.optimizer, 2)
    back = load_checkpoint(path)
    assert back.iteration == 2 and back.model.config == SMALL
    for name, t in model.params.items():
        assert back.model.params[name].data.tobytes() == t.data.tobytes()
    for a, b in zip(result.optimizer.first_moment + result.optimizer.second_moment,
                    back.optimizer.first_moment + back.optimizer.second_moment):
        assert a.tobytes() == b.tobytes()
    assert back.optimizer.step == result.optimizer.step
    assert checkpoint_bytes(back.model, back.optimizer, 2) == path.read_bytes()

    video = Video(np.random.default_rng(3).uniform(size=(SMALL.input_frames, 16, 16, 3)), ColorSpace.RGB)
    assert predict(path, video).data.tobytes() == predict_with_model(model, video).data.tobytes()


def test_checkpoint_starts_with_magic_and_version(tmp_path):
    blob = checkpoint_bytes(PredictorModel(SMALL), nm.AdamState(), 0)
    assert blob[:4] == b"WCKP" and int.from_bytes(blob[4:8], "little") == 1


@pytest.mark.parametrize("cut", [3, 10, 100, -1])
def test_truncated_checkpoint_is_rejected(tmp_path, cut):
    blob = checkpoint_bytes(PredictorModel(SMALL), nm.AdamState(), 0)
    path = tmp_path / "bad.wckp"
    path.write_bytes(blob[:cut])
    with pytest.raises(BadCheckpoint):
        load_checkpoint(path)


def test_corrupt_magic_and_trailing_bytes_are_rejected():
    blob = checkpoint_bytes(PredictorModel(SMALL), nm.AdamState(), 0)
    with pytest.raises(BadCheckpoint):
        parse_checkpoint(b"XXXX" + blob[4:])
    with pytest.raises(BadCheckpoint):
        parse_checkpoint(blob + b"\0")


def test_predict_rejects_mismatched_input():
    model = PredictorModel(SMALL)
    with pytest.raises(ConfigMismatch):
        predict_with_model(model, Video(np.zeros((SMALL.input_frames + 1, 16, 16, 3))))
    with pytest.raises(ConfigMismatch):
        predict_with_model(model, Video(np.zeros((SMALL.input_frames, 18, 18, 3))))


def test_predict_returns_rgb():
    out = predict_with_model(PredictorModel(SMALL), Video(np.full((SMALL.input_frames, 16, 16, 3), 0.5)))
    assert out.space is ColorSpace.RGB and len(out) == SMALL.output_frames


def test_repeat_last_baseline_holds_last_frame():
    video = _hsv_video(np.random.default_rng(0), frames=6, size=4)
    base = repeat_last_baseline(video, 4, 2)
    np.testing.assert_array_equal(base.data, np.stack([video.data[3]] * 2))


def test_smoothed_training_curve_does_not_rise_early():
    wells = preprocessed(raw_records(6, CorpusConfig(rng_seed=4)))
    manifest = expand_dataset(wells, AugmentConfig(seed=4), SplitSpec(0.8))
    model = PredictorModel(ModelConfig(num_layers=1, hidden_channels=4, kernel_size=3), seed=4)
    curve = train(model, manifest, TrainConfig(iterations=500, batch_size=4, learning_rate=1e-3,
                                               valid_every=500, seed=4)).train_curve
    blocks = curve.reshape(5, 100).mean(axis=1)
    assert (np.diff(blocks) <= 0).all(), blocks
