import numpy as np
import pytest

import ecaformer


def test_model_is_identity_at_init():
    model = ecaformer.Model(base_channels=4, seed=1)
    img = np.random.default_rng(0).uniform(0, 1, (3, 16, 12)).astype(np.float32)
    out = model.enhance(img)
    assert out.shape == img.shape
    assert np.array_equal(out, img)
    assert model.parameter_count == 22755
    assert model.config["base_channels"] == "4"


def test_metrics():
    a = np.full((3, 16, 16), 0.6, dtype=np.float32)
    b = np.full((3, 16, 16), 0.5, dtype=np.float32)
    assert ecaformer.psnr(a, b) == pytest.approx(20.0, abs=1e-5)
    assert ecaformer.psnr(a, a) == 99.0
    assert ecaformer.ssim(a, a) == 1.0


def test_dataset_and_checkpoint_round_trip(tmp_path):
    pairs = ecaformer.synth_dataset(str(tmp_path / "data"), pairs=2, size=16, seed=3)
    assert len(pairs) == 2
    low = ecaformer.load_image(pairs[0][0])
    ref = ecaformer.load_image(pairs[0][1])
    assert low.shape == ref.shape == (3, 16, 16)
    assert ecaformer.psnr(low, ref) < 99.0

    model = ecaformer.Model(base_channels=4)
    path = str(tmp_path / "m.ecak")
    model.save(path)
    loaded = ecaformer.Model.load(path)
    assert np.array_equal(loaded.enhance(low), model.enhance(low))

    out = tmp_path / "x.ppm"
    ecaformer.save_image(low, str(out))
    assert np.array_equal(ecaformer.load_image(str(out)), low)


def test_errors_map_to_python_exceptions(tmp_path):
    with pytest.raises(ValueError):
        ecaformer.Model(base_channels=6, heads=[4, 4, 4])
    with pytest.raises(OSError):
        ecaformer.load_image(str(tmp_path / "missing.ppm"))
    with pytest.raises(ValueError):
        ecaformer.Model(base_channels=4).enhance(np.zeros((3, 4, 4), dtype=np.float32))


def test_cli_in_process(tmp_path):
    code, out, _ = ecaformer.run_cli(["synth", "--n", "1", "--size", "16", "--out", str(tmp_path / "d")])
    assert code == 0
    assert "manifest.tsv" in out
    code, _, _ = ecaformer.run_cli(["synth"])
    assert code == 2


def test_quick_criterion():
    (result,) = ecaformer.verify([2])
    assert result["passed"], result["checks"]
