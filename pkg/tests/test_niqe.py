import numpy as np
import pytest

from relight.niqe import NiqeModel, fit_niqe_model, niqe


def textured_image(rng, h=200, w=200):
    """Smooth structure plus mild texture, a stand-in for a natural photo."""
    yy, xx = np.mgrid[0:h, 0:w]
    base = 0.5 + 0.2 * np.sin(xx / 17.0) * np.cos(yy / 23.0)
    detail = rng.normal(0, 0.03, (h, w))
    from scipy import ndimage

    detail = ndimage.gaussian_filter(detail, 1.2)
    img = np.clip(base + detail + 0.1 * rng.random((h, w)), 0, 1)
    return np.repeat(img[:, :, None], 3, axis=2)


@pytest.fixture(scope="module")
def corpus():
    rng = np.random.default_rng(99)
    return [textured_image(rng) for _ in range(50)]


@pytest.fixture(scope="module")
def model(corpus):
    return fit_niqe_model(corpus, min_images=50)


class TestFit:
    def test_determinism(self, corpus):
        a = fit_niqe_model(corpus, min_images=50)
        b = fit_niqe_model(corpus, min_images=50)
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.cov, b.cov)
        assert a.corpus_hash == b.corpus_hash

    def test_covariance_psd(self, model):
        eig = np.linalg.eigvalsh(model.cov)
        assert eig.min() >= 0

    def test_corpus_too_small(self, corpus):
        with pytest.raises(ValueError):
            fit_niqe_model(corpus[:10], min_images=50)

    def test_serialization_round_trip(self, model, tmp_path):
        model.save(tmp_path / "m.npz")
        loaded = NiqeModel.load(tmp_path / "m.npz")
        np.testing.assert_array_equal(loaded.mean, model.mean)
        np.testing.assert_array_equal(loaded.cov, model.cov)
        assert loaded.patch_size == model.patch_size
        assert loaded.corpus_hash == model.corpus_hash


class TestScore:
    def test_noise_raises_score(self, model):
        rng = np.random.default_rng(7)
        wins = 0
        for _ in range(10):
            img = textured_image(rng)
            noisy = np.clip(img + rng.normal(0, 0.1, img.shape), 0, 1)
            if niqe(noisy, model) > niqe(img, model):
                wins += 1
        assert wins >= 9

    def test_blur_raises_score_on_fitting_corpus(self, model, corpus):
        from relight.imaging import gaussian_blur

        sample = corpus[:6]
        clean = np.mean([niqe(im, model) for im in sample])
        blurred = np.mean([niqe(gaussian_blur(im, 3.0), model) for im in sample])
        assert blurred > clean

    def test_flip_invariance(self, model):
        rng = np.random.default_rng(3)
        img = textured_image(rng, 210, 250)
        assert abs(niqe(img, model) - niqe(img[:, ::-1, :], model)) < 1e-6

    def test_too_small_image(self, model):
        with pytest.raises(ValueError):
            niqe(np.full((100, 90, 3), 0.5), model)
