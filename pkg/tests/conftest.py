import numpy as np
import pytest

from berbench.data import Dataset, GaussianMixtureSpec, generate_gaussian_mixture


@pytest.fixture(scope="session")
def gauss2d_small():
    """Two 2-d Gaussians 2 sigma apart (oracle BER = Phi(-1)), modest n."""
    spec = GaussianMixtureSpec(
        num_classes=2,
        dim=2,
        means=np.array([[0.0, 0.0], [2.0, 0.0]]),
        std=1.0,
        priors=np.array([0.5, 0.5]),
        n_train=2000,
        n_eval=1000,
    )
    train, eval_, oracle = generate_gaussian_mixture(spec, seed=11)
    return train, eval_, oracle


@pytest.fixture()
def separable_clusters():
    """Three tight clusters far apart, class = cluster."""
    rng = np.random.default_rng(3)
    centers = np.array([[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]])
    labels = np.repeat(np.arange(3), 60)
    feats = centers[labels] + rng.normal(scale=0.5, size=(180, 2))
    return Dataset(feats.astype(np.float32), labels, 3, "eval")


def random_dataset(rng, n, d, c, split="eval"):
    feats = rng.normal(size=(n, d)).astype(np.float32)
    labels = rng.integers(0, c, size=n)
    return Dataset(feats, labels, c, split)
