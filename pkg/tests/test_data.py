import numpy as np
import pytest
from scipy.stats import multivariate_normal

from cardset.data import (
    DataError, Dataset, GaussianSpec, generate_gaussian, load_csv, split, true_posterior,
)


def test_tiny_sigma_nearest_mean_is_exact():
    spec = GaussianSpec(sigma=1e-8, seed=1)
    d = generate_gaussian(spec, 500)
    mu = spec.mean_matrix()
    nearest = np.argmin(((d.features[:, None, :] - mu[None]) ** 2).sum(-1), axis=1)
    assert np.mean(nearest == d.labels) == 1.0


def test_same_seed_same_data():
    spec = GaussianSpec(seed=3)
    a, b = generate_gaussian(spec, 100, 7), generate_gaussian(spec, 100, 7)
    assert a.features.tobytes() == b.features.tobytes() and np.array_equal(a.labels, b.labels)
    c = generate_gaussian(spec, 100, 8)
    assert not np.array_equal(a.features, c.features)


def test_class_frequencies_concentrate():
    m = 100_000
    d = generate_gaussian(GaussianSpec(dim=2), m)
    counts = np.bincount(d.labels, minlength=10)
    sd = np.sqrt(m * 0.1 * 0.9)
    assert np.all(np.abs(counts - m * 0.1) <= 3 * sd)


def test_means_on_sphere():
    mu = GaussianSpec().mean_matrix()
    assert mu.shape == (10, 100)
    assert np.allclose(np.linalg.norm(mu, axis=1), 2.0)


def test_concentrated_prior():
    p = (1.0,) + (0.0,) * 9
    d = generate_gaussian(GaussianSpec(priors=p, dim=3), 300)
    assert np.all(d.labels == 0)
    post = true_posterior(GaussianSpec(priors=p, dim=3), d.features)
    assert np.allclose(post[:, 0], 1.0)


def test_posterior_at_mean_and_midpoint():
    means = np.zeros((3, 4))
    means[0, 0], means[1, 1], means[2, 2] = 10.0, 10.0, -60.0
    spec = GaussianSpec(n_classes=3, dim=4, means=tuple(map(tuple, means)))
    assert true_posterior(spec, means[0])[0] == pytest.approx(1.0)
    mid = 0.5 * (means[0] + means[1])
    assert np.allclose(true_posterior(spec, mid), [0.5, 0.5, 0.0], atol=1e-12)


def test_posterior_matches_direct_density_ratio():
    spec = GaussianSpec(n_classes=4, dim=3, sigma=1.3, priors=(0.1, 0.2, 0.3, 0.4), seed=2)
    rng = np.random.default_rng(0)
    mu = spec.mean_matrix()
    for x in rng.normal(size=(20, 3)):
        dens = np.array([spec.priors[j] * multivariate_normal(mu[j], 1.3 ** 2 * np.eye(3)).pdf(x)
                         for j in range(4)])
        post = true_posterior(spec, x)
        assert abs(post.sum() - 1) < 1e-9
        assert np.allclose(post, dens / dens.sum(), rtol=1e-9, atol=1e-14)


def test_posterior_permutation_equivariant():
    spec = GaussianSpec(n_classes=5, dim=6, priors=(0.1, 0.3, 0.2, 0.25, 0.15), seed=4)
    perm = np.array([3, 0, 4, 1, 2])
    mu = spec.mean_matrix()
    permuted = GaussianSpec(n_classes=5, dim=6, priors=tuple(np.array(spec.priors)[perm]),
                            means=tuple(map(tuple, mu[perm])))
    X = np.random.default_rng(1).normal(size=(30, 6))
    assert np.allclose(true_posterior(permuted, X), true_posterior(spec, X)[:, perm], atol=1e-14)


def test_csv_round_trip(tmp_path):
    d = generate_gaussian(GaussianSpec(dim=5), 50)
    d.to_csv(tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv", 10)
    assert np.allclose(back.features, d.features, rtol=1e-12, atol=0)
    assert np.array_equal(back.labels, d.labels)


def test_load_fixture(tmp_path):
    (tmp_path / "f.csv").write_text("f0,f1,label\n0.5,-1,0\n2,3.25,2\n1e-3,0,1\n")
    d = load_csv(tmp_path / "f.csv")
    assert d.features.tolist() == [[0.5, -1.0], [2.0, 3.25], [0.001, 0.0]]
    assert d.labels.tolist() == [0, 2, 1] and d.n_classes == 3


@pytest.mark.parametrize("body,line", [
    ("f0,f1,label\n0.5,1\n", 2),
    ("f0,f1,label\n0.5,1,0\nx,1,0\n", 3),
    ("f0,f1,label\n0.5,1,0\n0.5,1,9\n", 3),
    ("f0,f1,label\nnan,1,0\n", 2),
])
def test_load_errors_name_line(tmp_path, body, line):
    (tmp_path / "bad.csv").write_text(body)
    with pytest.raises(DataError, match=f":{line}:"):
        load_csv(tmp_path / "bad.csv", 3)


def test_bad_header(tmp_path):
    (tmp_path / "h.csv").write_text("a,b,label\n1,2,0\n")
    with pytest.raises(DataError):
        load_csv(tmp_path / "h.csv")


def test_split_sizes_and_determinism():
    d = generate_gaussian(GaussianSpec(dim=2), 1000)
    s = split(d, (0.8, 0.1, 0.1), seed=4)
    assert [len(s.subset(t)) for t in ("train", "calibration", "test")] == [800, 100, 100]
    again = split(d, (0.8, 0.1, 0.1), seed=4)
    assert np.array_equal(s.split, again.split)
    other = split(d, (0.8, 0.1, 0.1), seed=5)
    assert not np.array_equal(s.split, other.split)
    with pytest.raises(DataError):
        split(d, (0.5, 0.6))


def test_spec_json_round_trip(tmp_path):
    spec = GaussianSpec(n_classes=3, dim=2, priors=(0.2, 0.3, 0.5), seed=9)
    spec.to_json(tmp_path / "s.json")
    assert GaussianSpec.from_json(tmp_path / "s.json") == spec


def test_invalid_spec():
    with pytest.raises(DataError):
        GaussianSpec(sigma=0.0)
    with pytest.raises(DataError):
        GaussianSpec(n_classes=3, priors=(0.5, 0.5, 0.5))
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 2)), np.array([0, 5]), 3)
