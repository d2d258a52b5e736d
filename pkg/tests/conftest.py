import numpy as np
import pytest

from ode2vae.autodiff import set_precision
from ode2vae.bnn import BNNPosterior, WeightSample, init_posterior, sample_weights
from ode2vae.nn import MLPSpec


@pytest.fixture(autouse=True)
def _float64():
    set_precision("float64")
    yield
    set_precision("float64")


def linear_sample(A, B, bias=None) -> WeightSample:
    """Weight sample of a single linear layer computing ``f(s, v) = A s + B v (+ bias)``."""
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    d_out, d = A.shape[0], A.shape[1]
    spec = MLPSpec((d + B.shape[1], d_out))
    W = np.concatenate([A.T, B.T], axis=0)
    b = np.zeros(d_out) if bias is None else np.asarray(bias, dtype=np.float64)
    m = np.concatenate([W.reshape(-1), b])
    return sample_weights(BNNPosterior(m=m, log_s=-np.inf, spec=spec, deterministic=True), 0)


def random_sample(d, hidden=(16,), seed=0, n=None, mode="second", log_s=-2.0, scale=1.0) -> WeightSample:
    out = d if mode == "second" else 2 * d
    spec = MLPSpec((2 * d, *hidden, out))
    post = init_posterior(spec, seed, log_s=log_s)
    post = BNNPosterior(m=post.m.data * scale, log_s=log_s, spec=spec)
    return sample_weights(post, seed + 1, n=n)
