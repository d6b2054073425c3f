import numpy as np
import pytest
from scipy.spatial.distance import pdist
from scipy.stats import ortho_group, special_ortho_group

from nearisometry.procrustes import EuclideanMotion


def random_rotation(dim, rng, proper=True):
    seed = int(rng.integers(2**31))
    if dim == 1:
        return np.array([[1.0 if proper or rng.random() < 0.5 else -1.0]])
    gen = special_ortho_group if proper else ortho_group
    return gen.rvs(dim, random_state=seed)


def random_motion(dim, rng, proper=True, scale=1.0):
    return EuclideanMotion(random_rotation(dim, rng, proper), scale * rng.normal(size=dim))


def central_jacobian(f, X, h):
    X = np.atleast_2d(X)
    dim = X.shape[1]
    J = np.zeros((len(X), dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        step = h[:, None] * e if np.ndim(h) else h * e
        den = 2.0 * (h[:, None] if np.ndim(h) else h)
        J[:, :, j] = (f(X + step) - f(X - step)) / den
    return J


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def planted_instance(rng, n, E, dim=2):
    """P, Q = motion(P) relabeled and perturbed so every distance ratio is within 1 + E.

    Returns (P, Q, truth) with truth[i] the index in Q of P[i].
    """
    P = rng.uniform(-1.0, 1.0, size=(n, dim))
    A = random_motion(dim, rng, proper=bool(rng.random() < 0.5))
    perm = rng.permutation(n)
    base = A(P)[perm]
    Q = base
    if E > 0:
        noise = rng.normal(size=base.shape)
        scale = E * pdist(P).min()
        while True:
            Q = base + scale * noise
            ratio = pdist(Q[np.argsort(perm)]) / pdist(P)
            if np.max(np.abs(ratio - 1.0)) <= E:
                break
            scale *= 0.5
    truth = {int(perm[k]): k for k in range(n)}
    return P, Q, truth


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
