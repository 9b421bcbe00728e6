import numpy as np
import pytest

from graphood import tensor as T
from graphood.config import RunConfig
from graphood.errors import NumericalError, ShapeError
from graphood.graph import GraphDataset
from graphood.losses import total_loss
from graphood.model import PARAM_NAMES, ModelParams, adam_step, forward, init_model, logits
from graphood.oodgen import SbmConfig, generate_sbm
from graphood.pipeline import train

from fd_oracle import numeric_grad, rel_err


def small_graph(seed=0, n=10, d=3, C=3, expose=True):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < 0.35
    labels = rng.integers(0, C, size=n)
    roles = np.array(["train"] * (n - 5) + ["val"] * 2 + ["test_id", "expose_ood", "test_ood"])
    labels[roles == "expose_ood"] = -1
    labels[roles == "test_ood"] = -1
    masks = {k: roles == k for k in ("train", "val", "test_id", "test_ood", "expose_ood")}
    if not expose:
        masks["expose_ood"][:] = False
    return GraphDataset(num_classes=C, edges=np.stack([iu[keep], ju[keep]], 1), features=rng.normal(size=(n, d)),
                        labels=labels, **masks)


def test_init_is_seeded_and_bounded():
    a, b, c = init_model(16, 64, 4, 7), init_model(16, 64, 4, 7), init_model(16, 64, 4, 8)
    assert all(np.array_equal(a.arrays()[k], b.arrays()[k]) for k in PARAM_NAMES)
    assert not np.array_equal(a.W0, c.W0)
    assert np.abs(a.W0).max() <= 0.2738612787525831
    assert not a.b0.any() and not a.b1.any()
    with pytest.raises(ValueError):
        init_model(0, 4, 2, 0)


def test_zero_weights_give_zero_logits():
    g = small_graph()
    p = ModelParams(np.zeros((3, 4)), np.zeros(4), np.zeros((4, 3)), np.zeros(3))
    assert not logits(p, g).any()


def test_single_node_identity():
    z = np.zeros(1, dtype=bool)
    g = GraphDataset(num_classes=1, edges=np.zeros((0, 2)), features=np.array([[2.5]]), labels=np.array([0]),
                     train=z, val=z, test_id=z, test_ood=z, expose_ood=z)
    p = ModelParams(np.ones((1, 1)), np.zeros(1), np.ones((1, 1)), np.zeros(1))
    assert logits(p, g).tolist() == [[2.5]]


def test_permutation_equivariance():
    rng = np.random.default_rng(3)
    g = small_graph(3, n=8)
    perm = rng.permutation(8)
    inv = np.argsort(perm)
    masks = {k: v[perm] for k, v in g.masks.items()}
    h = GraphDataset(num_classes=g.num_classes, edges=inv[g.edges], features=g.features[perm],
                     labels=g.labels[perm], **masks)
    p = init_model(3, 5, 3, 0)
    p.b0[:] = rng.normal(size=5)
    assert np.abs(logits(p, h) - logits(p, g)[perm]).max() < 1e-12


def test_feature_mismatch():
    with pytest.raises(ShapeError):
        forward(init_model(4, 5, 3, 0), small_graph())


def test_adam_scalar_step():
    p = ModelParams(np.array([[1.0]]), np.zeros(1), np.zeros((1, 1)), np.zeros(1))
    grads = {"W0": np.array([[2.0]]), "b0": np.zeros(1), "W1": np.zeros((1, 1)), "b1": np.zeros(1)}
    q = adam_step(p, grads, lr=0.1)
    # decay 0.1*5e-4*1 then a unit Adam step of size lr
    assert q.W0[0, 0] == pytest.approx(0.89995, abs=1e-9)
    assert p.W0[0, 0] == 1.0 and q.step == 1


def test_adam_zero_gradient_only_decays_weights():
    p = init_model(3, 4, 2, 1)
    p.b0[:] = 1.0
    grads = {k: np.zeros_like(v) for k, v in p.arrays().items()}
    q = adam_step(p, grads, lr=0.01)
    assert np.allclose(q.W0, p.W0 * (1 - 0.01 * 5e-4), rtol=0, atol=1e-15)
    assert np.array_equal(q.b0, p.b0)


def test_adam_rejects_non_finite():
    p = init_model(3, 4, 2, 1)
    grads = {k: np.zeros_like(v) for k, v in p.arrays().items()}
    grads["W1"] = grads["W1"] + np.nan
    with pytest.raises(NumericalError, match="W1"):
        adam_step(p, grads, lr=0.01)


def test_adam_trajectories_repeat():
    g = small_graph()
    cfg = RunConfig(method="gnnsafe", epochs=15, hidden=6, seed=2)
    a, b = train(g, cfg), train(g, cfg)
    assert all(np.array_equal(a.params.arrays()[k], b.params.arrays()[k]) for k in PARAM_NAMES)


def _param_grads(p, g, cfg, epoch):
    tape = T.Tape()
    leaves = p.leaves(tape)
    tape.backward(total_loss(forward(p, g, leaves), g, cfg, epoch).tensor)
    return {k: leaves[k].grad.reshape(p.arrays()[k].shape) for k in PARAM_NAMES}


def _perturbed(p, k, arr):
    q = p.copy()
    setattr(q, k, arr)
    return q


@pytest.mark.parametrize("method", ["gnnsafe", "gnnsafe-pp", "energy-ft", "logitnorm"])
def test_training_loss_gradient(method):
    g = small_graph(1)
    p = init_model(3, 4, 3, 5)
    p.b0[:] = 0.1
    cfg = RunConfig(method=method, hidden=4, tau=0.5)
    grads = _param_grads(p, g, cfg, epoch=0)
    for k in PARAM_NAMES:
        f = lambda a: total_loss(forward(_perturbed(p, k, a), g), g, cfg, 0).total
        assert rel_err(grads[k], numeric_grad(f, p.arrays()[k])) < 1e-4, k


def test_training_loss_gradient_with_variance_terms():
    """The detached scales are frozen at the base point for the numeric route."""
    g = small_graph(2)
    p = init_model(3, 4, 3, 6)
    cfg = RunConfig(method="nodesafe-pp", hidden=4, ub_start_epoch=0, lambda1=0.3)
    grads = _param_grads(p, g, cfg, epoch=0)

    ids, ood = np.flatnonzero(g.train), np.flatnonzero(g.expose_ood)
    both = np.union1d(ids, ood)
    z0 = logits(p, g)
    m_norm = np.linalg.norm(z0[both], axis=1).mean()
    m_sums = [abs(z0[s].sum(axis=1).mean()) for s in (ids, ood)]

    def frozen(q):
        parts = total_loss(forward(q, g), g, cfg.replace(lambda2=0.0), 0)
        z = logits(q, g)
        N = np.linalg.norm(z[both], axis=1)
        bound = np.mean((N - N.mean()) ** 2) / m_norm
        uni = sum(np.var(z[s].sum(axis=1)) / m for s, m in zip((ids, ood), m_sums))
        return parts.total + cfg.lambda2 * (cfg.lambda1 * uni + (1 - cfg.lambda1) * bound)

    for k in PARAM_NAMES:
        f = lambda a: frozen(_perturbed(p, k, a))
        assert rel_err(grads[k], numeric_grad(f, p.arrays()[k])) < 1e-4, k


def test_two_block_sbm_fits_training_set():
    hits = 0
    for seed in range(10):
        g = generate_sbm(SbmConfig(num_blocks=2, nodes_per_block=50, p_in=0.2, p_out=0.01,
                                   class_mean_scale=3.0, feature_noise=0.5, seed=seed))
        state = train(g, RunConfig(method="gnnsafe", seed=seed, epochs=200))
        hits += max(row["train_acc"] for row in state.log) == 1.0
    assert hits >= 9
