import math

import numpy as np
import pytest

from graphood.errors import ConfigError
from graphood.graph import load_dataset, save_dataset
from graphood.oodgen import (
    OodSpec,
    SbmConfig,
    feature_interpolation,
    generate_sbm,
    label_leave_out,
    make_ood,
    structure_manipulation,
)

BASE = SbmConfig(num_blocks=3, nodes_per_block=40, p_in=0.1, p_out=0.01, seed=1)


def test_two_triangles():
    g = generate_sbm(SbmConfig(num_blocks=2, nodes_per_block=3, p_in=1.0, p_out=0.0))
    assert sorted(map(tuple, g.edges.tolist())) == [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]


def test_edge_count_matches_binomial():
    cfg = SbmConfig(num_blocks=4, nodes_per_block=50, p_in=0.05, p_out=0.005)
    b, C = cfg.nodes_per_block, cfg.num_blocks
    intra = C * b * (b - 1) // 2
    inter = (C * b) * (C * b - 1) // 2 - intra
    mean = intra * cfg.p_in + inter * cfg.p_out
    sd = math.sqrt(intra * cfg.p_in * (1 - cfg.p_in) + inter * cfg.p_out * (1 - cfg.p_out))
    counts = np.array([len(generate_sbm(SbmConfig(**{**cfg.__dict__, "seed": s})).edges) for s in range(20)])
    assert np.all(np.abs(counts - mean) < 3 * sd)
    assert abs(counts.mean() - mean) < 3 * sd / math.sqrt(20)


def test_splits_are_one_one_eight():
    g = generate_sbm(SbmConfig(num_blocks=2, nodes_per_block=50))
    for c in range(2):
        members = g.labels == c
        assert (g.train & members).sum() == 5 and (g.val & members).sum() == 5 and (g.test_id & members).sum() == 40


def test_generators_are_deterministic():
    assert generate_sbm(BASE).equals(generate_sbm(BASE))
    assert not generate_sbm(BASE).equals(generate_sbm(SbmConfig(**{**BASE.__dict__, "seed": 2})))
    g = generate_sbm(BASE)
    for spec in [OodSpec("structure", seed=3), OodSpec("feature", seed=3), OodSpec("label-leave-out", held_out_classes=(1,), seed=3)]:
        assert make_ood(g, spec).equals(make_ood(g, spec))


def test_bad_configs():
    with pytest.raises(ConfigError):
        SbmConfig(p_in=0.1, p_out=0.2)
    with pytest.raises(ConfigError):
        SbmConfig(num_blocks=0)
    with pytest.raises(ConfigError):
        OodSpec("rewire")
    g = generate_sbm(BASE)
    for frac in (0.0, 1.0, -0.1):
        with pytest.raises(ConfigError):
            structure_manipulation(g, frac)


def test_structure_single_isolated_node():
    g = generate_sbm(BASE)
    h = structure_manipulation(g, 1 / g.num_nodes, avg_degree=0.0, seed=0)
    assert h.num_nodes == g.num_nodes + 1
    assert h.degrees[-1] == 0 and h.test_ood[-1] and h.labels[-1] == -1


def test_structure_manipulation_contract():
    g = generate_sbm(BASE)
    h = structure_manipulation(g, 0.2, seed=5, expose_fraction=0.5)
    m = math.ceil(0.2 * g.num_nodes)
    n = g.num_nodes
    assert h.num_nodes == n + m
    assert np.array_equal(h.adjacency.to_dense()[:n, :n], g.adjacency.to_dense())
    new = np.arange(n, n + m)
    assert np.all(h.labels[new] == -1)
    assert (h.test_ood | h.expose_ood)[new].all() and not (h.test_ood & h.expose_ood).any()
    assert h.expose_ood.sum() == round(0.5 * m)
    # every copied feature row exists among the originals
    originals = {row.tobytes() for row in g.features}
    assert all(h.features[v].tobytes() in originals for v in new)


def test_structure_degree_matches_target():
    g = generate_sbm(SbmConfig(num_blocks=4, nodes_per_block=150, seed=0))
    degs = [structure_manipulation(g, 0.2, avg_degree=6.0, seed=s).degrees[g.num_nodes:].mean() for s in range(10)]
    assert abs(np.mean(degs) - 6.0) < 0.5


def test_expose_split_does_not_move_edges():
    g = generate_sbm(BASE)
    a = structure_manipulation(g, 0.2, seed=4, expose_fraction=0.0)
    b = structure_manipulation(g, 0.2, seed=4, expose_fraction=0.5)
    assert np.array_equal(a.edges, b.edges)
    assert a.test_ood.sum() == b.test_ood.sum() + b.expose_ood.sum()


def test_feature_interpolation():
    g = generate_sbm(BASE)
    h = feature_interpolation(g, 0.1, lambda_interp=1.0, seed=2)
    ood = np.flatnonzero(h.test_ood)
    assert len(ood) == math.ceil(0.1 * g.num_nodes) and g.test_id[ood].all()
    originals = {row.tobytes() for row in g.features}
    assert all(h.features[v].tobytes() in originals for v in ood)
    keep = ~h.test_ood
    assert np.array_equal(h.features[keep], g.features[keep])
    assert np.array_equal(h.edges, g.edges)


def test_feature_interpolation_midpoint():
    g = generate_sbm(SbmConfig(num_blocks=1, nodes_per_block=20, feature_dim=2, seed=0))
    x = g.features.copy()
    x[:] = [[0.0, 2.0]] * 10 + [[2.0, 0.0]] * 10
    g = g.replace(features=x)
    h = feature_interpolation(g, 0.5, lambda_interp=0.5, seed=3)
    rng = np.random.default_rng(3)
    chosen = np.sort(rng.choice(np.flatnonzero(g.test_id), size=10, replace=False))
    u, v = rng.integers(0, 20, size=10), rng.integers(0, 20, size=10)
    want = 0.5 * x[u] + 0.5 * x[v]
    assert np.array_equal(h.features[chosen], want)
    mixed = (x[u, 0] != x[v, 0])
    assert np.all(h.features[chosen][mixed] == [1.0, 1.0])


def test_random_lambda_stays_in_segment():
    g = generate_sbm(BASE)
    h = feature_interpolation(g, 0.2, seed=1, random_lambda=True)
    lo, hi = g.features.min(axis=0), g.features.max(axis=0)
    ood = h.test_ood
    assert np.all(h.features[ood] >= lo - 1e-12) and np.all(h.features[ood] <= hi + 1e-12)


def test_label_leave_out():
    g = generate_sbm(BASE)
    h = label_leave_out(g, [2], seed=0)
    assert h.num_classes == 2 and h.num_nodes == g.num_nodes
    assert np.array_equal(h.labels[g.labels == 0], np.zeros((g.labels == 0).sum()))
    assert np.array_equal(h.labels[g.labels == 1], np.ones((g.labels == 1).sum()))
    assert np.all(h.labels[g.labels == 2] == -1)
    assert not (h.train & (g.labels == 2)).any()
    assert h.test_ood.sum() == (g.labels == 2).sum()
    with pytest.raises(ConfigError):
        label_leave_out(g, [])
    with pytest.raises(ConfigError):
        label_leave_out(g, [0, 1, 2])


def test_label_leave_out_middle_class_relabels_densely():
    g = generate_sbm(BASE)
    h = label_leave_out(g, [1], seed=0)
    assert set(np.unique(h.labels)) == {-1, 0, 1}
    assert np.all(h.labels[g.labels == 2] == 1)


@pytest.mark.parametrize("spec", [
    OodSpec("structure", expose_fraction=0.5, seed=9),
    OodSpec("feature", expose_fraction=0.5, seed=9),
    OodSpec("label-leave-out", held_out_classes=(0,), expose_fraction=0.5, seed=9),
])
def test_outputs_pass_loader_validation(tmp_path, spec):
    h = make_ood(generate_sbm(BASE), spec)
    save_dataset(h, str(tmp_path / "d"))
    assert load_dataset(str(tmp_path / "d")).equals(h)
    assert not (h.test_ood & h.expose_ood).any()
