import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from otcloak import cost_model as cm
from otcloak.errors import FormatError, ShapeError
from otcloak.features import NeighborMeasure


def random_geometry(seed, dims=(6, 4, 3)):
    rng = np.random.default_rng(seed)
    d, h, e = dims
    geo = cm.init_geometry(d, h, e, seed=seed, feat_mean=rng.normal(size=d), feat_scale=rng.random(d) + 0.5)
    geo.L = rng.normal(size=(e, e))
    return geo


def loss_of(geo, pairs):
    return sum(w * cm.ground_cost(geo, z, zp) for z, zp, w in pairs)


def fd_grads(geo, pairs, h=1e-6):
    out = []
    for p in geo.params():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss_of(geo, pairs)
            p[idx] = old - h
            down = loss_of(geo, pairs)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_rel_err(analytic, numeric):
    # scale by the largest gradient entry overall: the output bias gradient is
    # identically zero, so a per-tensor scale would only measure FD noise
    scale = max(np.abs(n).max() for n in numeric)
    return max(np.abs(a - n).max() for a, n in zip(analytic, numeric)) / scale


def test_init_shapes_and_identity_metric():
    geo = cm.init_geometry(10)
    assert [W.shape for W, _ in geo.weights] == [(128, 10), (256, 128)]
    assert geo.embed_dim == 256 and geo.input_dim == 10
    assert np.array_equal(geo.L, np.eye(256))
    bound = 1 / np.sqrt(10)
    assert np.abs(geo.weights[0][0]).max() <= bound


def test_zero_weights_give_zero_embedding():
    geo = cm.init_geometry(3, 4, 2)
    for W, b in geo.weights:
        W[:] = 0
        b[:] = 0
    assert np.array_equal(cm.embed(geo, [1.0, -2.0, 3.0]), np.zeros(2))


def test_identity_single_layer_is_passthrough():
    geo = cm.OtGeometry([(np.eye(3), np.zeros(3))], np.eye(3), np.zeros(3), np.ones(3))
    z = np.array([0.5, 1.5, 2.0])
    assert np.array_equal(cm.embed(geo, z), z)


def test_embed_is_deterministic_under_seed():
    z = np.linspace(-1, 1, 6)
    a = cm.embed(cm.init_geometry(6, seed=4), z)
    b = cm.embed(cm.init_geometry(6, seed=4), z)
    assert a.tobytes() == b.tobytes()


def test_embed_shape_error():
    with pytest.raises(ShapeError):
        cm.embed(cm.init_geometry(3, 4, 2), [1.0, 2.0])
    with pytest.raises(ShapeError):
        cm.ground_cost(cm.init_geometry(3, 4, 2), [1.0, 2.0], [1.0, 2.0])


def test_ground_cost_examples():
    geo = random_geometry(0)
    z = np.arange(6.0)
    assert cm.ground_cost(geo, z, z) == 0.0
    unit = cm.OtGeometry([(np.eye(2), np.zeros(2))], np.eye(2), np.zeros(2), np.ones(2))
    assert cm.ground_cost(unit, [1.0, 0.0], [0.0, 0.0]) == 1.0


@given(st.integers(0, 10**6))
def test_ground_cost_matches_explicit_mahalanobis(seed):
    rng = np.random.default_rng(seed)
    geo = random_geometry(seed % 1000)
    z, zp = rng.normal(size=6), rng.normal(size=6)
    # independent two-step evaluation: embed, then (e - e')^T L^T L (e - e')
    x = (z - geo.feat_mean) / geo.feat_scale
    xp = (zp - geo.feat_mean) / geo.feat_scale
    (W1, b1), (W2, b2) = geo.weights
    e = W2 @ np.maximum(W1 @ x + b1, 0) + b2
    ep = W2 @ np.maximum(W1 @ xp + b1, 0) + b2
    want = (e - ep) @ (geo.L.T @ geo.L) @ (e - ep)
    got = cm.ground_cost(geo, z, zp)
    assert got == pytest.approx(want, rel=1e-10, abs=1e-12)
    assert got >= 0
    assert got == pytest.approx(cm.ground_cost(geo, zp, z), rel=1e-12, abs=1e-15)


@given(st.integers(0, 10**6))
def test_metric_is_psd(seed):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(5, 5)) * rng.uniform(0.01, 10)
    geo = cm.OtGeometry([(np.eye(5), np.zeros(5))], L, np.zeros(5), np.ones(5))
    assert np.linalg.eigvalsh(geo.M).min() >= -1e-10


def measure(atoms, weights=None):
    atoms = np.asarray(atoms, dtype=np.float64)
    w = np.full(len(atoms), 1 / len(atoms)) if weights is None else np.asarray(weights)
    return NeighborMeasure(0, np.arange(len(atoms)), atoms, w)


def test_cost_matrix_examples():
    geo = random_geometry(1)
    z = np.ones(6)
    assert cm.cost_matrix_for(geo, measure([z]), measure([z])).values.tolist() == [[0.0]]
    rng = np.random.default_rng(0)
    A, B = rng.normal(size=(2, 6)), rng.normal(size=(1, 6))
    C = cm.cost_matrix_for(geo, measure(A), measure(B))
    assert C.shape == (2, 1)
    np.testing.assert_allclose(C.values[:, 0], [cm.ground_cost(geo, a, B[0]) for a in A], rtol=1e-10)
    A3 = rng.normal(size=(3, 6))
    np.testing.assert_allclose(cm.cost_matrix_for(geo, measure(A3), measure(A)).values,
                               cm.cost_matrix_for(geo, measure(A), measure(A3)).values.T, rtol=1e-12)


def test_backward_zero_weights_give_zero_grads():
    geo = random_geometry(2)
    rng = np.random.default_rng(0)
    grads = cm.backward(geo, [(rng.normal(size=6), rng.normal(size=6), 0.0) for _ in range(3)])
    assert all(not p.any() for p in grads.params())


def test_backward_single_linear_layer_fd():
    rng = np.random.default_rng(7)
    geo = cm.OtGeometry([(rng.normal(size=(3, 4)), rng.normal(size=3))], rng.normal(size=(3, 3)),
                        np.zeros(4), np.ones(4))
    pairs = [(rng.normal(size=4), rng.normal(size=4), 1.0)]
    assert max_rel_err(cm.backward(geo, pairs).params(), fd_grads(geo, pairs, h=1e-5)) <= 1e-4


def test_backward_duplicate_pair_equals_double_weight():
    geo = random_geometry(3)
    rng = np.random.default_rng(1)
    z, zp = rng.normal(size=6), rng.normal(size=6)
    twice = cm.backward(geo, [(z, zp, 0.7), (z, zp, 0.7)])
    once = cm.backward(geo, [(z, zp, 1.4)])
    for a, b in zip(twice.params(), once.params()):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_backward_matches_fd_on_small_geometry(seed):
    geo = random_geometry(seed)
    rng = np.random.default_rng(100 + seed)
    pairs = [(rng.normal(size=6), rng.normal(size=6), rng.uniform(-1, 1)) for _ in range(4)]
    assert max_rel_err(cm.backward(geo, pairs).params(), fd_grads(geo, pairs)) <= 1e-3


def test_block_atom_grads_match_pairwise_backward():
    geo = random_geometry(4)
    rng = np.random.default_rng(2)
    A, B = rng.normal(size=(3, 6)), rng.normal(size=(2, 6))
    W = rng.random((3, 2))
    Qa, Qb = cm.project(geo, A), cm.project(geo, B)
    ga, gb = cm.block_atom_grads(Qa, Qb, W)
    via_atoms = cm.backward_atoms(geo, np.concatenate([A, B]), np.concatenate([ga, gb]))
    via_pairs = cm.backward(geo, [(A[i], B[j], W[i, j]) for i in range(3) for j in range(2)])
    for a, b in zip(via_atoms.params(), via_pairs.params()):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_apply_step_descends():
    geo = random_geometry(5)
    rng = np.random.default_rng(3)
    pairs = [(rng.normal(size=6), rng.normal(size=6), 1.0) for _ in range(5)]
    before = loss_of(geo, pairs)
    cm.apply_step(geo, cm.backward(geo, pairs), 1e-3)
    assert loss_of(geo, pairs) < before


def test_gradient_container_arithmetic():
    geo = random_geometry(6)
    g = cm.CostGradients.zeros_like(geo)
    assert g.norm() == 0.0
    one = cm.backward(geo, [(np.ones(6), np.zeros(6), 1.0)])
    g += one
    g += one
    for a, b in zip(g.params(), one.scaled(2.0).params()):
        np.testing.assert_allclose(a, b)


def test_save_load_round_trip(tmp_path):
    geo = random_geometry(8)
    cm.save(geo, tmp_path / "g.bin")
    back = cm.load(tmp_path / "g.bin")
    assert back.equals(geo)
    assert (tmp_path / "g.bin").read_bytes()[:6] == b"OTGEO1"


def test_load_truncated(tmp_path):
    cm.save(random_geometry(0), tmp_path / "g.bin")
    data = (tmp_path / "g.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-5])
    with pytest.raises(FormatError):
        cm.load(tmp_path / "t.bin")
    (tmp_path / "x.bin").write_bytes(data + b"\0")
    with pytest.raises(FormatError):
        cm.load(tmp_path / "x.bin")


def test_load_wrong_version_and_magic(tmp_path):
    geo = random_geometry(0)
    geo.version = 2
    cm.save(geo, tmp_path / "v.bin")
    with pytest.raises(FormatError):
        cm.load(tmp_path / "v.bin")
    (tmp_path / "m.bin").write_bytes(b"NOTGEO" + b"\0" * 40)
    with pytest.raises(FormatError):
        cm.load(tmp_path / "m.bin")
    with pytest.raises(FormatError):
        cm.load(tmp_path / "missing.bin")


def test_standardization_constant_columns():
    mean, scale = cm.standardization(np.array([[1.0, 2.0], [3.0, 2.0]]))
    assert mean.tolist() == [2.0, 2.0]
    assert scale.tolist() == [1.0, 1.0]
