import json

import numpy as np
import pytest

from sympflow.flows import SympFlowModel, load_checkpoint, save_checkpoint
from sympflow.potential import (
    BaselineFlowNet,
    PotentialNet,
    eval_baseline,
    eval_potential,
    init_potential,
)
from sympflow.systems import PhasePoint


def test_zero_network_evaluates_to_zero():
    net = PotentialNet(2, (8, 8), seed=0)
    net.set_flat(np.zeros(net.n_params))
    assert eval_potential(net, 0.7, [0.4, -0.2]) == 0.0


def test_eval_reproducible_per_seed():
    a = init_potential(1, [16, 16], seed=42)
    b = init_potential(1, [16, 16], seed=42)
    assert np.array_equal(a.get_flat(), b.get_flat())
    assert eval_potential(a, 0.3, [0.5]) == eval_potential(b, 0.3, [0.5])
    c = init_potential(1, [16, 16], seed=43)
    assert not np.array_equal(a.get_flat(), c.get_flat())


def test_single_linear_layer_value():
    # no hidden layers: V = w . (t, z) + b
    net = PotentialNet(1, (), seed=0)
    net.Wv[0].value[:] = [[1.0, 2.0]]
    net.bv[0].value[:] = 0.0
    assert eval_potential(net, 3.0, [4.0]) == 11.0


def test_parameter_count_formula():
    net = init_potential(1, [16, 16], seed=0)
    assert net.n_params == (2 * 16 + 16) + (16 * 16 + 16) + (16 * 1 + 1) == 337
    for d, widths in [(1, [4]), (2, [3, 5]), (3, [2, 2, 2])]:
        net = init_potential(d, widths, seed=0)
        sizes = [d + 1, *widths, 1]
        expect = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
        assert net.n_params == expect


def test_init_bounds():
    net = init_potential(2, [32, 32], seed=7)
    assert np.isfinite(net.get_flat()).all()
    assert np.abs(net.get_flat()).max() <= 1.0
    for W, b in zip(*net.arrays()):
        bound = 1.0 / np.sqrt(W.shape[1])
        assert np.abs(W).max() <= bound
        assert np.abs(b).max() <= bound


def test_init_rejects_bad_widths():
    with pytest.raises(ValueError):
        init_potential(1, [], seed=0)
    with pytest.raises(ValueError):
        init_potential(1, [16, 0], seed=0)
    with pytest.raises(ValueError):
        PotentialNet(0, (4,))


def test_flat_round_trip(rng):
    net = init_potential(2, [5, 4], seed=1)
    flat = rng.normal(size=net.n_params)
    net.set_flat(flat)
    assert np.array_equal(net.get_flat(), flat)
    with pytest.raises(ValueError):
        net.set_flat(flat[:-1])


def test_baseline_identity_at_zero(rng):
    net = BaselineFlowNet(2, (8, 8), seed=3)
    for _ in range(10):
        x = rng.normal(size=4)
        assert np.array_equal(eval_baseline(net, 0.0, x), x)


def test_baseline_zero_weights_identity(rng):
    net = BaselineFlowNet(1, (6,), seed=0)
    net.set_flat(np.zeros(net.n_params))
    x = rng.normal(size=2)
    assert np.array_equal(eval_baseline(net, 1.7, x), x)


def test_baseline_linear_network_hand_value():
    net = BaselineFlowNet(1, (), seed=0)
    # N(t, x) = W (t, q, p) + b with known entries
    net.Wv[0].value[:] = [[1.0, 0.0, 2.0], [0.0, -1.0, 0.0]]
    net.bv[0].value[:] = [0.5, 0.0]
    x = np.array([2.0, 3.0])
    t = 2.0
    n_out = np.array([t + 2 * 3.0 + 0.5, -2.0])
    assert np.allclose(eval_baseline(net, t, x), x + t * n_out)
    pt = eval_baseline(net, t, PhasePoint(np.array([2.0]), np.array([3.0])))
    assert isinstance(pt, PhasePoint)


def test_baseline_rate_matches_fd(rng):
    net = BaselineFlowNet(2, (7, 7), seed=5)
    X = rng.normal(size=(3, 4))
    t = np.array([0.2, 0.5, 0.9])
    psi, rate = net.flow_and_rate(t, X)
    h = 1e-6
    fd = (net.flow(t + h, X) - net.flow(t - h, X)) / (2 * h)
    assert np.abs(rate - fd).max() < 1e-7
    assert np.allclose(psi, net.flow(t, X))


def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = SympFlowModel(2, n_pairs=2, widths=(6, 5), dt=0.8, seed=9)
    path = tmp_path / "model.json"
    save_checkpoint(path, model, "henon-heiles")
    loaded, meta = load_checkpoint(path)
    assert meta == {"kind": "sympflow", "system": "henon-heiles", "dim": 2, "dt": 0.8}
    assert np.array_equal(loaded.get_flat(), model.get_flat())
    # bit-exact means a re-save produces the identical document
    path2 = tmp_path / "model2.json"
    save_checkpoint(path2, loaded, "henon-heiles")
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_baseline_round_trip(tmp_path):
    net = BaselineFlowNet(1, (9,), seed=2, dt=1.5)
    path = tmp_path / "baseline.json"
    save_checkpoint(path, net, "harmonic")
    loaded, meta = load_checkpoint(path)
    assert isinstance(loaded, BaselineFlowNet)
    assert loaded.dt == 1.5
    assert np.array_equal(loaded.get_flat(), net.get_flat())


def test_checkpoint_is_self_describing(tmp_path):
    model = SympFlowModel(1, n_pairs=1, widths=(4,), seed=0)
    path = tmp_path / "ck.json"
    save_checkpoint(path, model, "harmonic")
    doc = json.loads(path.read_text())
    assert doc["format_version"] == 1
    assert doc["system"] == "harmonic"
    assert doc["widths"] == [4]
    assert doc["activation"] == "tanh"
    assert len(doc["networks"]) == 2
    assert doc["networks"][0]["role"] == "position_1"


def test_checkpoint_rejects_corrupt_layers(tmp_path):
    model = SympFlowModel(1, n_pairs=1, widths=(4,), seed=0)
    path = tmp_path / "ck.json"
    save_checkpoint(path, model, "harmonic")
    doc = json.loads(path.read_text())
    doc["networks"][0]["layers"][0]["weights"] = [1.0, 2.0]
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_eval_potential_rejects_non_finite_parameters():
    from sympflow.errors import NumericalError

    net = PotentialNet(1, (4,), seed=0)
    flat = net.get_flat()
    flat[3] = np.inf
    net.set_flat(flat)
    with pytest.raises(NumericalError):
        eval_potential(net, 0.1, [0.2])
