import math

import numpy as np
import pytest

import truemoe


def test_losses_match_hand_values():
    assert truemoe.bce_loss(0.5, 1) == pytest.approx(math.log(2), abs=1e-12)
    eye = np.eye(2)
    assert truemoe.contrastive_loss(eye, eye, 1.0) == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
    assert truemoe.routing_loss([1, 0], [0, 1], 2.0) == pytest.approx(0.5 + 0.5 * math.log(2), abs=1e-12)
    assert truemoe.balance_loss([1, 0], [0.9, 0.1]) == pytest.approx(1.8, abs=1e-12)
    assert truemoe.total_loss(1, 2, 10) == pytest.approx(2.1, abs=1e-12)


def test_gates():
    w = truemoe.sparse_gate([2.0, 1.0, 0.5], 1)
    assert w == [1.0, 0.0, 0.0]
    d = truemoe.dense_gate([0.1, -0.4, 1.3])
    assert sum(d) == pytest.approx(1.0, abs=1e-6)
    assert truemoe.sparse_gate([0.1, -0.4, 1.3], 3) == pytest.approx(d, abs=1e-7)
    with pytest.raises(truemoe.DomainError):
        truemoe.sparse_gate([1.0, 2.0], 3)


def test_metrics():
    assert truemoe.accuracy([0.9, 0.2, 0.6], [1, 0, 0]) == pytest.approx(2 / 3)
    assert truemoe.average_precision([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == pytest.approx((1 + 2 / 3) / 2)


def test_generate_split_is_seeded():
    a = truemoe.generate_split("test", 2, 0, 0, 2, seed=7)
    b = truemoe.generate_split("test", 2, 0, 0, 2, seed=7)
    assert len(a) == 4
    assert a[0][0].shape == (3, 64, 64)
    assert all(np.array_equal(x[0], y[0]) for x, y in zip(a, b))
    fams = sorted(m["family"] or "-" for _, m in a)
    assert fams == ["-", "-", "C", "C"]


def test_config_errors_are_typed():
    with pytest.raises(truemoe.ConfigError):
        truemoe.parse_config("no_such_key = 1\n")
    c = truemoe.parse_config("seed = 3\nbeta = 0\n")
    assert c.seed == 3 and c.beta == 0


def test_session_order_is_enforced(tmp_path):
    c = truemoe.Config()
    c.work_dir = str(tmp_path / "work")
    c.data_root = str(tmp_path / "data")
    c.set_split("train", 8, 4, 4, 0)
    c.set_split("val", 4, 2, 2, 0)
    c.set_split("test", 4, 0, 0, 4)
    s = truemoe.Session(c)
    s.generate()
    with pytest.raises(truemoe.StateError):
        s.run_phase("cluster")
    with pytest.raises(truemoe.StateError):
        s.evaluate("test")
    assert truemoe.PHASES[0] == "pretrain_autoencoders"
