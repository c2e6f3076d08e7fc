import numpy as np

from wienerid.streams import CHANNELS, NoiseStreams, derive_seed


def test_prefix_property():
    s = NoiseStreams(7)
    big = s.normal("y", 3, (100, 2))
    small = s.normal("y", 3, (10, 2))
    np.testing.assert_array_equal(big[:10], small)


def test_draws_independent_of_order():
    a, b = NoiseStreams(7), NoiseStreams(7)
    a.normal("psi", 1, 5)
    x = a.normal("y", 4, 5)
    y = b.normal("y", 4, 5)
    np.testing.assert_array_equal(x, y)


def test_channels_and_steps_differ():
    s = NoiseStreams(1)
    draws = [s.normal(ch, k, 8) for ch in CHANNELS for k in (0, 1)]
    for i in range(len(draws)):
        for j in range(i + 1, len(draws)):
            assert not np.array_equal(draws[i], draws[j])


def test_audit_log():
    s = NoiseStreams(0, audit=True)
    s.normal("y", 2, (3, 1))
    assert s.log == [("y", 2, (3, 1))]
    assert NoiseStreams(0).log is None


def test_derive_seed_stable_and_distinct():
    assert derive_seed(5, 0) == derive_seed(5, 0)
    assert len({derive_seed(5, r) for r in range(100)}) == 100
    assert 0 <= derive_seed(2**40, "x") < 2**63
