import numpy as np
import pytest

from genid.errors import InvalidArgumentError
from genid.series import MultiSeries


def _series():
    return MultiSeries.from_channels(10.0, {"a": [1.0, 2.0, 3.0], "b": [4.0, 5.0, 6.0]})


def test_from_channels_and_access():
    s = _series()
    assert len(s) == 3
    assert s.labels == ("a", "b")
    assert s.dt == pytest.approx(0.1)
    np.testing.assert_allclose(s.times, [0.0, 0.1, 0.2])
    np.testing.assert_array_equal(s["b"], [4.0, 5.0, 6.0])
    with pytest.raises(KeyError):
        s["c"]


def test_select_and_window():
    s = _series()
    w = s.select(["b"]).window(1)
    assert w.labels == ("b",)
    np.testing.assert_array_equal(w.data[:, 0], [5.0, 6.0])
    assert w.t0 == pytest.approx(0.1)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(sample_rate=0.0, labels=("a",), data=np.zeros((3, 1))),
        dict(sample_rate=10.0, labels=("a", "a"), data=np.zeros((3, 2))),
        dict(sample_rate=10.0, labels=("a",), data=np.zeros((3, 2))),
        dict(sample_rate=10.0, labels=("a",), data=np.zeros((3, 1, 1))),
    ],
)
def test_invalid_series(kwargs):
    with pytest.raises(InvalidArgumentError):
        MultiSeries(**kwargs)


def test_unequal_channel_lengths():
    with pytest.raises(InvalidArgumentError):
        MultiSeries.from_channels(1.0, {"a": [1, 2], "b": [1, 2, 3]})


def test_equals_with_tolerance():
    s = _series()
    t = s.with_data(s.data + 1e-9)
    assert not s.equals(t)
    assert s.equals(t, tol=1e-8)
    assert not s.equals(s.select(["a"]))
