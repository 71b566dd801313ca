import numpy as np
import pytest

from mnar_debias.errors import DomainError, IngestError
from mnar_debias.ingest import read_ratings


def write(tmp_path, text, name="r.txt"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_binarization_rule(tmp_path):
    r = read_ratings(write(tmp_path, "0\t0\t4\n0\t1\t3\n1\t1\t5\n"))
    y = np.asarray(r.binarized(3.0))
    assert r.mask.bits[0, 0] and y[0, 0] == 1.0
    assert r.mask.bits[0, 1] and y[0, 1] == 0.0
    assert not r.mask.bits[1, 0] and y[1, 0] == 0.0


def test_dense_zero_is_unobserved(tmp_path):
    r = read_ratings(write(tmp_path, "0 4 1\n5 0 2\n"), "dense_ascii")
    assert r.mask.bits.tolist() == [[False, True, True], [True, False, True]]
    assert np.asarray(r.binarized(3.0)).tolist() == [[0, 1, 0], [1, 0, 0]]


def test_malformed_line_number(tmp_path):
    with pytest.raises(IngestError, match="line 2") as info:
        read_ratings(write(tmp_path, "0\t0\t4\n0\tx\t3\n"))
    assert info.value.line == 2
    with pytest.raises(IngestError, match="line 1"):
        read_ratings(write(tmp_path, "0\t0\n"))
    with pytest.raises(IngestError, match="line 2"):
        read_ratings(write(tmp_path, "1 2\n3\n"), "dense_ascii")


def test_duplicates_last_wins(tmp_path):
    with pytest.warns(UserWarning, match="1 duplicate"):
        r = read_ratings(write(tmp_path, "0\t0\t2\n0\t0\t5\n"))
    assert r.duplicates == 1
    assert np.asarray(r.labels)[0, 0] == 5.0


def test_remap_ids(tmp_path):
    r = read_ratings(write(tmp_path, "u10\ti7\t4\nu3\ti7\t1\nu10\ti2\t2\n"), remap=True)
    assert r.mask.shape == (2, 2)
    # Non-integer ids sort as strings, so "u10" precedes "u3".
    assert np.asarray(r.labels).tolist() == [[2.0, 4.0], [0.0, 1.0]]
    r = read_ratings(write(tmp_path, "10\t7\t4\n3\t7\t1\n"), remap=True)
    assert np.asarray(r.labels).tolist() == [[1.0], [4.0]]


def test_shape_and_format(tmp_path):
    r = read_ratings(write(tmp_path, "0\t0\t4\n"), shape=(3, 2))
    assert r.mask.shape == (3, 2)
    with pytest.raises(IngestError):
        read_ratings(write(tmp_path, "5\t0\t4\n"), shape=(3, 2))
    with pytest.raises(DomainError):
        read_ratings(write(tmp_path, "0\t0\t4\n"), "csv")
    with pytest.raises(IngestError):
        read_ratings(write(tmp_path, "\n"))
