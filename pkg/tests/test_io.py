import numpy as np

from multicontinuum.io import (config_hash, heatmap, provenance, read_cell_array,
                               write_cell_array, write_nodal_csv)


def test_cell_array_roundtrip(tmp_path, rng):
    a = rng.standard_normal((5, 5))
    write_cell_array(tmp_path / "a.csv", a, ["x"])
    np.testing.assert_array_equal(read_cell_array(tmp_path / "a.csv"), a)
    lab = rng.integers(1, 3, (4, 4))
    write_cell_array(tmp_path / "l.csv", lab)
    np.testing.assert_array_equal(read_cell_array(tmp_path / "l.csv", int), lab)


def test_nodal_csv(tmp_path):
    u = np.arange(6.0).reshape(2, 3)
    write_nodal_csv(tmp_path / "u.csv", {"u": u}, 0.5, ["p"])
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[:2] == ["# p", "i,j,x,y,u"]
    assert lines[-1] == "2,1,1.0,0.5,5.0"


def test_heatmap_pgm(tmp_path):
    heatmap(tmp_path / "h.pgm", np.array([[0.0, 1.0], [2.0, 3.0]]))
    data = (tmp_path / "h.pgm").read_bytes()
    assert data.startswith(b"P5")
    pix = data[-4:]
    # row 0 is drawn at the bottom
    assert list(pix) == [170, 255, 0, 85]


def test_provenance_stable():
    c = dict(a=1, b=[1, 2])
    assert config_hash(c) == config_hash(dict(b=[1, 2], a=1))
    assert provenance(c)[1].endswith(config_hash(c))
