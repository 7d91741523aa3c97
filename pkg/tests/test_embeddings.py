import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fcac.embeddings import (Embedding, EmbeddingProvider, load_binary, load_precomputed, load_text, save_binary,
                             save_text)
from fcac.errors import FormatError, NotFoundError


def records(n=5, d=4, seed=0):
    rng = np.random.default_rng(seed)
    return [Embedding(rng.normal(size=d), f"clip{i}", None if i == 2 else i % 3) for i in range(n)]


def test_text_round_trip_is_exact(tmp_path):
    recs = records()
    save_text(tmp_path / "e.tsv", recs)
    prov = load_text(tmp_path / "e.tsv")
    assert len(prov) == 5 and prov.dim == 4
    for r in recs:
        back = prov[r.clip_id]
        np.testing.assert_array_equal(back.vector, r.vector)
        assert back.class_id == r.class_id
    assert [e.clip_id for e in prov] == [r.clip_id for r in recs]


def test_binary_round_trip_is_float32(tmp_path):
    recs = records(seed=1)
    save_binary(tmp_path / "e.bin", recs)
    prov = load_precomputed(tmp_path / "e.bin")
    np.testing.assert_array_equal(prov.matrix(["clip3", "clip0"]),
                                  np.stack([recs[3].vector, recs[0].vector]).astype(np.float32))
    assert prov["clip2"].class_id is None


def test_format_sniffing(tmp_path):
    save_text(tmp_path / "t", records(2))
    save_binary(tmp_path / "b", records(2))
    assert load_precomputed(tmp_path / "t").dim == load_precomputed(tmp_path / "b").dim == 4


def test_lookup_errors_and_matrix_from_generator():
    prov = EmbeddingProvider(records())
    with pytest.raises(NotFoundError):
        prov["nope"]
    assert "clip1" in prov and "nope" not in prov
    assert prov.matrix(c for c in ["clip1", "clip4"]).shape == (2, 4)
    assert prov.matrix([]).shape == (0, 4)


def test_malformed_files(tmp_path):
    (tmp_path / "a").write_text("id\t1\t0.5\n")
    with pytest.raises(FormatError):
        load_text(tmp_path / "a")
    (tmp_path / "b").write_text("DIM 2\nx\t1\t0.5\n")
    with pytest.raises(FormatError):
        load_text(tmp_path / "b")
    (tmp_path / "c").write_text("DIM 1\nx\t1\t0.5\nx\t1\t0.25\n")
    with pytest.raises(FormatError):
        load_text(tmp_path / "c")
    save_binary(tmp_path / "d", records(3))
    raw = (tmp_path / "d").read_bytes()
    (tmp_path / "d").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        load_binary(tmp_path / "d")
    (tmp_path / "e").write_bytes(raw + b"\0")
    with pytest.raises(FormatError):
        load_binary(tmp_path / "e")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=6),
       st.text(alphabet=st.characters(blacklist_categories=("Cs", "Cc", "Zl", "Zp")), min_size=1, max_size=8)
       .filter(lambda s: "\t" not in s and s.strip() == s and s))
def test_text_round_trip_property(tmp_path_factory, values, clip_id):
    path = tmp_path_factory.mktemp("emb") / "e.tsv"
    save_text(path, [Embedding(np.array(values), clip_id, 7)])
    back = load_text(path)[clip_id]
    np.testing.assert_array_equal(back.vector, values)
    assert back.class_id == 7
