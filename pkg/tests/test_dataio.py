import json

import numpy as np
import pytest
from scipy import stats

from divkit.dataio import (
    EmbeddingSet,
    ResultRecord,
    RunSeed,
    canonical_json,
    config_hash,
    load_embeddings,
    load_record,
    save_embeddings,
    save_record,
    subsample,
)
from divkit.errors import (
    EmptySet,
    IoFailure,
    MalformedFile,
    NonFiniteEntry,
    SizeTooLarge,
)


def test_csv_load_basic(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,0\n0,1\n0,0\n")
    x = load_embeddings(str(p))
    assert (x.n, x.d) == (3, 2)
    assert np.array_equal(x.data, [[1, 0], [0, 1], [0, 0]])


def test_csv_header_and_blank_lines(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("# c0,c1\n1.5,2.5\n\n3.5,4.5\n")
    x = load_embeddings(str(p), "csv")
    assert (x.n, x.d) == (2, 2)


def test_csv_ragged_rows(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2\n3,4,5\n")
    with pytest.raises(MalformedFile):
        load_embeddings(str(p))


def test_csv_nan_rejected(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("1,2\n3,nan\n")
    with pytest.raises(NonFiniteEntry) as err:
        load_embeddings(str(p))
    assert err.value.row == 1 and err.value.col == 1


def test_csv_empty(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("# only a header\n")
    with pytest.raises(EmptySet):
        load_embeddings(str(p))


def test_binary_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(0)
    x = EmbeddingSet(rng.normal(size=(5, 4)))
    p = tmp_path / "x.embd"
    save_embeddings(x, str(p), "binary")
    y = load_embeddings(str(p))
    assert (y.n, y.d) == (5, 4)
    assert np.array_equal(x.data, y.data)


def test_binary_header_layout(tmp_path):
    x = EmbeddingSet(np.arange(20, dtype=float).reshape(5, 4))
    p = tmp_path / "x.embd"
    save_embeddings(x, str(p), "binary")
    blob = p.read_bytes()
    assert blob[:4] == b"EMBD"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:16], "little") == 5
    assert int.from_bytes(blob[16:24], "little") == 4
    assert len(blob) == 24 + 8 * 20


def test_binary_bad_magic(tmp_path):
    p = tmp_path / "x.embd"
    p.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(MalformedFile):
        load_embeddings(str(p), "binary")


def test_binary_truncated(tmp_path):
    x = EmbeddingSet(np.ones((3, 2)))
    p = tmp_path / "x.embd"
    save_embeddings(x, str(p), "binary")
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(MalformedFile):
        load_embeddings(str(p))


def test_csv_roundtrip_17_digits(tmp_path):
    rng = np.random.default_rng(7)
    x = EmbeddingSet(rng.normal(size=(8, 3)) * np.pi)
    p = tmp_path / "x.csv"
    save_embeddings(x, str(p), "csv")
    y = load_embeddings(str(p))
    assert np.array_equal(x.data, y.data)


def test_format_sniffing(tmp_path):
    x = EmbeddingSet(np.ones((2, 2)))
    pb = tmp_path / "b.dat"
    pc = tmp_path / "c.dat"
    save_embeddings(x, str(pb), "binary")
    save_embeddings(x, str(pc), "csv")
    assert load_embeddings(str(pb)).n == 2
    assert load_embeddings(str(pc)).n == 2


def test_embeddingset_rejects_nonfinite():
    with pytest.raises(NonFiniteEntry):
        EmbeddingSet(np.array([[1.0, np.inf]]))


def test_embeddingset_immutable():
    x = EmbeddingSet(np.ones((2, 2)))
    with pytest.raises(ValueError):
        x.data[0, 0] = 5.0


# -- records ----------------------------------------------------------------

def test_record_roundtrip_score(tmp_path):
    rec = ResultRecord("score", {"vendi": 3.5, "rke": 2.0, "n": 10}, "abc", 0.0)
    p = tmp_path / "r.json"
    save_record(rec, str(p))
    back = load_record(str(p))
    assert back == rec


def test_record_roundtrip_curve(tmp_path):
    payload = {
        "sizes": list(range(10)),
        "mean": [float(i) / 3 for i in range(10)],
        "nested": {"a": [1, 2.5, "x", None, True]},
    }
    rec = ResultRecord("curve", payload, "ffff", 12.0)
    p = tmp_path / "r.json"
    save_record(rec, str(p))
    assert load_record(str(p)) == rec


def test_record_write_readonly_path(tmp_path):
    rec = ResultRecord("score", {}, "", 0.0)
    with pytest.raises(IoFailure):
        save_record(rec, str(tmp_path / "missing_dir" / "r.json"))


def test_canonical_json_sorted_and_17g():
    s = canonical_json({"b": 0.1, "a": 1})
    assert s == '{"a":1,"b":0.10000000000000001}'
    assert json.loads(s)["b"] == 0.1


def test_config_hash_key_order_invariant():
    assert config_hash({"a": 1, "b": [2.0, 3]}) == config_hash({"b": [2.0, 3], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_record_jsonifies_numpy():
    rec = ResultRecord("score", {"v": np.float64(1.5), "a": np.arange(3)}, "", 0.0)
    assert rec.payload == {"v": 1.5, "a": [0, 1, 2]}


# -- randomness -------------------------------------------------------------

def test_runseed_repeatable():
    a = RunSeed(123, 5).generator().normal(size=10)
    b = RunSeed(123, 5).generator().normal(size=10)
    assert np.array_equal(a, b)


def test_runseed_streams_differ():
    a = RunSeed(123, 0).generator().normal(size=10)
    b = RunSeed(123, 1).generator().normal(size=10)
    assert not np.array_equal(a, b)


def test_runseed_children_distinct():
    root = RunSeed(9)
    ids = {root.child(i).stream_id for i in range(1000)}
    assert len(ids) == 1000


def test_subsample_full_draw_is_permutation():
    x = EmbeddingSet(np.arange(12, dtype=float).reshape(6, 2))
    y = subsample(x, 6, RunSeed(3))
    assert sorted(map(tuple, y.data.tolist())) == sorted(map(tuple, x.data.tolist()))


def test_subsample_deterministic():
    x = EmbeddingSet(np.arange(40, dtype=float).reshape(20, 2))
    a = subsample(x, 7, RunSeed(11, 2))
    b = subsample(x, 7, RunSeed(11, 2))
    assert np.array_equal(a.data, b.data)


def test_subsample_too_large():
    x = EmbeddingSet(np.ones((4, 1)))
    with pytest.raises(SizeTooLarge):
        subsample(x, 5, RunSeed(0))


def test_subsample_uniformity_chi_square():
    # m=1 draws over many seeds: per-row frequencies within 3-sigma binomial
    # bounds and an overall chi-square test at the 0.1% level
    n, draws = 8, 10_000
    x = EmbeddingSet(np.arange(n, dtype=float).reshape(n, 1))
    root = RunSeed(2024)
    counts = np.zeros(n)
    for i in range(draws):
        row = subsample(x, 1, root.child(i)).data[0, 0]
        counts[int(row)] += 1
    p = 1.0 / n
    sigma = np.sqrt(draws * p * (1 - p))
    assert np.abs(counts - draws * p).max() <= 3 * sigma
    chi2 = ((counts - draws * p) ** 2 / (draws * p)).sum()
    assert chi2 <= stats.chi2.ppf(0.999, df=n - 1)
