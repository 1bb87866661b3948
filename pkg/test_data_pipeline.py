import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chem.fingerprint import Fingerprint
from chem.properties import PropertyVector, SurrogateOracle
from conftest import DESK_SMILES
from data_pipeline import MoleculeRecord, PairRecord, audit_leakage, build_records, exclude_molecules, \
    mine_pairs, naive_mine_pairs, pair_frame, read_pairs, read_tsv, sample_negative_pairs, split, \
    subsample_simnet, write_tsv
from errors import InsufficientNegatives, MissingProperties, ParseError, TooFewRows

ORACLE = SurrogateOracle()


def desk_records(smiles=DESK_SMILES):
    return build_records(smiles, {s: ORACLE(s) for s in smiles})


def record(name, bits, n_bits=64):
    return MoleculeRecord(name, None, Fingerprint(frozenset(bits), n_bits))


def key(pairs):
    return [(p.x.smiles, p.y.smiles, p.similarity) for p in pairs]


def test_exclude_molecules():
    assert exclude_molecules(["A", "B", "C"], []) == (["A", "B", "C"], 0)
    assert exclude_molecules(["A", "B", "C"], [["B"]]) == (["A", "C"], 1)
    assert exclude_molecules(["A", "B"], [["A"], ["B", "D"]]) == ([], 2)


def test_build_records_requires_properties():
    with pytest.raises(MissingProperties):
        build_records(["CCO", "CCN"], {"CCO": ORACLE("CCO")})
    records = build_records(["CCO", "CCN"], None, require_properties=False)
    assert [r.properties for r in records] == [None, None]


def test_identical_molecules_pair_both_ways():
    pairs, stats = mine_pairs(desk_records(["CCO", "CCO"]), 0.4)
    assert [(p.similarity) for p in pairs] == [1.0, 1.0]
    assert stats.emitted == 2


def test_disjoint_fingerprints_are_never_scored():
    records = [record(str(i), {2 * i, 2 * i + 1}) for i in range(10)]
    pairs, stats = mine_pairs(records, 0.1)
    assert pairs == []
    assert stats.evaluated == 0


@pytest.mark.parametrize("ordered", [True, False])
@pytest.mark.parametrize("delta", [0.2, 0.4, 0.7])
def test_pruned_mining_matches_naive_loop(ordered, delta):
    records = desk_records()
    pairs, _ = mine_pairs(records, delta, threads=3, ordered=ordered)
    assert key(pairs) == key(naive_mine_pairs(records, delta, ordered=ordered))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.frozensets(st.integers(0, 31), min_size=1, max_size=6), min_size=2, max_size=25),
       st.sampled_from([0.1, 0.3, 0.5, 0.9]))
def test_random_fingerprints_match_naive_loop(bit_sets, delta):
    records = [record(str(i), bits, 32) for i, bits in enumerate(bit_sets)]
    for ordered in (True, False):
        pairs, stats = mine_pairs(records, delta, threads=2, ordered=ordered)
        assert key(pairs) == key(naive_mine_pairs(records, delta, ordered=ordered))
        assert stats.emitted == len(pairs)


def test_mined_pairs_respect_threshold():
    pairs, _ = mine_pairs(desk_records(), 0.4)
    assert pairs
    assert all(p.similarity >= 0.4 for p in pairs)
    assert all(p.x is not p.y for p in pairs)


def test_negative_sampling_stays_below_threshold():
    negatives = sample_negative_pairs(desk_records(), 0.4, cap=5, seed=1)
    assert negatives
    assert all(p.similarity < 0.4 for p in negatives)
    assert key(negatives) == key(sample_negative_pairs(desk_records(), 0.4, cap=5, seed=1))


def synthetic_pool(n_pos, n_neg, seed=0):
    rng = np.random.default_rng(seed)
    x = record("x", {1})
    pos = [PairRecord(x, record(f"p{i}", {1}), float(s)) for i, s in enumerate(rng.uniform(0.4, 1.0, n_pos))]
    neg = [PairRecord(x, record(f"n{i}", {2}), float(s)) for i, s in enumerate(rng.uniform(0.0, 0.4, n_neg))]
    return pos + neg


def positive_ratio(sample):
    return sum(lp.label for lp in sample) / len(sample)


def test_subsample_hits_target_ratio():
    pool = synthetic_pool(500, 700)
    sample = subsample_simnet(pool, 0.5, 0.5, seed=0)
    assert len(sample) == 600
    assert 0.49 <= positive_ratio(sample) <= 0.51
    assert all((lp.pair.similarity >= 0.4) == bool(lp.label) for lp in sample)


def test_subsample_full_fraction():
    pool = synthetic_pool(300, 300)
    sample = subsample_simnet(pool, 1.0, 0.5, seed=0)
    assert len(sample) == 600
    assert positive_ratio(sample) == 0.5


def test_subsample_keeps_similarity_histogram():
    pool = synthetic_pool(1000, 1000, seed=2)
    sample = subsample_simnet(pool, 0.2, 0.5, bins=10, seed=0)
    pos_all = np.histogram([p.similarity for p in pool if p.similarity >= 0.4], bins=10, range=(0, 1))[0]
    pos_kept = np.histogram([lp.pair.similarity for lp in sample if lp.label], bins=10, range=(0, 1))[0]
    expected = pos_all * (pos_kept.sum() / pos_all.sum())
    assert np.all(np.abs(pos_kept - expected) <= 1.0)


def test_subsample_is_seeded():
    pool = synthetic_pool(200, 200)
    first = subsample_simnet(pool, 0.5, 0.5, seed=7)
    second = subsample_simnet(pool, 0.5, 0.5, seed=7)
    assert [(lp.pair.y.smiles, lp.label) for lp in first] == [(lp.pair.y.smiles, lp.label) for lp in second]


def test_subsample_shrinks_when_negatives_run_short():
    sample = subsample_simnet(synthetic_pool(60, 40), 1.0, 0.5, seed=0)
    assert len(sample) == 80
    assert positive_ratio(sample) == 0.5

    sample = subsample_simnet(synthetic_pool(100, 10), 1.0, 0.5, seed=0)
    assert sum(lp.label for lp in sample) == 10
    assert len(sample) == 20


def test_subsample_uneven_ratio_with_short_negatives():
    sample = subsample_simnet(synthetic_pool(200, 30), 1.0, 0.75, seed=1)
    assert len([lp for lp in sample if not lp.label]) == 30
    assert abs(positive_ratio(sample) - 0.75) <= 0.01


def test_subsample_insufficient_negatives():
    with pytest.raises(InsufficientNegatives):
        subsample_simnet(synthetic_pool(100, 0), 1.0, 0.5)
    with pytest.raises(InsufficientNegatives):
        subsample_simnet(synthetic_pool(1, 1), 1.0, 0.3)
    with pytest.raises(ValueError):
        subsample_simnet(synthetic_pool(10, 10), 1.0, 1.0)


def test_split_examples():
    rows = list(range(10))
    train, dev = split(rows, 0.8, seed=3)
    assert len(train) == 8 and len(dev) == 2
    assert not set(train) & set(dev)
    assert sorted(train + dev) == rows
    assert split(rows, 0.8, seed=3) == (train, dev)
    with pytest.raises(TooFewRows):
        split([1], 0.8)


def test_audit_leakage():
    pairs, _ = mine_pairs(desk_records(["CCO", "CCO", "c1ccccc1"]), 0.9)
    assert audit_leakage(pairs, [["c1ccccc1"], ["CCO", "CCCC"]]) == ["CCO"]
    assert audit_leakage(pairs, [[]]) == []


def test_pair_tsv_round_trip(tmp_path):
    pairs, _ = mine_pairs(desk_records(["C#N", "C#N", "CC#N"]), 0.1)
    assert pairs
    path = write_tsv(tmp_path / "pairs.tsv", pair_frame(pairs, [1] * len(pairs)), header="delta=0.1")
    table = read_pairs(path)
    assert table.x == [p.x.smiles for p in pairs]
    assert table.similarity.tolist() == [p.similarity for p in pairs]
    assert table.labels.tolist() == [1] * len(pairs)
    assert np.array_equal(table.p_y[0], pairs[0].y.properties.as_array())


def test_read_tsv_reports_bad_numbers(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("x_smiles\ty_smiles\tsimilarity\tpx1\tpx2\tpx3\tpy1\tpy2\tpy3\n"
                    "CCO\tCCN\tabc\t0\t0\t0\t0\t0\t0\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        read_pairs(path)
    assert info.value.line == 2
    with pytest.raises(ParseError):
        read_tsv(path, ["label"])


def test_property_columns_follow_vector_order():
    x = MoleculeRecord("CCO", PropertyVector(plogp=0.2, qed=0.3, drd2=0.4), Fingerprint(frozenset({1}), 8))
    frame = pair_frame([PairRecord(x, x, 1.0)])
    assert frame[["px1", "px2", "px3"]].iloc[0].tolist() == ["0.2", "0.3", "0.4"]
