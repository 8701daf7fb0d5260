import itertools

import numpy as np
import pytest

from stegsage.errors import DimensionError, ValidationError
from stegsage.qim import (
    CodebookPartition,
    PartitionError,
    cnv_partition,
    nearest_neighbours,
    qim_embed,
    qim_extract,
)
from stegsage.streams import CodebookSet, CoverSourceConfig, LatentSequence, gen_latent_sequence, make_codebooks, quantize_cover


def line_books(*points):
    b = np.array(points, dtype=float)[:, None]
    return CodebookSet([b, b, b])


def check_partition(book, assignment, n_bits):
    """Exhaustive verifier: disjoint, exhaustive, balanced, complementary neighbours."""
    m = len(book)
    parts = [set(np.flatnonzero(assignment == p)) for p in range(1 << n_bits)]
    assert set().union(*parts) == set(range(m))
    assert sum(len(p) for p in parts) == m
    sizes = [len(p) for p in parts]
    assert max(sizes) - min(sizes) <= 1
    # at every level of the recursive split, a codeword's nearest neighbour
    # within its parent group sits across that level's bit
    for level in range(n_bits):
        shift = n_bits - 1 - level
        parent = assignment >> (shift + 1)
        for g in np.unique(parent):
            members = np.flatnonzero(parent == g)
            for v in members:
                others = [u for u in members if u != v]
                d = [np.sum((book[v] - book[u]) ** 2) for u in others]
                u = others[int(np.argmin(d))]
                assert (assignment[v] >> shift) & 1 != (assignment[u] >> shift) & 1


def test_line_codebook_unique_split():
    book = np.array([[0.0], [1.0], [2.0], [3.0]])
    p = cnv_partition(line_books(0.0, 1.0, 2.0, 3.0), 1, seed=0)
    a = p.assignment[0]
    assert {tuple(np.flatnonzero(a == 0)), tuple(np.flatnonzero(a == 1))} == {(0, 2), (1, 3)}
    # brute force: {0,2}/{1,3} is the only balanced assignment with the property
    nn = nearest_neighbours(book)
    valid = []
    for bits in itertools.product([0, 1], repeat=4):
        bits = np.array(bits)
        if bits.sum() == 2 and all(bits[v] != bits[nn[v]] for v in range(4)):
            valid.append(frozenset(map(frozenset, [np.flatnonzero(bits == 0), np.flatnonzero(bits == 1)])))
    assert set(valid) == {frozenset({frozenset({0, 2}), frozenset({1, 3})})}


def test_size_two_split():
    p = cnv_partition(line_books(0.0, 5.0), 1)
    assert sorted(p.assignment[0].tolist()) == [0, 1]


def test_too_small_or_bad_bits():
    with pytest.raises(PartitionError):
        cnv_partition(line_books(0.0, 1.0), 2)
    with pytest.raises(ValidationError):
        cnv_partition(line_books(0.0, 1.0), 0)


def test_unsatisfiable_split_is_reported():
    # three leaves whose nearest neighbour is the centre: the colouring is
    # forced to 1 vs 3, so no balanced split exists
    star = np.array([[0.0, 0.0], [1.0, 0.0], [-1.05, 0.0], [0.0, 1.1]])
    with pytest.raises(PartitionError, match="imbalance"):
        cnv_partition(CodebookSet([star, star, star]), 1)


def test_balance_found_across_components():
    # path 0-1-1.5-2 (forced 2/2 within itself) plus pair 10-20
    p = cnv_partition(line_books(0.0, 1.0, 1.5, 2.0, 10.0, 20.0), 1)
    assert sorted(np.bincount(p.assignment[0])) == [3, 3]
    check_partition(np.array([0.0, 1.0, 1.5, 2.0, 10.0, 20.0])[:, None], p.assignment[0], 1)


def test_random_partitions_satisfy_invariants():
    for seed in range(30):
        cb = make_codebooks((16, 8, 8), (3, 2, 2), seed=seed, partition_bits=2)
        for n_bits in (1, 2):
            p = cnv_partition(cb, n_bits, seed=seed)
            for book, a in zip(cb.books, p.assignment):
                check_partition(book, a, n_bits)


def test_partition_deterministic():
    cb = make_codebooks(seed=4)
    a = cnv_partition(cb, 1, seed=7)
    b = cnv_partition(cb, 1, seed=7)
    assert all(np.array_equal(x, y) for x, y in zip(a.assignment, b.assignment))


def test_partition_properties():
    p = CodebookPartition(1, [np.array([0, 1, 0, 1])] * 3)
    assert p.n_parts == 2
    assert p.sizes == (4, 4, 4)
    assert [x.tolist() for x in p.parts[0]] == [[0, 2], [1, 3]]


# -- embedding -----------------------------------------------------------------

def line_setup():
    cb = line_books(0.0, 1.0, 2.0, 3.0)
    part = CodebookPartition(1, [np.array([0, 1, 0, 1])] * 3)
    lat = LatentSequence([np.array([[0.9]])] * 3)
    return cb, part, lat


@pytest.mark.parametrize("bit,expected", [(0, 0), (1, 1)])
def test_embed_forced_nearest_in_part(bit, expected):
    cb, part, lat = line_setup()
    st = qim_embed(lat, cb, part, 1.0, 0, payload=np.full(3, bit))
    assert st.qis.indices[:, 0].tolist() == [expected] * 3
    assert st.plan.selected.tolist() == [True]


def test_extract_direct_lookup():
    cb, part, lat = line_setup()
    st = qim_embed(lat, cb, part, 1.0, 0, payload=np.array([1, 0, 1]))
    assert st.qis.indices[:, 0].tolist() == [1, 0, 1]
    assert qim_extract(st, part).tolist() == [1, 0, 1]


def test_embed_validation():
    cb, part, lat = line_setup()
    for rate in (0.0, -0.1, 1.5):
        with pytest.raises(ValidationError):
            qim_embed(lat, cb, part, rate, 0)
    with pytest.raises(ValidationError):
        qim_embed(lat, cb, part, 1.0, 0, payload=np.zeros(2))
    bad = CodebookPartition(1, [np.array([0, 1])] * 3)
    with pytest.raises(DimensionError):
        qim_embed(lat, cb, bad, 1.0, 0)


def test_empty_selection_gives_empty_payload():
    cb = make_codebooks((16, 8, 8), (3, 2, 2), seed=0)
    part = cnv_partition(cb, 1)
    lat = gen_latent_sequence(CoverSourceConfig(seed=2), cb, 5)
    st = qim_embed(lat, cb, part, 1e-12, 3)
    assert not st.plan.selected.any()
    assert qim_extract(st, part).size == 0
    assert st.qis == quantize_cover(lat, cb)


@pytest.mark.parametrize("n_bits", [1, 2])
def test_round_trip_and_off_path_equivalence(n_bits):
    cb = make_codebooks((32, 16, 16), (4, 3, 3), seed=1, partition_bits=n_bits)
    part = cnv_partition(cb, n_bits, seed=1)
    rng = np.random.default_rng(0)
    for trial in range(40):
        rate = float(rng.choice([0.2, 0.5, 1.0]))
        lat = gen_latent_sequence(CoverSourceConfig(seed=trial), cb, 60)
        st = qim_embed(lat, cb, part, rate, 1000 + trial)
        assert st.plan.payload.size == st.plan.selected.sum() * 3 * n_bits
        assert np.array_equal(qim_extract(st, part), st.plan.payload)
        cover = quantize_cover(lat, cb)
        changed = np.any(st.qis.indices != cover.indices, axis=0)
        assert not np.any(changed & ~st.plan.selected)


def test_selection_rate_within_binomial_noise():
    cb = make_codebooks((16, 8, 8), (3, 2, 2), seed=0)
    part = cnv_partition(cb, 1)
    lat = gen_latent_sequence(CoverSourceConfig(seed=0), cb, 20000)
    st = qim_embed(lat, cb, part, 0.3, 5)
    sd = np.sqrt(0.3 * 0.7 / 20000)
    assert abs(st.plan.selected.mean() - 0.3) < 4 * sd
    assert st.plan.bits_per_frame == 3
    assert len(st.plan.mask_digest()) == 64


def test_stego_distortion_not_below_cover():
    cb = make_codebooks(seed=0)
    part = cnv_partition(cb, 1)
    gaps = []
    for s in range(100):
        lat = gen_latent_sequence(CoverSourceConfig(seed=s), cb, 50)
        cover = quantize_cover(lat, cb)
        st = qim_embed(lat, cb, part, 0.5, s)
        for i, (v, b) in enumerate(zip(lat.vectors, cb.books)):
            dc = np.linalg.norm(v - b[cover.indices[i]], axis=1)
            ds = np.linalg.norm(v - b[st.qis.indices[i]], axis=1)
            assert np.all(ds >= dc - 1e-12)
            gaps.append((ds - dc).mean())
    assert np.mean(gaps) > 0
