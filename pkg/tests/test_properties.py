"""Invariants checked over generated inputs rather than fixed examples."""

from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from gradcomp.comm import tree_reduce
from gradcomp.compressors import (CompressionContext, decompress,
                                  make_compressor,
                                  water_filling_probabilities)
from gradcomp.catalogs import round_half_up
from gradcomp.linalg import orthogonalize

RELAXED = settings(max_examples=60, deadline=None,
                   suppress_health_check=[HealthCheck.too_slow])

finite_floats = st.floats(min_value=-1e6, max_value=1e6,
                          allow_nan=False, allow_infinity=False)


@st.composite
def small_matrix(draw, max_dim=8):
    n = draw(st.integers(1, max_dim))
    m = draw(st.integers(1, max_dim))
    values = draw(st.lists(finite_floats, min_size=n * m, max_size=n * m))
    return np.array(values).reshape(n, m)


@RELAXED
@given(small_matrix(), st.booleans())
def test_orthogonalize_always_returns_orthonormal_columns(mat, degrade):
    n, m = mat.shape
    r = min(n, m)
    p = mat[:, :r].copy()
    if degrade and r >= 2:
        p[:, 1] = p[:, 0] * 2.0  # force the replacement path
    q = orthogonalize(p)
    assert np.max(np.abs(q.T @ q - np.eye(r))) <= 1e-9


@RELAXED
@given(st.lists(st.floats(min_value=0, max_value=1e9, allow_nan=False),
                min_size=1, max_size=12),
       st.integers(1, 6))
def test_water_filling_mass_and_bounds(sigmas, r):
    sigma = np.array(sorted(sigmas, reverse=True))
    p = water_filling_probabilities(sigma, r)
    k = int(np.count_nonzero(sigma > 0))
    assert np.all(p >= 0) and np.all(p <= 1 + 1e-12)
    assert np.all(np.diff(p) <= 1e-9)  # monotone in sigma
    if k <= r:
        # every positive component is kept outright
        assert np.array_equal(p, (sigma > 0).astype(float))
    else:
        assert abs(float(p.sum()) - r) <= 1e-6


@RELAXED
@given(st.lists(st.integers(-10**9, 10**9), min_size=1, max_size=40))
def test_tree_reduce_of_integers_is_the_exact_sum(values):
    assert tree_reduce(values, lambda a, b: a + b) == sum(values)


@RELAXED
@given(st.integers(0, 10**6), st.integers(1, 10**3))
def test_round_half_up_matches_decimal_reference(num, den):
    got = round_half_up(Fraction(num, den))
    want = int((Decimal(num) / Decimal(den))
               .quantize(Decimal("1"), rounding=ROUND_HALF_UP))
    assert got == want


@RELAXED
@given(small_matrix(), st.integers(1, 4),
       st.sampled_from(["topk", "randomk", "randomblock", "signum"]))
def test_selection_and_sign_schemes_decompress_idempotently(mat, rank, name):
    # re-compressing what decompression produced changes nothing: the kept
    # positions are either context-derived or already the only mass
    comp = make_compressor(name, rank=rank)
    ctx = CompressionContext(shared_seed=17, param_index=0, step=2)
    y1 = decompress(comp.compress(mat, ctx))
    y2 = decompress(comp.compress(y1, ctx))
    assert np.array_equal(y1, y2)


@RELAXED
@given(small_matrix())
def test_signnorm_idempotence_up_to_rounding(mat):
    comp = make_compressor("signnorm")
    ctx = CompressionContext(shared_seed=17)
    y1 = decompress(comp.compress(mat, ctx))
    y2 = decompress(comp.compress(y1, ctx))
    scale = float(np.max(np.abs(y1))) + 1e-30
    assert np.max(np.abs(y2 - y1)) <= 1e-9 * scale


@RELAXED
@given(st.integers(1, 16), st.integers(1, 16), st.integers(1, 20))
def test_payload_bits_never_decrease_with_rank(n, m, rank):
    for name in ("powersgd", "bestapprox", "unbiased", "randomk",
                 "randomblock", "topk", "atomo"):
        lower = make_compressor(name, rank=rank).payload_bits(n, m)
        higher = make_compressor(name, rank=rank + 1).payload_bits(n, m)
        assert higher >= lower, name


@RELAXED
@given(small_matrix(max_dim=6), st.integers(1, 3))
def test_every_scheme_decompresses_to_the_input_shape(mat, rank):
    ctx = CompressionContext(shared_seed=5, step=1)
    for name in ("none", "powersgd", "unbiased", "randomk", "randomblock",
                 "topk", "signnorm", "signum"):
        payload = make_compressor(name, rank=rank).compress(mat, ctx)
        assert decompress(payload).shape == mat.shape, name
