from itertools import combinations

import numpy as np
import pytest

from pwfn.codebook import (BaseSetConfig, Codebook, generate_additive_set, generate_base_set, is_representable,
                           projected_size)
from pwfn.errors import CodebookError, ConfigError


def brute_force_set(base_values, omega):
    elements = [v for v in base_values if v != 0]
    sums = {0.0}
    for k in range(1, omega + 1):
        for subset in combinations(elements, k):
            sums.add(float(sum(subset)))
    return sorted(sums)


def test_base_set_b2():
    """Test the b=2, j=0 base set"""
    assert generate_base_set(BaseSetConfig(2, 0)).tolist() == [-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0]


def test_base_set_single_exponent():
    """Test b=j=0 gives {-1, 0, 1}"""
    assert generate_base_set(BaseSetConfig(0, 0)).tolist() == [-1.0, 0.0, 1.0]


def test_base_set_b30():
    """Test b=30 has 63 elements down to 2^-30"""
    values = generate_base_set(BaseSetConfig(30, 0))
    assert values.size == 63
    assert values[values > 0].min() == 2.0 ** -30


def test_base_set_top_j():
    """Test j drops the largest powers"""
    values = generate_base_set(BaseSetConfig(3, 1))
    assert values.max() == 0.5
    assert values[values > 0].min() == 0.125


def test_base_set_validation():
    """Test invalid b and j are codebook errors"""
    with pytest.raises(CodebookError):
        BaseSetConfig(2, 3)
    with pytest.raises(CodebookError):
        BaseSetConfig(-1, 0)
    assert issubclass(CodebookError, ConfigError)


def test_order_one_is_base_set():
    """Test order 1 gives the base set itself"""
    base = BaseSetConfig(4, 0)
    assert generate_additive_set(base, 1).centers.tolist() == generate_base_set(base).tolist()


def test_order_two_b1():
    """Test order 2 over {-1, -0.5, 0, 0.5, 1}"""
    centers = generate_additive_set(BaseSetConfig(1, 0), 2).centers.tolist()
    assert centers == [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5]


def test_pairwise_sums_in_order_two():
    """Test every two-term power-of-two sum at b=4 appears in order 2"""
    base = BaseSetConfig(4, 0)
    codebook = generate_additive_set(base, 2)
    values = generate_base_set(base)
    for a, b in combinations(values[values != 0], 2):
        assert float(a + b) in codebook


def test_matches_brute_force_enumeration():
    """Test generated codebooks equal exhaustive subset sums for b <= 4, order <= 3"""
    for b in range(0, 5):
        for j in range(0, b + 1):
            base = BaseSetConfig(b, j)
            for omega in range(1, 4):
                expected = brute_force_set(generate_base_set(base).tolist(), omega)
                assert generate_additive_set(base, omega).centers.tolist() == expected


def test_orders_are_nested_and_symmetric():
    """Test each order contains the previous one and is symmetric about zero"""
    base = BaseSetConfig(4, 0)
    previous = set()
    for omega in range(1, 6):
        centers = set(generate_additive_set(base, omega).centers_units)
        assert previous <= centers
        assert centers == {-c for c in centers}
        previous = centers


def test_projected_size_bounds_actual_size():
    """Test the projection never undercounts"""
    base = BaseSetConfig(4, 1)
    for omega in range(1, 6):
        assert generate_additive_set(base, omega).size <= projected_size(base, omega)


def test_blowup_guard():
    """Test orders projecting past the cap are refused"""
    with pytest.raises(CodebookError):
        generate_additive_set(BaseSetConfig(8, 0), 4, max_centers=1000)
    with pytest.raises(CodebookError):
        generate_additive_set(BaseSetConfig(2, 0), 0)


def test_representable_known_decomposition():
    """Test 0.75 is 0.5 + 0.25 at order 2"""
    for b in (2, 4, 8):
        ok, witness = is_representable(0.75, BaseSetConfig(b, 0), 2)
        assert ok
        assert sorted(witness) == [0.25, 0.5]


def test_not_representable():
    """Test 0.3 is not reachable at b=4, order 2"""
    assert is_representable(0.3, BaseSetConfig(4, 0), 2) == (False, ())
    assert not is_representable(0.6875, BaseSetConfig(4, 0), 2)[0]
    assert is_representable(0.6875, BaseSetConfig(4, 0), 3)[0]


def test_zero_is_the_empty_sum():
    """Test zero is representable with an empty witness"""
    assert is_representable(0.0, BaseSetConfig(3, 0), 1) == (True, ())


def test_every_center_is_representable():
    """Test every generated center passes at its own order with a valid witness"""
    base = BaseSetConfig(4, 0)
    for omega in (1, 2, 3):
        for center in generate_additive_set(base, omega).centers:
            ok, witness = is_representable(float(center), base, omega)
            assert ok
            assert len(witness) <= omega
            assert len(set(witness)) == len(witness)
            assert sum(witness) == center


def test_witness_prefers_fewest_terms():
    """Test a base element is its own single-term witness"""
    assert is_representable(-0.5, BaseSetConfig(4, 0), 3) == (True, (-0.5,))


def test_lattice_index_stable_across_orders():
    """Test a center keeps its lattice index when the order grows"""
    base = BaseSetConfig(4, 0)
    low = generate_additive_set(base, 1)
    high = generate_additive_set(base, 3)
    for center in low.centers:
        assert low.lattice_index(center) == high.lattice_index(center)
        assert high.value_at(high.lattice_index(center)) == center
    assert high.lattice_index(-base.to_value(base.lattice_span)) == 0
    with pytest.raises(CodebookError):
        high.lattice_index(0.3)


def test_codebook_dict_round_trip():
    """Test codebook serialisation keeps fixed-point centers"""
    codebook = generate_additive_set(BaseSetConfig(3, 1), 2)
    restored = Codebook.from_dict(codebook.to_dict())
    assert restored == codebook
    assert np.array_equal(restored.centers, codebook.centers)


def test_to_units_rejects_off_grid():
    """Test values off the 2^-b grid have no fixed-point form"""
    base = BaseSetConfig(4, 0)
    assert base.to_units(0.3) is None
    assert base.to_units(-0.6875) == -11
