import numpy as np
import pytest

from stratdepth.dvlora import (
    DvLoraLayer,
    adapter_delta,
    effective_weight,
    finite_difference_check,
    forward,
    gradients,
    init_layer,
    load_layer,
    merge,
    save_layer,
    trainable_param_count,
    unmerge,
)
from stratdepth.errors import FormatError, RankError, ShapeError


def random_layer(rng, d_in=5, d_out=4, rank=2):
    return DvLoraLayer(
        w0=rng.standard_normal((d_out, d_in)),
        a=rng.standard_normal((rank, d_in)),
        b=rng.standard_normal((d_out, rank)),
        lambda_u=rng.standard_normal(rank),
        lambda_v=rng.standard_normal(d_out),
    )


def dense_weight_via_diagonals(layer):
    # oracle: materialize the diagonal matrices explicitly
    return layer.w0 + np.diag(layer.lambda_v) @ layer.b @ np.diag(layer.lambda_u) @ layer.a


class TestInit:
    def test_fresh_layer_passes_through_w0(self):
        rng = np.random.default_rng(0)
        w0 = rng.standard_normal((6, 4))
        layer = init_layer(w0, rank=3, seed=1)
        assert np.array_equal(effective_weight(layer), w0)
        assert np.all(layer.b == 0.0)
        assert np.all(layer.lambda_u == 1.0)
        assert np.all(layer.lambda_v == 1.0)

    def test_rank_bounds(self):
        w0 = np.zeros((4, 6))
        init_layer(w0, rank=4)  # rank == min(d_in, d_out) accepted
        with pytest.raises(RankError):
            init_layer(w0, rank=5)
        with pytest.raises(RankError):
            init_layer(w0, rank=0)

    def test_same_seed_is_bitwise_identical(self):
        w0 = np.ones((3, 3))
        l1 = init_layer(w0, rank=2, seed=7)
        l2 = init_layer(w0, rank=2, seed=7)
        assert np.array_equal(l1.a, l2.a)

    def test_gaussian_scale_tracks_fan_in(self):
        w0 = np.zeros((4, 10000))
        layer = init_layer(w0, rank=2, seed=3)
        assert layer.a.std() == pytest.approx(1 / np.sqrt(10000), rel=0.05)


class TestEffectiveWeight:
    def test_2x2_hand_case(self):
        layer = DvLoraLayer(
            w0=np.eye(2),
            a=np.array([[0.0, 1.0]]),
            b=np.array([[1.0], [0.0]]),
            lambda_u=np.ones(1),
            lambda_v=np.ones(2),
        )
        assert effective_weight(layer).tolist() == [[1.0, 1.0], [0.0, 1.0]]
        assert np.array_equal(effective_weight(layer), dense_weight_via_diagonals(layer))

    def test_zero_b_passes_through(self):
        rng = np.random.default_rng(1)
        layer = random_layer(rng)
        zeroed = DvLoraLayer(layer.w0, layer.a, np.zeros_like(layer.b), layer.lambda_u, layer.lambda_v)
        assert np.array_equal(effective_weight(zeroed), layer.w0)

    def test_matches_explicit_diagonal_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            layer = random_layer(rng, d_in=int(rng.integers(1, 9)), d_out=int(rng.integers(1, 9)), rank=1)
            assert np.abs(effective_weight(layer) - dense_weight_via_diagonals(layer)).max() < 1e-12

    def test_scaling_lambda_u_by_power_of_two_scales_delta_exactly(self):
        # exponent shifts commute with every rounding, so the update term
        # doubles bitwise; non-dyadic factors scale it to within roundoff
        rng = np.random.default_rng(3)
        layer = random_layer(rng)
        delta = adapter_delta(layer)
        doubled = DvLoraLayer(layer.w0, layer.a, layer.b, 2.0 * layer.lambda_u, layer.lambda_v)
        assert np.array_equal(adapter_delta(doubled), 2.0 * delta)
        tripled = DvLoraLayer(layer.w0, layer.a, layer.b, 3.0 * layer.lambda_u, layer.lambda_v)
        assert np.abs(adapter_delta(tripled) - 3.0 * delta).max() < 1e-12

    def test_linearity_in_each_factor(self):
        rng = np.random.default_rng(4)
        layer = random_layer(rng)
        other_a = rng.standard_normal(layer.a.shape)
        lhs = effective_weight(DvLoraLayer(layer.w0, layer.a + other_a, layer.b, layer.lambda_u, layer.lambda_v))
        rhs = (
            effective_weight(layer)
            + effective_weight(DvLoraLayer(layer.w0, other_a, layer.b, layer.lambda_u, layer.lambda_v))
            - layer.w0
        )
        assert np.abs(lhs - rhs).max() < 1e-12


class TestForward:
    def test_zero_input_gives_zero(self):
        rng = np.random.default_rng(5)
        layer = random_layer(rng)
        assert np.all(forward(layer, np.zeros(layer.d_in)) == 0.0)

    def test_factored_path_matches_dense(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            layer = random_layer(rng)
            x = rng.standard_normal(layer.d_in)
            dense = effective_weight(layer) @ x
            assert np.abs(forward(layer, x) - dense).max() < 1e-12

    def test_batch_columns_equal_per_vector_forward(self):
        # BLAS kernels for (d, k) and (d, 1) differ in summation order, so
        # consistency holds at the forward contract's 1e-12, not bitwise
        rng = np.random.default_rng(7)
        layer = random_layer(rng)
        xb = rng.standard_normal((layer.d_in, 6))
        yb = forward(layer, xb)
        for j in range(6):
            assert np.abs(yb[:, j] - forward(layer, xb[:, j])).max() < 1e-12

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(8)
        layer = random_layer(rng)
        with pytest.raises(ShapeError):
            forward(layer, np.zeros(layer.d_in + 1))


class TestGradients:
    def test_zero_upstream_zeroes_everything(self):
        rng = np.random.default_rng(9)
        layer = random_layer(rng)
        x = rng.standard_normal((layer.d_in, 3))
        grads = gradients(layer, x, np.zeros((layer.d_out, 3)))
        for name in ("a", "b", "lambda_u", "lambda_v"):
            assert np.all(getattr(grads, name) == 0.0)

    def test_zero_lambda_u_cuts_the_chain_to_a(self):
        rng = np.random.default_rng(10)
        layer = random_layer(rng)
        cut = DvLoraLayer(layer.w0, layer.a, layer.b, np.zeros(layer.rank), layer.lambda_v)
        x = rng.standard_normal((layer.d_in, 4))
        upstream = rng.standard_normal((layer.d_out, 4))
        grads = gradients(cut, x, upstream)
        assert np.all(grads.a == 0.0)
        assert np.abs(grads.lambda_u).max() > 0.0

    def test_no_w0_gradient_field_exists(self):
        rng = np.random.default_rng(11)
        layer = random_layer(rng)
        grads = gradients(layer, rng.standard_normal(layer.d_in), rng.standard_normal(layer.d_out))
        assert not hasattr(grads, "w0")
        assert set(grads.__dataclass_fields__) == {"a", "b", "lambda_u", "lambda_v"}

    def test_finite_difference_agreement_small_case(self):
        rng = np.random.default_rng(12)
        layer = random_layer(rng, d_in=5, d_out=4, rank=2)
        x = rng.standard_normal((5, 3))
        upstream = rng.standard_normal((4, 3))
        errors = finite_difference_check(layer, x, upstream, step=1e-5)
        assert max(errors.values()) < 1e-6

    def test_shape_mismatch(self):
        rng = np.random.default_rng(13)
        layer = random_layer(rng)
        with pytest.raises(ShapeError):
            gradients(layer, np.zeros((layer.d_in, 3)), np.zeros((layer.d_out, 2)))


class TestParamCount:
    def test_formula_expansion(self):
        assert trainable_param_count(4, 4, 2) == 22
        assert trainable_param_count(1, 1, 1) == 4

    def test_matches_tensor_enumeration(self):
        rng = np.random.default_rng(14)
        for _ in range(10):
            d_in = int(rng.integers(1, 12))
            d_out = int(rng.integers(1, 12))
            rank = int(rng.integers(1, min(d_in, d_out) + 1))
            layer = init_layer(rng.standard_normal((d_out, d_in)), rank, seed=0)
            enumerated = layer.a.size + layer.b.size + layer.lambda_u.size + layer.lambda_v.size
            assert trainable_param_count(d_in, d_out, rank) == enumerated

    def test_rank_bounds(self):
        with pytest.raises(RankError):
            trainable_param_count(4, 4, 5)


class TestMergeUnmerge:
    def test_fresh_init_has_zero_delta(self):
        layer = init_layer(np.random.default_rng(15).standard_normal((4, 5)), rank=2, seed=0)
        merged, delta = merge(layer)
        assert np.array_equal(merged, layer.w0)
        assert np.all(delta == 0.0)

    def test_forward_through_merged_matches_factored(self):
        rng = np.random.default_rng(16)
        layer = random_layer(rng)
        merged, _ = merge(layer)
        x = rng.standard_normal(layer.d_in)
        assert np.abs(merged @ x - forward(layer, x)).max() < 1e-12

    def test_unmerge_recovers_w0_bitwise_in_small_update_regime(self):
        # with every update entry below half the base entry the subtraction
        # merged - w0 is exact (Sterbenz), so recovery is bit-for-bit
        rng = np.random.default_rng(17)
        base = random_layer(rng)
        layer = DvLoraLayer(
            w0=rng.uniform(1.0, 2.0, (base.d_out, base.d_in)),
            a=1e-3 * base.a,
            b=base.b,
            lambda_u=base.lambda_u,
            lambda_v=base.lambda_v,
        )
        assert np.abs(adapter_delta(layer)).max() < 0.5
        merged, delta = merge(layer)
        w0_back = unmerge(merged, delta)
        assert np.array_equal(w0_back, layer.w0)
        relayer = DvLoraLayer(w0_back, layer.a, layer.b, layer.lambda_u, layer.lambda_v)
        merged2, delta2 = merge(relayer)
        assert np.array_equal(merged2, merged)
        assert np.array_equal(delta2, delta)

    def test_unmerge_close_for_general_layers(self):
        rng = np.random.default_rng(18)
        for _ in range(10):
            layer = random_layer(rng)
            merged, delta = merge(layer)
            assert np.abs(unmerge(merged, delta) - layer.w0).max() < 1e-12


class TestOperationCounts:
    @staticmethod
    def counted_forward(layer, x_cols):
        """Loop forward that counts multiply-accumulates on each path."""
        d_out, d_in, r = layer.d_out, layer.d_in, layer.rank
        k = x_cols.shape[1]
        frozen_macs = 0
        extra_macs = 0
        out = np.zeros((d_out, k))
        for col in range(k):
            x = x_cols[:, col]
            z = np.zeros(r)
            for i in range(r):
                for j in range(d_in):
                    z[i] += layer.a[i, j] * x[j]
                    extra_macs += 1
                z[i] *= layer.lambda_u[i]
                extra_macs += 1
            m = np.zeros(d_out)
            for i in range(d_out):
                for j in range(r):
                    m[i] += layer.b[i, j] * z[j]
                    extra_macs += 1
                m[i] *= layer.lambda_v[i]
                extra_macs += 1
            for i in range(d_out):
                acc = 0.0
                for j in range(d_in):
                    acc += layer.w0[i, j] * x[j]
                    frozen_macs += 1
                out[i, col] = acc + m[i]
                extra_macs += 1
        return out, frozen_macs, extra_macs

    def test_extra_cost_is_linear_in_rank(self):
        rng = np.random.default_rng(18)
        d_in, d_out, k = 6, 5, 3
        for rank in (1, 2, 3, 4, 5):
            layer = random_layer(rng, d_in=d_in, d_out=d_out, rank=rank)
            x = rng.standard_normal((d_in, k))
            out, frozen, extra = self.counted_forward(layer, x)
            assert frozen == d_out * d_in * k
            assert extra == k * (rank * (d_in + d_out + 1) + 2 * d_out)
            assert np.abs(out - forward(layer, x)).max() < 1e-12


class TestSaveLoad:
    def test_round_trip_is_bitwise(self, tmp_path):
        rng = np.random.default_rng(19)
        layer = random_layer(rng)
        path = tmp_path / "layer.json"
        save_layer(path, layer)
        loaded = load_layer(path)
        for name in ("w0", "a", "b", "lambda_u", "lambda_v"):
            assert np.array_equal(getattr(loaded, name), getattr(layer, name))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text('{"format": "something-else", "version": 1}')
        with pytest.raises(FormatError):
            load_layer(path)
