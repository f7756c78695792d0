from itertools import product

import numpy as np
import pytest

from volseg.autograd import Tape, Tensor, finite_difference_check
from volseg.decoder import (
    CoordinateGrid,
    GridRole,
    NeighborhoodWeights,
    OffsetGradient,
    Onsampling,
    OnsamplingConfig,
    base_grid,
    gather_neighborhood,
    offset_branch,
    onsample_forward,
    weight_branch,
    weighted_sum,
)
from volseg.exceptions import ShapeError
from volseg.nn import Conv3dLayer, trilinear_upsample
from volseg.training import AdamW


@pytest.fixture
def module(rng):
    onsampling = Onsampling(rng, OnsamplingConfig(in_channels=2))
    onsampling.astype(np.float64)
    return onsampling


def corner_average(x, s):
    """Mean of the 8 clamped lattice corners around every base grid point."""
    n, c, d, h, w = x.shape
    axes = [(np.arange(e * s) + 0.5) / s - 0.5 for e in (d, h, w)]
    out = np.zeros((n, c, d * s, h * s, w * s))
    for i, j, k in product(*(range(len(a)) for a in axes)):
        point = (axes[0][i], axes[1][j], axes[2][k])
        total = 0.0
        for step in product((0, 1), repeat=3):
            idx = [
                int(np.clip(np.floor(p) + b, 0, e - 1))
                for p, b, e in zip(point, step, (d, h, w))
            ]
            total = total + x[:, :, idx[0], idx[1], idx[2]]
        out[:, :, i, j, k] = total / 8
    return out


def test_config_defaults_and_channels():
    cfg = OnsamplingConfig(in_channels=64)

    assert (cfg.scale, cfg.neighborhood, cfg.mid_channels) == (2, 2, 16)
    assert cfg.offset_channels == 24
    assert cfg.weight_channels == 64
    assert OnsamplingConfig(in_channels=4).mid_channels == 8
    config = OnsamplingConfig(in_channels=4, scale=3, neighborhood=4)
    assert config.weight_channels == 27 * 64


@pytest.mark.parametrize(
    "kwargs", [{"scale": 0}, {"neighborhood": 3}, {"neighborhood": 0}]
)
def test_config_validation(kwargs):
    with pytest.raises(ShapeError):
        OnsamplingConfig(in_channels=4, **kwargs)


def test_base_grid_cell_midpoints():
    grid = base_grid(2, (4, 2, 2), dtype=np.float64)

    assert grid.role is GridRole.BASE
    assert grid.coords.shape == (4, 2, 2, 3)
    np.testing.assert_allclose(grid.coords.data[:, 0, 0, 0], [-0.25, 0.25, 0.75, 1.25])
    np.testing.assert_allclose(grid.coords.data[0, 1, 0], [-0.25, 0.25, -0.25])


def test_base_grid_unit_scale_is_the_lattice():
    grid = base_grid(1, (3, 3, 3), dtype=np.float64)

    np.testing.assert_allclose(grid.coords.data[2, 1, 0], [2.0, 1.0, 0.0])


def test_compose_checks_roles():
    grid = base_grid(2, (2, 2, 2), dtype=np.float64)
    offset = CoordinateGrid(Tensor(np.zeros((1, 2, 2, 2, 3))), GridRole.OFFSET)

    final = grid.compose(offset)

    assert final.role is GridRole.FINAL
    assert final.coords.shape == (1, 2, 2, 2, 3)
    with pytest.raises(ValueError):
        offset.compose(grid)
    with pytest.raises(ShapeError):
        grid.compose(CoordinateGrid(Tensor(np.zeros((1, 4, 2, 2, 3))), GridRole.OFFSET))


def test_zero_magnitude_gives_zero_offsets(module, random_tensor):
    offsets = offset_branch(random_tensor(1, 2, 3, 3, 3), module.conv1, module.conv2, 2)

    assert offsets.role is GridRole.OFFSET
    assert offsets.coords.shape == (1, 6, 6, 6, 3)
    np.testing.assert_array_equal(offsets.coords.data, 0.0)


def test_offsets_with_neutral_direction(module, random_tensor):
    module.conv1.weight.assign(np.zeros(module.conv1.weight.shape))
    module.conv2.bias.assign(np.full(module.conv2.bias.shape, 2.0))

    offsets = offset_branch(random_tensor(1, 2, 3, 3, 3), module.conv1, module.conv2, 2)

    # 0.5 · sigmoid(0) · 2
    np.testing.assert_allclose(offsets.coords.data, 0.5)


def test_offset_branch_channel_mismatch(rng, module, random_tensor):
    wrong = Conv3dLayer(rng, 2, 3, kernel=3)

    with pytest.raises(ShapeError, match="3·s³"):
        offset_branch(random_tensor(1, 2, 3, 3, 3), module.conv1, wrong, 2)


def test_offset_branch_gradcheck(module, random_tensor):
    x = random_tensor(1, 2, 3, 3, 3, name="x")
    module.conv2.weight.assign(0.3 * np.ones(module.conv2.weight.shape))
    projection = random_tensor(1, 6, 6, 6, 3)

    def f():
        offsets = offset_branch(x, module.conv1, module.conv2, 2)
        return (offsets.coords * projection).sum()

    params = {
        "x": x,
        "conv1.weight": module.conv1.weight,
        "conv2.weight": module.conv2.weight,
        "conv2.bias": module.conv2.bias,
    }
    report = finite_difference_check(f, params, max_elements=40)

    assert report.passed(1e-6), report.per_param


def test_zero_encoder_gives_uniform_weights(module, random_tensor):
    x = random_tensor(2, 2, 3, 3, 3)
    weights = weight_branch(x, module.compress, module.encode, 2, 2)

    assert weights.weights.shape == (2, 8, 6, 6, 6)
    np.testing.assert_allclose(weights.weights.data, 1 / 8)


def test_weights_are_normalized(module, random_tensor, rng):
    module.encode.weight.assign(rng.standard_normal(module.encode.weight.shape))

    x = random_tensor(1, 2, 3, 3, 3)
    weights = weight_branch(x, module.compress, module.encode, 2, 2)

    assert np.all(weights.weights.data >= 0)
    np.testing.assert_allclose(weights.weights.data.sum(axis=1), 1.0, atol=1e-6)


def test_weight_branch_channel_arithmetic(rng, module, random_tensor):
    encode = Conv3dLayer(rng, module.encode.spec.in_channels, 16, kernel=3)

    with pytest.raises(ShapeError, match="s³·n³"):
        weight_branch(random_tensor(1, 2, 3, 3, 3), module.compress, encode, 2, 2)


def test_gather_integral_coordinates(random_tensor):
    x = random_tensor(1, 2, 4, 4, 4)
    coords = np.array([[[[[1.0, 2.0, 3.0]]]]])

    gathered = gather_neighborhood(x, CoordinateGrid(Tensor(coords), GridRole.FINAL), 2)

    assert gathered.shape == (1, 2, 8, 1, 1, 1)
    np.testing.assert_array_equal(
        gathered.data[0, :, 0, 0, 0, 0], x.data[0, :, 1, 2, 3]
    )
    # neighbor (a·n + b)·n + c sits at floor(S) + (a, b, c), clamped at the border
    np.testing.assert_array_equal(
        gathered.data[0, :, 7, 0, 0, 0], x.data[0, :, 2, 3, 3]
    )


def test_gather_clamps_negative_coordinates(random_tensor):
    x = random_tensor(1, 1, 3, 3, 3)
    coords = np.full((1, 1, 1, 1, 3), -5.0)

    gathered = gather_neighborhood(x, CoordinateGrid(Tensor(coords), GridRole.FINAL), 2)

    np.testing.assert_array_equal(gathered.data.reshape(-1), x.data[0, 0, 0, 0, 0])


def test_gather_matches_corner_enumeration(rng, random_tensor):
    x = random_tensor(2, 3, 4, 5, 3)
    coords = rng.uniform(-1.0, 5.0, size=(2, 2, 3, 2, 3))

    gathered = gather_neighborhood(x, CoordinateGrid(Tensor(coords), GridRole.FINAL), 2)

    extent = np.array(x.shape[2:])
    for b, i, j, k in product(range(2), range(2), range(3), range(2)):
        point = coords[b, i, j, k]
        for neighbor, step in enumerate(product((0, 1), repeat=3)):
            idx = np.clip(np.floor(point).astype(int) + step, 0, extent - 1)
            np.testing.assert_array_equal(
                gathered.data[b, :, neighbor, i, j, k],
                x.data[b, :, idx[0], idx[1], idx[2]],
            )


def test_gather_rejects_odd_neighborhood(random_tensor):
    grid = CoordinateGrid(Tensor(np.zeros((1, 1, 1, 1, 3))), GridRole.FINAL)

    with pytest.raises(ShapeError):
        gather_neighborhood(random_tensor(1, 1, 2, 2, 2), grid, 3)


def test_untrained_onsampling_is_the_corner_average(module, random_tensor):
    x = random_tensor(2, 2, 3, 4, 2)

    out = module(x)

    assert out.shape == (2, 2, 6, 8, 4)
    np.testing.assert_allclose(out.data, corner_average(x.data, 2), atol=1e-12)


def test_untrained_onsampling_preserves_constants(module):
    out = module(Tensor(np.full((1, 2, 3, 3, 3), -1.5)))

    np.testing.assert_allclose(out.data, -1.5)


def test_trilinear_weights_reproduce_trilinear_upsampling(random_tensor):
    x = random_tensor(1, 3, 3, 4, 3)
    s = 2
    grid = base_grid(s, [e * s for e in x.shape[2:]], dtype=np.float64)

    frac = grid.coords.data - np.floor(grid.coords.data)
    corner_weights = []
    for step in product((0, 1), repeat=3):
        axis_weights = [
            frac[..., a] if bit else 1 - frac[..., a] for a, bit in enumerate(step)
        ]
        corner_weights.append(np.prod(axis_weights, axis=0))
    weights = np.stack(corner_weights)[None]

    final = grid.compose(
        CoordinateGrid(Tensor(np.zeros((1, *grid.coords.shape))), GridRole.OFFSET)
    )
    out = weighted_sum(
        gather_neighborhood(x, final, 2), NeighborhoodWeights(Tensor(weights))
    )

    np.testing.assert_allclose(out.data, trilinear_upsample(x, s).data, atol=1e-6)


def test_unit_scale_selecting_corner_zero_is_identity(rng, random_tensor):
    module = Onsampling(rng, OnsamplingConfig(in_channels=2, scale=1))
    module.astype(np.float64)
    bias = np.zeros(module.encode.bias.shape)
    bias[0] = 40.0
    module.encode.bias.assign(bias)
    x = random_tensor(1, 2, 3, 3, 3)

    np.testing.assert_allclose(module(x).data, x.data, atol=1e-12)


def test_dominant_neighbor_is_selected(module, random_tensor):
    # with s = 2 the shuffled channel j·s³ + sub-pixel holds the logit of neighbor j
    bias = np.zeros(module.encode.bias.shape)
    bias[3 * 8 : 4 * 8] = 20.0
    module.encode.bias.assign(bias)
    x = random_tensor(1, 2, 3, 3, 3)

    out = module(x)

    grid = base_grid(2, (6, 6, 6), dtype=np.float64)
    offsets = CoordinateGrid(Tensor(np.zeros((1, 6, 6, 6, 3))), GridRole.OFFSET)
    final = grid.compose(offsets)
    gathered = gather_neighborhood(x, final, 2)
    np.testing.assert_allclose(out.data, gathered.data[:, :, 3], atol=1e-3)


def test_output_is_a_convex_combination(module, rng, random_tensor):
    module.conv2.weight.assign(0.5 * rng.standard_normal(module.conv2.weight.shape))
    module.encode.weight.assign(rng.standard_normal(module.encode.weight.shape))
    x = random_tensor(2, 2, 3, 3, 3)

    out = module(x).data

    for b, c in product(range(2), range(2)):
        assert out[b, c].min() >= x.data[b, c].min() - 1e-12
        assert out[b, c].max() <= x.data[b, c].max() + 1e-12


def test_channels_stay_separate(module, random_tensor):
    x = random_tensor(1, 2, 3, 3, 3)
    changed = x.data.copy()
    changed[:, 1] += 10.0

    before = module(x).data
    after = module(Tensor(changed)).data

    np.testing.assert_array_equal(before[:, 0], after[:, 0])
    assert not np.allclose(before[:, 1], after[:, 1])


def test_onsample_forward_channel_mismatch(module, random_tensor):
    with pytest.raises(ShapeError):
        onsample_forward(random_tensor(1, 3, 3, 3, 3), module.config, module)


@pytest.fixture
def frozen_offsets(rng):
    config = OnsamplingConfig(in_channels=2, offset_gradient=OffsetGradient.NONE)
    onsampling = Onsampling(rng, config)
    onsampling.astype(np.float64)
    return onsampling


def test_offset_gradient_default():
    config = OnsamplingConfig(in_channels=2)
    assert config.offset_gradient is OffsetGradient.STRAIGHT_THROUGH
    assert OnsamplingConfig(in_channels=2, offset_gradient="none").offset_gradient is (
        OffsetGradient.NONE
    )


def test_straight_through_gradient_follows_a_linear_field(rng):
    # x = 2·w + c along every channel: the slope is exact, borders included
    w_axis = np.arange(5, dtype=np.float64)
    x = np.broadcast_to(2.0 * w_axis, (1, 3, 4, 4, 5)) + np.arange(3).reshape(
        1, 3, 1, 1, 1
    )
    coords = rng.uniform(0.0, 3.0, size=(1, 2, 2, 2, 3))
    S = CoordinateGrid(Tensor(coords, requires_grad=True), GridRole.FINAL)
    raw = rng.uniform(0.1, 1.0, size=(1, 8, 2, 2, 2))
    weights = NeighborhoodWeights(Tensor(raw / raw.sum(axis=1, keepdims=True)))

    with Tape(np.float64) as tape:
        gathered = gather_neighborhood(Tensor(x), S, 2, straight_through=True)
        loss = weighted_sum(gathered, weights).sum()
    tape.backward(loss)

    grad = S.coords.grad
    np.testing.assert_allclose(grad[..., 2], 2.0 * 3, atol=1e-12)
    np.testing.assert_allclose(grad[..., :2], 0.0, atol=1e-12)


def test_gather_sends_nothing_to_coordinates_by_default(rng, random_tensor):
    coords = rng.uniform(0.0, 2.0, size=(1, 2, 2, 2, 3))
    S = CoordinateGrid(Tensor(coords, requires_grad=True), GridRole.FINAL)
    x = random_tensor(1, 2, 3, 3, 3, requires_grad=True)

    with Tape(np.float64) as tape:
        loss = gather_neighborhood(x, S, 2).sum()
    tape.backward(loss)

    assert S.coords.grad is None
    assert np.any(x.grad != 0)


def test_offset_branch_trains(module, random_tensor):
    x = random_tensor(1, 2, 3, 3, 3)
    target = random_tensor(1, 2, 6, 6, 6)
    optimizer = AdamW(list(module.named_parameters()), weight_decay=0.0)

    for _ in range(5):
        optimizer.zero_grad()
        with Tape(np.float64) as tape:
            diff = module(x) - target
            loss = (diff * diff).mean()
        tape.backward(loss)
        optimizer.step(1e-2)

    assert np.abs(module.conv2.weight.data).max() > 0
    assert np.abs(module.conv1.weight.grad).max() > 0


def test_frozen_offsets_get_no_gradient(frozen_offsets, rng, random_tensor):
    module = frozen_offsets
    module.conv2.weight.assign(0.3 * rng.standard_normal(module.conv2.weight.shape))
    x = random_tensor(1, 2, 3, 3, 3)
    module.zero_grad()

    with Tape(np.float64) as tape:
        loss = module(x).sum()
    tape.backward(loss)

    np.testing.assert_array_equal(module.conv1.weight.grad, 0.0)
    np.testing.assert_array_equal(module.conv2.weight.grad, 0.0)
    assert np.any(module.compress.weight.grad != 0) or np.any(
        module.encode.weight.grad != 0
    )


def test_onsampling_gradcheck(frozen_offsets, rng, random_tensor):
    module = frozen_offsets
    module.conv2.weight.assign(0.3 * rng.standard_normal(module.conv2.weight.shape))
    module.encode.weight.assign(0.1 * rng.standard_normal(module.encode.weight.shape))
    x = random_tensor(1, 2, 3, 3, 3, name="x")
    projection = random_tensor(1, 2, 6, 6, 6)

    params = {"x": x, **dict(module.named_parameters())}
    report = finite_difference_check(
        lambda: (module(x) * projection).sum(), params, max_elements=30
    )

    assert report.passed(1e-5), report.per_param
