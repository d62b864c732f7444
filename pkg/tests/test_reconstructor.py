import numpy as np
import pytest

from arnet.lstm import LstmParams, LstmState
from arnet.reconstructor import ArnetParams, arnet_loss, arnet_sequence_pass, arnet_step
from arnet.tensor import RngStream, ShapeError

from conftest import max_rel_error, numeric_grads


def random_arnet(r, H_dec, H_ar, bound=0.8):
    cell = LstmParams(r.uniform(-bound, bound, (4 * H_ar, H_dec + H_ar)), r.uniform(-0.5, 0.5, 4 * H_ar))
    return ArnetParams(cell, r.uniform(-bound, bound, (H_dec, H_ar)), r.uniform(-0.5, 0.5, H_dec))


def test_zero_params_reconstruct_zero(rng):
    p = ArnetParams(LstmParams(np.zeros((8, 5)), np.zeros(8)), np.zeros((3, 2)), np.zeros(3))
    _, recon, _ = arnet_step(p, rng.uniform(-1, 1, 3), LstmState.zeros(2))
    assert not np.any(recon)


def test_bias_shortcut_reconstructs_target(rng):
    target = rng.uniform(-1, 1, 3)
    base = random_arnet(rng, 3, 2)
    p = ArnetParams(base.cell, np.zeros((3, 2)), target.copy())
    _, recon, _ = arnet_step(p, rng.uniform(-1, 1, 3), LstmState.zeros(2))
    assert np.array_equal(recon, target)
    assert arnet_loss(recon, target) == 0.0


@pytest.mark.parametrize("recon,prev,expected", [([0.4, -2.0], [0.4, -2.0], 0.0), ([0, 0], [1, 0], 1.0),
                                                 ([0, 0], [1, 2], 5.0)])
def test_loss_is_squared_norm(recon, prev, expected):
    assert arnet_loss(recon, prev) == expected


def test_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        arnet_loss([0, 0], [0, 0, 0])


def test_params_shape_validation(rng):
    with pytest.raises(ShapeError):
        ArnetParams(LstmParams(np.zeros((8, 5)), np.zeros(8)), np.zeros((2, 2)), np.zeros(3))


def test_single_state_has_nothing_to_reconstruct(rng):
    out = arnet_sequence_pass(random_arnet(rng, 3, 2), rng.uniform(-1, 1, (1, 3)))
    assert out.total == 0.0 and out.per_step.shape == (0,)


def test_stationary_target_with_prefit_params(rng):
    h_star = rng.uniform(-1, 1, 3)
    base = random_arnet(rng, 3, 2)
    p = ArnetParams(base.cell, np.zeros((3, 2)), h_star.copy())
    out = arnet_sequence_pass(p, np.tile(h_star, (6, 1)))
    assert out.total == 0.0
    assert not np.any(out.d_hiddens)


def test_total_is_sum_of_step_losses(rng):
    p = random_arnet(rng, 3, 4)
    hs = rng.uniform(-1, 1, (5, 3))
    out = arnet_sequence_pass(p, hs)
    state, expected = LstmState.zeros(4), 0.0
    for t in range(1, 5):
        state, recon, _ = arnet_step(p, hs[t], state)
        expected += arnet_loss(recon, hs[t - 1])
    assert out.total == pytest.approx(expected, rel=1e-13)


def test_batched_pass_matches_sequences(rng):
    p = random_arnet(rng, 3, 2)
    hs = rng.uniform(-1, 1, (4, 2, 3))
    out = arnet_sequence_pass(p, hs)
    for b in range(2):
        one = arnet_sequence_pass(p, hs[:, b])
        np.testing.assert_allclose(out.per_step[:, b], one.per_step, atol=1e-14)
        np.testing.assert_allclose(out.d_hiddens[:, b], one.d_hiddens, atol=1e-14)


def test_mask_drops_pairs_touching_padding(rng):
    p = random_arnet(rng, 3, 2)
    hs = rng.uniform(-1, 1, (5, 2, 3))
    mask = np.array([[1, 1], [1, 1], [1, 1], [1, 0], [1, 0]], dtype=float)
    out = arnet_sequence_pass(p, hs, mask)
    short = arnet_sequence_pass(p, hs[:3, 1])
    assert out.per_step[:, 1].sum() == pytest.approx(short.total, rel=1e-13)
    assert not np.any(out.d_hiddens[3:, 1])


@pytest.mark.parametrize("masked", [False, True])
def test_unrolled_gradients_match_finite_differences(masked):
    r = RngStream(17)
    H_dec, H_ar, T_len, B = 3, 3, 4, 2
    p = random_arnet(r, H_dec, H_ar)
    mask = None
    if masked:
        mask = np.ones((T_len, B))
        mask[3, 0] = 0
    arrays_ = {"T": p.cell.T.copy(), "bias": p.cell.bias.copy(), "w_fc": p.w_fc.copy(), "b_fc": p.b_fc.copy(),
               "hiddens": r.uniform(-1, 1, (T_len, B, H_dec))}

    def make(a):
        return ArnetParams(LstmParams(a["T"], a["bias"]), a["w_fc"], a["b_fc"])

    def loss(a):
        return arnet_sequence_pass(make(a), a["hiddens"], mask, need_grads=False).total

    out = arnet_sequence_pass(make(arrays_), arrays_["hiddens"], mask)
    analytic = {"T": out.grads.cell.T, "bias": out.grads.cell.bias, "w_fc": out.grads.w_fc,
                "b_fc": out.grads.b_fc, "hiddens": out.d_hiddens}
    num = numeric_grads(loss, arrays_)
    for k in arrays_:
        assert max_rel_error(analytic[k], num[k]) <= 1e-4, k
