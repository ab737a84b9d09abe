import numpy as np
import pytest

import oracles
from smasnn import sma as sm
from smasnn.errors import ConfigError, ShapeError
from smasnn.sma import SMA, SmaConfig, SmaTrace, decoder_param_count, sma_param_count
from smasnn.tensor import Value, gradcheck


def make(c=4, t=4, n=4, cr=2, tr=2, seed=0, **kw):
    cfg = SmaConfig(kernel_sizes=tuple(range(1, 2 * n, 2)), channel_reduction=cr, time_reduction=tr, **kw)
    return SMA(c, t, cfg, np.random.default_rng(seed))


def randomize(s, rng):
    """Non-trivial BN affine and biases so every path is exercised."""
    for g, b in zip(s.enc_gamma, s.enc_beta):
        g.data[:] = rng.uniform(0.5, 1.5, g.shape)
        b.data[:] = rng.normal(0, 0.3, b.shape)
    for p in [s.t_squeeze_b, s.c_squeeze_b, *s.t_excite_b, *s.c_excite_b]:
        p.data[:] = rng.normal(0, 0.3, p.shape)


def lists(vals):
    return [v.data.tolist() for v in vals]


def oracle_forward(s, x):
    m, y = oracles.encode(x.tolist(), lists(s.enc_w), lists(s.enc_gamma), lists(s.enc_beta))
    wa = oracles.t_mse(y, s.t_squeeze_w.data.tolist(), s.t_squeeze_b.data.tolist(),
                       lists(s.t_excite_w), lists(s.t_excite_b))
    wb = oracles.c_mse(y, s.c_squeeze_w.data.tolist(), s.c_squeeze_b.data.tolist(),
                       lists(s.c_excite_w), lists(s.c_excite_b))
    return m, y, wa, wb, oracles.apply(m, wa, wb)


@pytest.mark.parametrize("shape,n", [((4, 4, 5, 5), 4), ((2, 2, 3, 4), 2), ((6, 8, 4, 3), 3)])
def test_pieces_match_loop_oracle(shape, n):
    t, c, h, w = shape
    rng = np.random.default_rng(t * 100 + c)
    s = make(c=c, t=t, n=n, cr=2, tr=2)
    randomize(s, rng)
    x = rng.normal(size=shape)
    m, y = sm.encode(Value(x), s)
    wa, wb = sm.t_mse(y, s), sm.c_mse(y, s)
    z = sm.apply(m, wa, wb)
    om, oy, owa, owb, oz = oracle_forward(s, x)
    assert np.max(np.abs(m.data - np.array(om))) < 1e-10
    assert np.max(np.abs(y.data - np.array(oy))) < 1e-10
    assert np.max(np.abs(wa.data[..., 0] - np.array(owa))) < 1e-10
    assert np.max(np.abs(wb.data[..., 0] - np.array(owb))) < 1e-10
    assert np.max(np.abs(z.data - np.array(oz))) < 1e-10


def test_batched_equals_per_sample_with_eval_stats():
    rng = np.random.default_rng(1)
    s = make(c=4, t=4)
    randomize(s, rng)
    for mean, var in zip(s.enc_mean, s.enc_var):
        mean[:] = rng.normal(size=4)
        var[:] = rng.uniform(0.5, 2.0, size=4)
    s.eval()
    x = rng.normal(size=(3, 4, 4, 5, 5))
    zb, wab, wbb = sm.sma_forward(Value(x), s)
    for i in range(3):
        zi, wai, wbi = sm.sma_forward(Value(x[i]), s)
        assert np.allclose(zb.data[i], zi.data, atol=1e-12)
        assert np.allclose(wab.data[i], wai.data) and np.allclose(wbb.data[i], wbi.data)


def test_shape_law():
    s = make(c=2, t=4, cr=1, tr=1)
    z, wa, wb = sm.sma_forward(Value(np.random.default_rng(0).normal(size=(4, 2, 8, 8))), s)
    assert z.shape == (4, 2, 8, 8) and wa.shape == (4, 4, 1) and wb.shape == (4, 4, 2, 1)


def test_scale_softmax_sums():
    rng = np.random.default_rng(2)
    s = make(c=8, t=6, n=4, cr=4, tr=3)
    randomize(s, rng)
    _, wa, wb = sm.sma_forward(Value(rng.normal(size=(2, 6, 8, 4, 4))), s)
    assert np.all(np.abs(wa.data.sum(axis=1) - 1) < 1e-10)
    assert np.all(np.abs(wb.data.sum(axis=2) - 1) < 1e-10)


def test_duplicate_scales_collapse():
    rng = np.random.default_rng(3)
    s = make(c=4, t=4, n=2)
    s.enc_w[1].data = np.zeros_like(s.enc_w[1].data)
    s.enc_w[1].data[:, :, 1, 1] = s.enc_w[0].data[:, :, 0, 0]  # 3x3 kernel equal to the 1x1 one
    m, y = sm.encode(Value(rng.normal(size=(4, 4, 5, 5))), s)
    assert np.allclose(m.data[0], m.data[1], atol=1e-12) and np.allclose(y.data, m.data[0], atol=1e-12)


def test_zero_input_relu_encoder_is_zero():
    s = make()
    _, y = sm.encode(Value(np.zeros((4, 4, 3, 3))), s)
    assert not y.data.any()


def test_identical_excitations_give_uniform_weights():
    rng = np.random.default_rng(4)
    s = make(n=3)
    for group in (s.t_excite_w, s.t_excite_b, s.c_excite_w, s.c_excite_b):
        for p in group[1:]:
            p.data = group[0].data.copy()
    y = Value(rng.normal(size=(4, 4, 3, 3)))
    assert np.allclose(sm.t_mse(y, s).data, 1 / 3) and np.allclose(sm.c_mse(y, s).data, 1 / 3)


def test_tied_parameters_reduce_to_encoder_mean():
    rng = np.random.default_rng(5)
    s = make(n=3)
    for group in (s.t_excite_w, s.t_excite_b, s.c_excite_w, s.c_excite_b):
        for p in group[1:]:
            p.data = group[0].data.copy()
    x = Value(rng.normal(size=(4, 4, 3, 3)))
    m, y = sm.encode(x, s)
    z, _, _ = sm.sma_forward(x, s)
    # uniform weights 1/N on both branches give sum_n M / N^2, i.e. Y / N
    assert np.allclose(z.data * 3, y.data, atol=1e-12)


def test_apply_selection_and_uniform_cases():
    rng = np.random.default_rng(6)
    n, t, c = 3, 2, 4
    m = Value(rng.normal(size=(n, t, c, 2, 2)))
    one_a = np.zeros((n, t, 1))
    one_a[1] = 1
    one_b = np.zeros((t, n, c, 1))
    one_b[:, 1] = 1
    assert np.array_equal(sm.apply(m, Value(one_a), Value(one_b)).data, m.data[1])
    ua, ub = np.full((n, t, 1), 1 / n), np.full((t, n, c, 1), 1 / n)
    assert np.allclose(sm.apply(m, Value(ua), Value(ub)).data, m.data.mean(axis=0) / n)


def test_lif_encoder_emits_spikes():
    rng = np.random.default_rng(7)
    s = make(activation="lif")
    m, _ = sm.encode(Value(rng.normal(size=(4, 4, 5, 5)) * 3), s)
    assert set(np.unique(m.data)) <= {0.0, 1.0}


@pytest.mark.parametrize("seed", range(3))
def test_relu_module_gradcheck(seed):
    rng = np.random.default_rng(seed)
    s = make(c=4, t=4, n=3, cr=2, tr=2, seed=seed)
    randomize(s, rng)
    x = Value(rng.normal(size=(2, 4, 4, 4, 4)))
    proj = Value(rng.normal(size=(2, 4, 4, 4, 4)))
    params = s.parameters()
    err = gradcheck(lambda: (sm.sma_forward(x, s)[0] * proj).sum(), [x] + params, n_coords=40, rng=rng)
    assert err < 1e-4


def test_importance_sums_to_one():
    rng = np.random.default_rng(8)
    s = make()
    randomize(s, rng)
    s.trace = True
    s(Value(rng.normal(size=(2, 4, 4, 3, 3))))
    for tr in s.traces():
        assert abs(tr.importance.sum() - 1) < 1e-12 and np.all(tr.importance > 0)
    wa, wb = s.last_weights
    assert np.allclose(SmaTrace(wa, wb).importance.sum(axis=-1), 1.0)


def test_trace_csv(tmp_path):
    wa = np.full((2, 3, 1), 0.5)
    wb = np.full((3, 2, 4, 1), 0.5)
    sm.write_trace_csv([("s0", SmaTrace(wa, wb))], tmp_path / "a.csv", tmp_path / "b.csv")
    a = (tmp_path / "a.csv").read_text().splitlines()
    b = (tmp_path / "b.csv").read_text().splitlines()
    assert a[0] == "sample_id,t,n,w_alpha" and len(a) == 1 + 6
    assert b[0] == "sample_id,t,n,c,w_beta" and len(b) == 1 + 24


# -- configuration and parameter counts ------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError):
        SmaConfig(kernel_sizes=(1,))
    with pytest.raises(ConfigError):
        SmaConfig(kernel_sizes=(1, 4))
    with pytest.raises(ConfigError):
        SmaConfig(kernel_sizes=(3, 1))
    with pytest.raises(ConfigError):
        SmaConfig(activation="gelu")
    with pytest.raises(ConfigError, match="CR=4"):
        SMA(6, 4, SmaConfig(), np.random.default_rng(0))
    with pytest.raises(ConfigError, match="TR=4"):
        SMA(8, 6, SmaConfig(), np.random.default_rng(0))


def test_wrong_channels_rejected():
    with pytest.raises(ShapeError):
        sm.encode(Value(np.ones((4, 3, 3, 3))), make())


@pytest.mark.parametrize("t,c,tr,cr,n", [(16, 64, 4, 4, 4), (8, 32, 4, 4, 4), (4, 8, 1, 2, 2), (6, 12, 3, 4, 5)])
def test_decoder_count_matches_built_module(t, c, tr, cr, n):
    s = SMA(c, t, SmaConfig.with_scales(n, channel_reduction=cr, time_reduction=tr), np.random.default_rng(0))
    assert sum(p.size for p in s.decoder_parameters()) == decoder_param_count(t, c, tr, cr, n)
    assert s.num_parameters() == sma_param_count(t, c, s.config)


def test_decoder_count_hand_value():
    # T=8, C=32, TR=CR=4, N=4: 8*2*5 + 32*8*5 + 2 + 32 + 8 + 128
    assert decoder_param_count(8, 32, 4, 4, 4) == 80 + 1280 + 170


def test_channel_quadrupling_scales_weights_by_16():
    small = decoder_param_count(8, 8, 4, 4, 4, bias=False) - decoder_param_count(8, 0, 4, 4, 4, bias=False)
    big = decoder_param_count(8, 32, 4, 4, 4, bias=False) - decoder_param_count(8, 0, 4, 4, 4, bias=False)
    assert big == 16 * small
