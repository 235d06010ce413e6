import numpy as np
import pytest

from fibershape import constellation as cst
from fibershape.autodiff import Tape, gradient_check
from fibershape.channel import ChannelModel, NlinCoefficients
from fibershape.errors import ConfigError, TrainingDiverged
from fibershape.trainer import (
    Autoencoder,
    TrainConfig,
    draw_noise,
    train,
    train_joint_power,
)


def gn_channel(sigma2_ase=0.06, kappa0=0.03, power_dbm=0.0):
    return ChannelModel(
        kind="gn",
        sigma2_ase_mw=sigma2_ase,
        coeffs=NlinCoefficients(kappa0=kappa0),
        launch_power_dbm=power_dbm,
    )


def nlin_channel(power_dbm=9.5, sigma2_ase=6.4638e-3):
    return ChannelModel(
        kind="nlin",
        sigma2_ase_mw=sigma2_ase,
        coeffs=NlinCoefficients(kappa0=3e-3, kappa1=5e-4, kappa2=2e-5),
        launch_power_dbm=power_dbm,
    )


def small_cfg(**kw):
    kw.setdefault("channel", gn_channel())
    kw.setdefault("m", 4)
    kw.setdefault("hidden_units", 16)
    return TrainConfig(**kw)


# -- configuration -----------------------------------------------------------


def test_parameter_count_matches_declared_shapes():
    # M=4, one hidden layer of 16, 2 real outputs, mirrored decoder
    ae = Autoencoder(small_cfg())
    expected = (4 * 16 + 16) + (16 * 2 + 2) + (2 * 16 + 16) + (16 * 4 + 4)
    assert ae.parameter_count() == expected == 230


def test_train_launch_power_adds_one_scalar():
    base = Autoencoder(small_cfg()).parameter_count()
    ae = Autoencoder(small_cfg(train_launch_power=True))
    assert ae.parameter_count() == base + 1
    assert ae.params["p_dbm"].size == 1


def test_initial_power_defaults_to_channel_power():
    ae = Autoencoder(small_cfg(train_launch_power=True, channel=gn_channel(power_dbm=2.5)))
    assert float(ae.params["p_dbm"]) == 2.5
    ae2 = Autoencoder(
        small_cfg(train_launch_power=True, initial_launch_power_dbm=-1.0)
    )
    assert float(ae2.params["p_dbm"]) == -1.0


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        small_cfg(m=1)
    with pytest.raises(ConfigError):
        small_cfg(hidden_layers=0)
    with pytest.raises(ConfigError):
        small_cfg(batch_schedule=((10, 8),))  # must start at iteration 0
    with pytest.raises(ConfigError):
        small_cfg(batch_schedule=((0, 8), (100, 64), (100, 128)))
    with pytest.raises(ConfigError):
        small_cfg(batch_schedule=((0, 0),))
    with pytest.raises(ConfigError):
        small_cfg(max_iterations=0)


def test_batch_schedule_lookup():
    cfg = small_cfg(batch_schedule=((0, 8), (100, 2048)))
    assert cfg.batch_multiple_at(0) == 8
    assert cfg.batch_multiple_at(99) == 8
    assert cfg.batch_multiple_at(100) == 2048
    assert cfg.batch_multiple_at(10**6) == 2048
    assert cfg.last_switch_iteration == 100


def test_draw_noise_unit_complex_variance():
    rng = np.random.default_rng(0)
    eps = draw_noise(rng, 200000)
    # per-component variance 1/2 so each complex symbol has total variance 1
    per_comp = eps.var(axis=0)
    assert np.allclose(per_comp, 0.5, atol=5e-3)


# -- graph construction ------------------------------------------------------


def test_extracted_constellation_is_unit_power_and_deterministic():
    ae = Autoencoder(small_cfg(m=16, seed=5))
    c1 = ae.constellation()
    c2 = ae.constellation()
    assert np.array_equal(c1.points, c2.points)
    assert c1.order == 16
    assert c1.symbol_power().mean() == pytest.approx(1.0, abs=1e-12)


def test_batch_moments_match_extracted_constellation():
    ae = Autoencoder(small_cfg(m=16, seed=3, channel=nlin_channel()))
    eps = draw_noise(np.random.default_rng(0), 4 * 16)
    _, diag = ae.build_loss(Tape(), eps, 4)
    mom = cst.moments(ae.constellation())
    assert diag["mu4"] == pytest.approx(mom.mu4, rel=1e-12)
    assert diag["mu6"] == pytest.approx(mom.mu6, rel=1e-12)


@pytest.mark.parametrize("seed,with_power", [(0, False), (1, True), (2, True)])
def test_loss_gradient_matches_finite_differences(seed, with_power):
    cfg = small_cfg(channel=nlin_channel(power_dbm=3.0), seed=seed,
                    train_launch_power=with_power)
    ae = Autoencoder(cfg)
    eps = draw_noise(np.random.default_rng(seed), 4 * cfg.m)
    tape = Tape()
    loss, _ = ae.build_loss(tape, eps, 4)
    tape.backward(loss)
    grads = tape.param_grads()
    worst = gradient_check(
        lambda p: ae.loss_value(p, eps, 4), ae.params, grads,
        n_samples=10**9, h=1e-6, seed=seed,
    )
    assert worst < 1e-5


def test_severed_moment_path_matches_value_pinned_gn():
    # severing the moment->sigma2 path must leave exactly the gn gradients:
    # a gn channel whose kappa0 is pinned to the severed graph's bracket
    # value computes the same loss and the same parameter gradients
    ch_nl = nlin_channel(power_dbm=3.0)
    cfg = small_cfg(channel=ch_nl, sever_moment_gradient=True, seed=4)
    ae = Autoencoder(cfg)
    eps = draw_noise(np.random.default_rng(1), 4 * cfg.m)
    tape = Tape()
    loss, diag = ae.build_loss(tape, eps, 4)
    tape.backward(loss)
    grads = tape.param_grads()

    k = ch_nl.coeffs
    bracket = (k.kappa0 + (diag["mu4"] - 2.0) * k.kappa1) + (diag["mu6"] - 6.0) * k.kappa2
    ch_gn = ChannelModel(kind="gn", sigma2_ase_mw=ch_nl.sigma2_ase_mw,
                         coeffs=NlinCoefficients(kappa0=bracket),
                         launch_power_dbm=3.0)
    ae_gn = Autoencoder(small_cfg(channel=ch_gn, seed=4))
    tape_gn = Tape()
    loss_gn, _ = ae_gn.build_loss(tape_gn, eps, 4)
    tape_gn.backward(loss_gn)
    grads_gn = tape_gn.param_grads()

    assert float(loss.value) == pytest.approx(float(loss_gn.value), rel=1e-12)
    for name in grads:
        np.testing.assert_allclose(grads[name], grads_gn[name], rtol=1e-10, atol=0)


# -- training loop -----------------------------------------------------------


def test_noiseless_training_reaches_low_cross_entropy():
    # with sigma2 ~ 1e-12 the classes are separable; cross-entropy should
    # collapse well below 0.01 nats inside 2000 iterations
    ch = gn_channel(sigma2_ase=1e-12, kappa0=1e-12)
    cfg = TrainConfig(channel=ch, m=16, hidden_units=32, learning_rate=0.003,
                      batch_schedule=((0, 32),), max_iterations=2000, seed=3,
                      early_stop_window=10**9)
    res = train(cfg)
    assert res.final_loss < 0.01
    assert res.iterations_run == 2000
    assert np.isfinite(res.trace).all()


def test_training_trace_layout():
    cfg = small_cfg(max_iterations=50, batch_schedule=((0, 4),), seed=2)
    res = train(cfg)
    assert res.trace.shape == (50, 5)
    assert np.array_equal(res.trace[:, 0], np.arange(50))
    # power column pinned to the channel power when not trained
    assert np.all(res.trace[:, 4] == cfg.channel.launch_power_dbm)
    assert res.final_launch_power_dbm == cfg.channel.launch_power_dbm
    assert not res.stopped_early


def test_identical_seeds_reproduce_trace_bit_exactly():
    cfg = small_cfg(m=8, max_iterations=120, seed=11)
    r1 = train(cfg)
    r2 = train(cfg)
    assert np.array_equal(r1.trace, r2.trace)
    assert np.array_equal(r1.constellation.points, r2.constellation.points)
    r3 = train(small_cfg(m=8, max_iterations=120, seed=12))
    assert not np.array_equal(r1.trace, r3.trace)


def test_early_stop_on_loss_plateau():
    # lr=0 with near-zero noise pins the loss exactly flat, so the plateau
    # detector must fire at the first eligible check (= window length)
    ch = gn_channel(sigma2_ase=1e-12, kappa0=1e-12)
    cfg = TrainConfig(channel=ch, m=4, hidden_units=16, learning_rate=0.0,
                      batch_schedule=((0, 32),), max_iterations=5000, seed=0,
                      early_stop_window=200, early_stop_rel_change=1e-3)
    res = train(cfg)
    assert res.stopped_early
    assert res.iterations_run == 200
    assert np.isfinite(res.final_loss)


def test_loss_moving_average_non_increasing_after_final_switch():
    ch = gn_channel(sigma2_ase=0.1, kappa0=1e-9)  # ~10 dB, far from separable
    cfg = TrainConfig(channel=ch, m=16, hidden_units=32, learning_rate=1e-3,
                      batch_schedule=((0, 8), (100, 256)), max_iterations=1400,
                      seed=6, early_stop_window=10**9)
    res = train(cfg)
    post = res.trace[100:, 1]
    window = 500
    ma = np.convolve(post, np.ones(window) / window, mode="valid")
    # any 500-iteration stride may not increase by more than 1 percent
    assert np.all(ma[window:] <= ma[:-window] * 1.01)


def test_overflow_aborts_with_diagnostics():
    cfg = small_cfg(learning_rate=1e200, max_iterations=50, seed=0)
    with pytest.raises(TrainingDiverged) as exc:
        train(cfg)
    assert exc.value.iteration is not None
    assert exc.value.last_finite_loss is not None
    assert np.isfinite(exc.value.last_finite_loss)


def test_power_runaway_aborts():
    # optimum far above the +20 dBm guard: power walks up until the abort
    ch = gn_channel(sigma2_ase=1.0, kappa0=1e-9)
    cfg = TrainConfig(channel=ch, m=4, hidden_units=16, max_iterations=4000,
                      batch_schedule=((0, 32),), seed=0,
                      train_launch_power=True, initial_launch_power_dbm=19.5,
                      power_learning_rate=0.05)
    with pytest.raises(TrainingDiverged) as exc:
        train(cfg)
    assert "launch power" in str(exc.value)
    assert exc.value.iteration is not None


def test_joint_power_finds_analytic_optimum():
    # kappa0-only channel: optimum power is (sigma2_ase / (2 kappa0))^(1/3),
    # equal to 1 mW = 0 dBm for the 0.06/0.03 pair
    cfg = TrainConfig(channel=gn_channel(), m=4, hidden_units=16,
                      learning_rate=0.002, batch_schedule=((0, 64),),
                      max_iterations=1500, seed=1,
                      initial_launch_power_dbm=3.0, early_stop_window=10**9)
    res = train_joint_power(cfg)
    assert abs(res.final_launch_power_dbm - 0.0) < 0.25
    # trained power must land in the result and in the trace
    assert res.trace[-1, 4] == res.final_launch_power_dbm


def test_nlin_training_lowers_mu4_vs_gn():
    # at 9.5 dBm the nlin variance dominates, so the moment gradient should
    # visibly push mu4 down relative to the moment-blind gn training
    common = dict(m=16, hidden_units=32, learning_rate=1e-3,
                  batch_schedule=((0, 8), (100, 128)), max_iterations=1200,
                  seed=7, early_stop_window=10**9)
    res_gn = train(TrainConfig(channel=gn_channel(sigma2_ase=6.4638e-3,
                                                  kappa0=3e-3, power_dbm=9.5),
                               **common))
    res_nl = train(TrainConfig(channel=nlin_channel(), **common))
    mu4_gn = cst.moments(res_gn.constellation).mu4
    mu4_nl = cst.moments(res_nl.constellation).mu4
    assert mu4_nl < mu4_gn * 0.95


def test_severed_moment_gradient_reproduces_gn_mu4():
    common = dict(m=16, hidden_units=32, learning_rate=1e-3,
                  batch_schedule=((0, 8), (100, 128)), max_iterations=1200,
                  seed=7, early_stop_window=10**9)
    res_gn = train(TrainConfig(channel=gn_channel(sigma2_ase=6.4638e-3,
                                                  kappa0=3e-3, power_dbm=9.5),
                               **common))
    res_sv = train(TrainConfig(channel=nlin_channel(),
                               sever_moment_gradient=True, **common))
    mu4_gn = cst.moments(res_gn.constellation).mu4
    mu4_sv = cst.moments(res_sv.constellation).mu4
    assert abs(mu4_sv - mu4_gn) / mu4_gn < 0.05
