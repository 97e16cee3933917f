"""Architecture: feature nets, the additive forward pass, sharing, counting."""

import numpy as np
import pytest

from namnc.model import (
    EXU_UNITS,
    HIDDEN_UNITS,
    PARAMS_PER_NET,
    ContributionTensor,
    FeatureNet,
    NamNcModel,
    count_params,
    distinct_net_count,
    feature_net_forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from namnc.numeric import leaky_relu, rng_stream


# -- construction -------------------------------------------------------------

def test_distinct_net_counts():
    assert distinct_net_count(8, 7, "none") == 56
    assert distinct_net_count(8, 7, "time") == 7
    assert distinct_net_count(8, 7, "feature") == 8


def test_init_same_seed_identical():
    a = init_model(3, 4, "none", rng_stream(21))
    b = init_model(3, 4, "none", rng_stream(21))
    for key in a.params:
        np.testing.assert_array_equal(a.params[key], b.params[key])


def test_init_shapes_and_beta_zero():
    m = init_model(4, 3, "none", rng_stream(0))
    assert m.params["exu_w"].shape == (12, EXU_UNITS)
    assert m.params["exu_b"].shape == (12, EXU_UNITS)
    assert m.params["hidden"].shape == (12, HIDDEN_UNITS, EXU_UNITS)
    assert m.params["out"].shape == (12, HIDDEN_UNITS)
    assert m.params["mix_w"].shape == (3, 12)
    np.testing.assert_array_equal(m.params["beta"], np.zeros(3))


def test_init_scales():
    # ExU params ~ N(0,1); linear/mixing weights scaled by 1/sqrt(fan-in)
    m = init_model(8, 8, "none", rng_stream(99))
    assert abs(m.params["exu_w"].std() - 1.0) < 0.05
    assert abs(m.params["exu_b"].std() - 1.0) < 0.05
    assert abs(m.params["hidden"].std() - 1 / np.sqrt(EXU_UNITS)) < 0.005
    assert abs(m.params["out"].std() - 1 / np.sqrt(HIDDEN_UNITS)) < 0.02
    assert abs(m.params["mix_w"].std() - 1 / np.sqrt(64)) < 0.02


def test_shared_nets_are_same_objects():
    m = init_model(4, 3, "time", rng_stream(1))
    for k in range(3):
        assert all(m.nets[t][k] is m.nets[0][k] for t in range(4))
    m = init_model(4, 3, "feature", rng_stream(1))
    for t in range(4):
        assert all(m.nets[t][k] is m.nets[t][0] for k in range(3))


def test_invalid_sharing_rejected():
    with pytest.raises(ValueError):
        init_model(2, 2, "both", rng_stream(0))


# -- feature net --------------------------------------------------------------

def test_feature_net_zero_linear_weights_zero_output():
    net = FeatureNet(
        exu_w=rng_stream(2).normal(size=EXU_UNITS),
        exu_b=rng_stream(3).normal(size=EXU_UNITS),
        hidden=np.zeros((HIDDEN_UNITS, EXU_UNITS)),
        out=np.zeros(HIDDEN_UNITS),
    )
    for x in (-3.0, 0.0, 0.7, 10.0):
        assert feature_net_forward(net, x) == 0.0


def test_feature_net_input_at_shared_center_is_zero():
    # e^w * (b - b) = 0 in every unit, and the rest of the net maps 0 to 0
    rng = rng_stream(4)
    net = FeatureNet(
        exu_w=rng.normal(size=EXU_UNITS),
        exu_b=np.full(EXU_UNITS, 0.37),
        hidden=rng.normal(size=(HIDDEN_UNITS, EXU_UNITS)),
        out=rng.normal(size=HIDDEN_UNITS),
    )
    assert feature_net_forward(net, 0.37) == 0.0


def test_feature_net_matches_straight_line_reevaluation():
    rng = rng_stream(5)
    net = FeatureNet(
        exu_w=rng.normal(size=EXU_UNITS),
        exu_b=rng.normal(size=EXU_UNITS),
        hidden=rng.normal(size=(HIDDEN_UNITS, EXU_UNITS)),
        out=rng.normal(size=HIDDEN_UNITS),
    )
    x = 0.5
    a1 = leaky_relu(np.exp(net.exu_w) * (x - net.exu_b), 0.01)
    a2 = leaky_relu(net.hidden @ a1, 0.01)
    expected = float(net.out @ a2)
    assert abs(feature_net_forward(net, x) - expected) < 1e-12


def test_feature_net_rejects_nonfinite_input():
    net = init_model(1, 1, "none", rng_stream(0)).nets[0][0]
    with pytest.raises(FloatingPointError):
        feature_net_forward(net, float("nan"))


def test_eval_many_matches_scalar_calls():
    net = init_model(1, 1, "none", rng_stream(6)).nets[0][0]
    xs = rng_stream(7).normal(size=40)
    batch = net.eval_many(xs)
    scalars = np.array([net(float(x)) for x in xs])
    np.testing.assert_allclose(batch, scalars, rtol=0, atol=1e-14)


# -- forward ------------------------------------------------------------------

def test_forward_zero_mix_returns_beta():
    m = init_model(3, 2, "none", rng_stream(8))
    m.params["mix_w"][...] = 0.0
    m.params["beta"][...] = [1.5, -2.5]
    window = rng_stream(9).normal(size=(3, 2))
    np.testing.assert_array_equal(m.forward(window), [1.5, -2.5])


def test_forward_single_term_equals_feature_net():
    m = init_model(1, 1, "none", rng_stream(10))
    m.params["mix_w"][...] = 1.0
    m.params["beta"][...] = 0.0
    for x in (-1.2, 0.0, 0.8):
        pred = m.forward(np.array([[x]]))
        assert abs(pred[0] - feature_net_forward(m.nets[0][0], x)) < 1e-12


def brute_force_forward(m, window):
    """Independent double-loop oracle for the additive sum."""
    preds = np.array(m.params["beta"], dtype=float, copy=True)
    for j in range(m.k_series):
        for t in range(m.tau):
            for k in range(m.k_series):
                w = m.params["mix_w"][j, t * m.k_series + k]
                preds[j] += w * feature_net_forward(m.nets[t][k], window[t, k])
    return preds


def test_forward_matches_brute_force_double_loop():
    for seed in range(5):
        rng = rng_stream(seed)
        m = init_model(2, 2, "none", rng)
        window = rng.normal(size=(2, 2))
        np.testing.assert_allclose(
            m.forward(window), brute_force_forward(m, window), rtol=0, atol=1e-10
        )


def test_forward_brute_force_all_sharing_modes():
    for sharing in ("none", "time", "feature"):
        rng = rng_stream(31)
        m = init_model(3, 2, sharing, rng)
        window = rng.normal(size=(3, 2))
        np.testing.assert_allclose(
            m.forward(window), brute_force_forward(m, window), rtol=0, atol=1e-10
        )


def test_forward_batch_matches_single_windows():
    rng = rng_stream(13)
    m = init_model(4, 3, "time", rng)
    x = rng.normal(size=(9, 4, 3))
    batch = m.forward_batch(x)
    for b in range(9):
        np.testing.assert_allclose(batch[b], m.forward(x[b]), rtol=0, atol=1e-12)


def test_forward_shape_mismatch_rejected():
    m = init_model(3, 2, "none", rng_stream(0))
    with pytest.raises(ValueError):
        m.forward(np.zeros((2, 3)))


def test_loss_matches_loss_and_grads_value():
    rng = rng_stream(25)
    m = init_model(2, 3, "feature", rng)
    x = rng.normal(size=(11, 2, 3))
    y = rng.normal(size=(11, 3))
    full, _ = m.loss_and_grads(x, y)
    assert m.loss(x, y) == full


# -- contributions ------------------------------------------------------------

def test_contributions_zero_mix():
    m = init_model(2, 2, "none", rng_stream(14))
    m.params["mix_w"][...] = 0.0
    ct = m.contributions(rng_stream(15).normal(size=(2, 2)))
    np.testing.assert_array_equal(ct.c, np.zeros((2, 2, 2)))
    np.testing.assert_array_equal(ct.prediction, m.params["beta"])


def test_contributions_additivity():
    # beta + sum of c reconstructs the prediction within 1e-9
    for seed in range(10):
        rng = rng_stream(seed)
        m = init_model(4, 3, ("none", "time", "feature")[seed % 3], rng)
        window = rng.normal(size=(4, 3))
        ct = m.contributions(window)
        pred = m.forward(window)
        np.testing.assert_array_equal(ct.prediction, pred)
        recon = ct.beta + ct.c.sum(axis=(1, 2))
        assert np.abs(recon - pred).max() <= 1e-9


def test_contributions_entries_match_definition():
    rng = rng_stream(16)
    m = init_model(2, 2, "none", rng)
    window = rng.normal(size=(2, 2))
    ct = m.contributions(window)
    for j in range(2):
        for t in range(2):
            for k in range(2):
                w = m.params["mix_w"][j, t * 2 + k]
                f = feature_net_forward(m.nets[t][k], window[t, k])
                assert abs(ct.c[j, t, k] - w * f) < 1e-12


def test_time_shared_equal_inputs_equal_feature_scalars():
    # same input value at two times hits the same shared net
    rng = rng_stream(17)
    m = init_model(3, 2, "time", rng)
    window = rng.normal(size=(3, 2))
    window[2] = window[1]
    ct = m.contributions(window)
    for j in range(2):
        for k in range(2):
            w1 = m.params["mix_w"][j, 1 * 2 + k]
            w2 = m.params["mix_w"][j, 2 * 2 + k]
            assert abs(ct.c[j, 1, k] / w1 - ct.c[j, 2, k] / w2) < 1e-12


def test_contribution_locality():
    # perturbing one input point may move only that point's column of c
    rng = rng_stream(18)
    m = init_model(3, 3, "none", rng)
    window = rng.normal(size=(3, 3))
    base = m.contributions(window)
    bumped = window.copy()
    bumped[1, 2] += 0.25
    after = m.contributions(bumped)
    mask = np.ones((3, 3, 3), dtype=bool)
    mask[:, 1, 2] = False
    np.testing.assert_array_equal(base.c[mask], after.c[mask])
    assert np.any(base.c[:, 1, 2] != after.c[:, 1, 2])


def test_sharing_forward_consistency():
    # shared nets answer identically wherever they appear in the grid
    rng = rng_stream(19)
    m = init_model(4, 3, "time", rng)
    xs = rng_stream(20).normal(size=6)
    for x in xs:
        for k in range(3):
            vals = [feature_net_forward(m.nets[t][k], float(x)) for t in range(4)]
            assert len(set(vals)) == 1
    m = init_model(4, 3, "feature", rng_stream(19))
    for x in xs:
        for t in range(4):
            vals = [feature_net_forward(m.nets[t][k], float(x)) for k in range(3)]
            assert len(set(vals)) == 1


# -- parameter counting -------------------------------------------------------

def test_params_per_net():
    assert PARAMS_PER_NET == 200 + 3200 + 32


def test_count_params_reference_shapes():
    assert count_params(8, 7, "none") == 56 * 3432 + 7 * 57 == 192_591
    assert count_params(8, 7, "time") == 24_423
    assert count_params(8, 7, "feature") == 27_855
    assert count_params(8, 10, "none") == 80 * 3432 + 10 * 81 == 275_370
    assert count_params(8, 10, "time") == 10 * 3432 + 810 == 35_130
    assert count_params(8, 10, "feature") == 28_266


def test_count_params_matches_model_walk():
    for tau, k, sharing in [(2, 2, "none"), (3, 4, "time"), (5, 2, "feature"),
                            (8, 7, "none"), (8, 10, "time")]:
        m = init_model(tau, k, sharing, rng_stream(0))
        assert m.n_params() == count_params(tau, k, sharing)


def test_count_params_sharing_ratios():
    # net params dominate, so sharing shrinks the count by ~1/tau or ~1/K
    tau, k = 16, 12
    full = count_params(tau, k, "none")
    assert count_params(tau, k, "time") / full < 1.5 / tau
    assert count_params(tau, k, "feature") / full < 1.5 / k


# -- checkpointing ------------------------------------------------------------

def test_checkpoint_round_trip_exact(tmp_path):
    m = init_model(3, 4, "time", rng_stream(23))
    path = tmp_path / "model.json"
    save_checkpoint(m, path, series_names=["a", "b", "c", "d"],
                    norm_means=np.array([0.1, 0.2, 0.3, 0.4]),
                    norm_stds=np.array([1.0, 2.0, 3.0, 4.0]))
    loaded, meta = load_checkpoint(path)
    assert loaded.tau == 3 and loaded.k_series == 4 and loaded.sharing == "time"
    for key in m.params:
        np.testing.assert_array_equal(loaded.params[key], m.params[key])
    assert meta["series_names"] == ["a", "b", "c", "d"]
    np.testing.assert_array_equal(meta["norm_means"], [0.1, 0.2, 0.3, 0.4])
    np.testing.assert_array_equal(meta["norm_stds"], [1.0, 2.0, 3.0, 4.0])


def test_checkpoint_predictions_survive_round_trip(tmp_path):
    rng = rng_stream(24)
    m = init_model(2, 3, "none", rng)
    path = tmp_path / "m.json"
    save_checkpoint(m, path)
    loaded, _ = load_checkpoint(path)
    window = rng.normal(size=(2, 3))
    np.testing.assert_array_equal(loaded.forward(window), m.forward(window))


def test_checkpoint_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"magic": "something-else", "version": 1}')
    with pytest.raises(ValueError):
        load_checkpoint(path)
