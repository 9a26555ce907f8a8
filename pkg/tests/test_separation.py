import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from percsep import metrics, separation, synth
from percsep.audio import AudioBuffer
from percsep.segmentation import GHATAM, MRIDANGAM, OVERLAP, Annotation, Segment

SR = 44100


def small_net(seed=0, input_dim=513, hidden=8, n_layers=2):
    return separation.MaskNetwork.create(input_dim=input_dim, hidden=hidden, n_layers=n_layers, seed=seed)


def activation_pattern(cache):
    parts = [(o > 0).ravel() for o in cache["outputs"]]
    return np.concatenate(parts + [(cache["a"] > 0).ravel(), (cache["b"] > 0).ravel()])


def finite_difference_check(seed, step=1e-3):
    """Relative error per parameter group between backprop and central differences.

    Elements whose +/- step flips any ReLU on or off are left out: the loss
    has a kink there and a central difference does not estimate a derivative.
    Returns the worst group error and the number of elements left out.
    """
    rng = np.random.default_rng(seed)
    net = small_net(seed + 1, input_dim=5)
    T = 7
    z = np.abs(rng.standard_normal((T, 5))) + 0.1
    x = separation.normalize_input(z)
    y_m, y_g = np.abs(rng.standard_normal((T, 5))), np.abs(rng.standard_normal((T, 5)))
    _, grads, cache = separation.sequence_loss(net, x, z, y_m, y_g, 0.08)
    base = activation_pattern(cache)
    worst, skipped = 0.0, 0
    for name, p in net.params.items():
        num, ana = [], []
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            lp, _, cp = separation.sequence_loss(net, x, z, y_m, y_g, 0.08, with_grad=False)
            p[idx] = old - step
            lm, _, cm = separation.sequence_loss(net, x, z, y_m, y_g, 0.08, with_grad=False)
            p[idx] = old
            if not (np.array_equal(activation_pattern(cp), base) and np.array_equal(activation_pattern(cm), base)):
                skipped += 1
                continue
            num.append((lp - lm) / (2 * step))
            ana.append(grads[name][idx])
        num, ana = np.array(num), np.array(ana)
        denom = max(np.linalg.norm(num) + np.linalg.norm(ana), 1e-12)
        worst = max(worst, float(np.linalg.norm(num - ana) / denom))
    return worst, skipped


@pytest.fixture(scope="module")
def pair():
    r = synth.generate(synth.SynthSpec(seed=5, plan=(("OVERLAP", 2.0),)))
    return r.mixture, r.track_a, r.track_b


# --- forward pass ---------------------------------------------------------------


@given(st.integers(0, 2**32 - 1))
def test_masks_partition_unity(seed):
    rng = np.random.default_rng(seed)
    net = small_net(seed)
    for p in net.params.values():
        p += rng.normal(0, 0.5, p.shape)
    m, g = separation.forward(net, np.abs(rng.standard_normal((12, 513))) * rng.uniform(0, 10))
    assert np.max(np.abs(m + g - 1.0)) < 1e-6
    assert np.all((m >= 0) & (m <= 1))


def test_zero_heads_give_half_masks():
    net = small_net()
    for h in ("m", "g"):
        net.params[f"V{h}"][:] = 0.0
        net.params[f"c{h}"][:] = 0.0
    m, g = separation.forward(net, np.abs(np.random.default_rng(0).standard_normal((6, 513))))
    assert np.all(m == 0.5) and np.all(g == 0.5)


def test_state_carries_across_frames():
    rng = np.random.default_rng(1)
    mag = np.abs(rng.standard_normal((20, 513)))
    net = small_net(3, hidden=16)
    for layer in range(net.n_layers):
        net.params[f"U{layer}"] *= 5.0
    ablated = net.copy()
    for layer in range(ablated.n_layers):
        ablated.params[f"U{layer}"][:] = 0.0
    # Without recurrence each frame is processed alone, so reversal commutes with the network.
    fwd, _ = separation.forward(ablated, mag)
    rev, _ = separation.forward(ablated, mag[::-1])
    assert np.allclose(fwd, rev[::-1], atol=1e-12)
    fwd, _ = separation.forward(net, mag)
    rev, _ = separation.forward(net, mag[::-1])
    assert not np.allclose(fwd, rev[::-1], atol=1e-6)


def test_forward_dimension_mismatch():
    with pytest.raises(ValueError):
        separation.forward(small_net(), np.ones((4, 257)))


def test_default_dimensions():
    net = separation.MaskNetwork.create(seed=0)
    assert net.params["W0"].shape == (513, 500) and net.params["U2"].shape == (500, 500)
    assert net.params["Vm"].shape == (500, 513) and net.params["Vg"].shape == (500, 513)
    assert separation.TrainConfig().gamma == 0.08


# --- objective ------------------------------------------------------------------


def test_loss_perfect_prediction():
    rng = np.random.default_rng(2)
    y_m, y_g = rng.random((5, 7)), rng.random((5, 7))
    expected = -2 * 0.08 * np.mean((y_m - y_g) ** 2)
    assert separation.loss(y_m, y_g, y_m, y_g, 0.08) == pytest.approx(expected, abs=1e-15)


def test_swapped_prediction_is_penalised_and_escapable():
    rng = np.random.default_rng(3)
    y_m, y_g = rng.random((5, 7)), rng.random((5, 7))
    swapped = separation.loss(y_g, y_m, y_m, y_g, 0.0)
    assert swapped == pytest.approx(2 * np.mean((y_g - y_m) ** 2), abs=1e-15)
    gaps = [separation.loss(y_g, y_m, y_m, y_g, g) - separation.loss(y_m, y_g, y_m, y_g, g) for g in (0.0, 0.08, 0.3)]
    assert gaps[0] < gaps[1] < gaps[2]
    for gamma in (0.0, 0.08):
        _, d_m, d_g = separation.loss_grad(y_g, y_m, y_m, y_g, gamma)
        # Descent direction points from the swapped estimate towards the right targets.
        assert np.sum(-d_m * (y_m - y_g)) > 0 and np.sum(-d_g * (y_g - y_m)) > 0


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        separation.loss(np.ones((2, 3)), np.ones((2, 3)), np.ones((2, 3)), np.ones((3, 2)))


@pytest.mark.parametrize("seed", range(4))
def test_backprop_matches_finite_differences(seed):
    worst, skipped = finite_difference_check(seed)
    assert worst < 1e-4
    assert skipped < 20


# --- training -------------------------------------------------------------------


def test_training_is_deterministic_and_reduces_loss(pair):
    cfg = separation.TrainConfig(epochs=8, learning_rate=1e-2, seed=4)
    a = separation.train(small_net(hidden=16), [pair], cfg)
    b = separation.train(small_net(hidden=16), [pair], cfg)
    assert a.loss_history == b.loss_history
    assert a.loss_history[-1] < a.loss_history[0]


def test_training_rejects_misaligned_pairs(pair):
    mix, a, b = pair
    with pytest.raises(ValueError):
        separation.train(small_net(), [(mix, AudioBuffer(a.samples[:-1], SR), b)])
    with pytest.raises(ValueError):
        separation.train(small_net(), [])


def test_trained_net_beats_half_mask_baseline(pair):
    mix, a, b = pair
    cfg = separation.TrainConfig(epochs=40, learning_rate=1e-2)
    net = separation.train(small_net(1, hidden=32), [pair], cfg).net
    out = separation.separate(net, mix)
    half = separation.separate_with_masks(mix, lambda m: (np.full(m.shape, 0.5), np.full(m.shape, 0.5)))
    assert metrics.sdr(out.mridangam, a) > metrics.sdr(half.mridangam, a)
    assert metrics.sdr(out.ghatam, b) > metrics.sdr(half.ghatam, b)


# --- inference and assembly -----------------------------------------------------


def test_forced_masks(pair):
    mix = pair[0]
    one = separation.separate_with_masks(mix, lambda m: (np.ones(m.shape), np.zeros(m.shape)))
    assert len(one.mridangam) == len(mix)
    assert np.max(np.abs(one.mridangam.samples - mix.samples)) < 1e-5
    assert np.max(np.abs(one.ghatam.samples)) < 1e-5
    half = separation.separate_with_masks(mix, lambda m: (np.full(m.shape, 0.5), np.full(m.shape, 0.5)))
    assert np.max(np.abs(half.mridangam.samples + half.ghatam.samples - mix.samples)) < 1e-5


def test_outputs_are_additive(pair):
    mix = pair[0]
    out = separation.separate(small_net(7), mix)
    assert np.sqrt(np.mean((out.mridangam.samples + out.ghatam.samples - mix.samples) ** 2)) < 1e-4


def test_assemble_all_solo(pair):
    mix = pair[0]
    out = separation.assemble_channels(mix, Annotation((Segment(0.0, mix.duration, MRIDANGAM),)), None)
    assert np.array_equal(out.mridangam.samples, mix.samples)
    assert not np.any(out.ghatam.samples)


def test_assemble_all_overlap_equals_separate(pair):
    mix = pair[0]
    net = small_net(8)
    out = separation.assemble_channels(mix, Annotation((Segment(0.0, mix.duration, OVERLAP),)), net)
    ref = separation.separate(net, mix)
    assert np.array_equal(out.mridangam.samples, ref.mridangam.samples)
    assert np.array_equal(out.ghatam.samples, ref.ghatam.samples)


def test_assemble_solo_regions_exact_outside_crossfades():
    r = synth.generate(synth.SynthSpec(seed=9, plan=(("VOICE_A_SOLO", 1.5), ("OVERLAP", 1.0),
                                                       ("VOICE_B_SOLO", 1.5), ("VOICE_A_SOLO", 1.0))))
    out = separation.assemble_channels(r.mixture, r.truth, small_net(9), crossfade=0.010)
    x = r.mixture.samples
    margin = int(0.005 * SR)
    for seg in r.truth:
        if seg.label == OVERLAP:
            continue
        lo = int(round(seg.start * SR)) + (margin if seg.start > 0 else 0)
        hi = int(round(seg.end * SR)) - (margin if seg.end < r.mixture.duration else 0)
        active, silent = (out.mridangam, out.ghatam) if seg.label == MRIDANGAM else (out.ghatam, out.mridangam)
        assert np.array_equal(active.samples[lo:hi], x[lo:hi])
        assert not np.any(silent.samples[lo:hi])
    # At a join between two solo voices the crossfade hands the signal over without loss.
    join = int(round(4.0 * SR))
    seg = slice(join - margin, join + margin)
    assert np.allclose(out.mridangam.samples[seg] + out.ghatam.samples[seg], x[seg], atol=1e-15)


def test_assemble_errors(pair):
    mix = pair[0]
    with pytest.raises(ValueError):
        separation.assemble_channels(mix, Annotation((Segment(0.0, 1.0, MRIDANGAM),)), None)
    with pytest.raises(ValueError):
        separation.assemble_channels(mix, Annotation((Segment(0.0, mix.duration, OVERLAP),)), None)
    with pytest.raises(ValueError):
        separation.assemble_channels(mix, Annotation((Segment(0.0, mix.duration, "C0"),)), small_net())


def test_network_roundtrip(tmp_path):
    net = small_net(5)
    net.save(tmp_path / "n.json")
    back = separation.MaskNetwork.load(tmp_path / "n.json")
    assert all(np.array_equal(back.params[k], v) for k, v in net.params.items())
    with pytest.raises(ValueError):
        separation.MaskNetwork.from_dict({"format": "percsep.gmm"})
