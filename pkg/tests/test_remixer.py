import numpy as np
import pytest

from spatialvc.bss import IvaConfig, SteeringVector, apply_demix, far_field_steering, gc_iva, projection_back
from spatialvc.remixer import RemixStrategy, remix, remix_inverse, remix_steering
from spatialvc.room_sim import default_scene, overlapped_program, render_observation, simulate_rirs
from spatialvc.signal_core import StftParams, WaveBuffer, istft, stft
from spatialvc.synth import speaker_pair
from spatialvc.vc_bridge import Identity, apply_vc

PARAMS = StftParams(1024, 512)
FS = 16000


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


@pytest.fixture(scope="module")
def separated():
    scene = default_scene(0.2)
    R = simulate_rirs(scene, FS)
    x1, x2, _ = speaker_pair(3.0, FS, seed=3)
    y = render_observation(overlapped_program(x1, x2, FS), R)
    Y = stft(y, PARAMS)
    d = far_field_steering(scene.microphones, scene.source_angle(0), Y.frequencies())
    st = projection_back(gc_iva(Y, d, IvaConfig(10, 10)), Y)
    X = apply_demix(st.W, Y)
    return Y, st, X


def split(X):
    return X.with_data(X.data[:1]), X.with_data(X.data[1:])


def test_inverse_reconstructs_observation(separated):
    Y, st, X = separated
    Z = remix_inverse(st, *split(X))
    assert rel(Z.data, Y.data) < 1e-8


def test_zero_target(separated):
    Y, st, X = separated
    vc, nt = split(X)
    zero = vc.with_data(np.zeros_like(vc.data))
    Z = remix_inverse(st, zero, nt)
    expect = np.einsum("fi,ift->ift", st.A[:, :, 1], nt.data[:1].repeat(2, 0))
    np.testing.assert_allclose(Z.data, expect, atol=1e-12)
    target_image = np.einsum("fi,ft->ift", st.A[:, :, 0], X.data[0])
    np.testing.assert_allclose(Z.data, Y.data - target_image, atol=1e-9 * np.abs(Y.data).max())
    Zs = remix_steering(st, st.steering, zero, nt)
    assert np.array_equal(Z.data, Zs.data)


def test_waveform_round_trip_error_is_target_inconsistency(separated):
    # Through a waveform, the target spectrum is replaced by its consistent
    # projection; the remix error is exactly A[:, 0] times that change.
    Y, st, X = separated
    vc, nt = split(X)
    w = apply_vc(istft(vc), Identity())
    P = stft(w, PARAMS)
    Z = remix_inverse(st, P, nt)
    expect = Y.data + st.A[:, :, 0].T[:, :, None] * (P.data[0] - vc.data[0])[None]
    np.testing.assert_allclose(Z.data, expect, atol=1e-9 * np.abs(Y.data).max())
    # the reference channel row of A is all ones, so channel 1 survives the
    # round trip exactly in the time domain
    np.testing.assert_allclose(st.A[:, 0, :], 1.0, atol=1e-9)
    z = istft(Z, Y.length).samples
    y = istft(Y).samples
    assert rel(z[0], y[0]) < 1e-10


@pytest.mark.xfail(strict=True, reason="separated target spectrum is not STFT-consistent; "
                   "see the waveform round-trip decomposition test")
def test_waveform_round_trip_within_1e_3(separated):
    Y, st, X = separated
    vc, nt = split(X)
    w = apply_vc(istft(vc), Identity())
    Z = remix_inverse(st, stft(w, PARAMS), nt)
    assert rel(Z.data, Y.data) < 1e-3


def test_steering_spike_column(separated):
    Y, st, X = separated
    vc, nt = split(X)
    spike = np.zeros_like(vc.data)
    spike[0, 40, 5] = 1.0
    zero_nt = nt.with_data(np.zeros_like(nt.data))
    Z = remix_steering(st, st.steering, vc.with_data(spike), zero_nt)
    np.testing.assert_array_equal(Z.data[:, 40, 5], st.steering.d[40])
    assert np.count_nonzero(Z.data) == np.count_nonzero(st.steering.d[40])


def test_linearity(separated, rng):
    Y, st, X = separated
    vc, nt = split(X)
    a = vc.with_data(rng.standard_normal(vc.data.shape) + 0j)
    b = vc.with_data(rng.standard_normal(vc.data.shape) + 0j)
    for fn in (lambda v: remix_inverse(st, v, nt), lambda v: remix_steering(st, st.steering, v, nt)):
        lhs = fn(a.with_data(2 * a.data + 3 * b.data)).data
        z0 = fn(a.with_data(0 * a.data)).data
        rhs = 2 * (fn(a).data - z0) + 3 * (fn(b).data - z0) + z0
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_target_gain(separated):
    Y, st, X = separated
    vc, nt = split(X)
    zero_nt = nt.with_data(np.zeros_like(nt.data))
    g1 = remix_steering(st, st.steering, vc, zero_nt).data
    g2 = remix_steering(st, st.steering, vc, zero_nt, target_gain=0.5).data
    np.testing.assert_allclose(g2, 0.5 * g1)


def test_shape_errors(separated):
    Y, st, X = separated
    vc, nt = split(X)
    with pytest.raises(ValueError):
        remix_inverse(st, vc.with_data(vc.data[:, :, :-1]), nt)
    with pytest.raises(ValueError):
        remix_inverse(st, X, nt)
    with pytest.raises(ValueError):
        remix_steering(st, SteeringVector(np.ones((3, 2))), vc, nt)


def test_dispatch(separated):
    Y, st, X = separated
    vc, nt = split(X)
    assert np.array_equal(remix("inverse", st, vc, nt).data, remix_inverse(st, vc, nt).data)
    assert np.array_equal(remix(RemixStrategy.STEERING, st, vc, nt).data,
                          remix_steering(st, st.steering, vc, nt).data)
    with pytest.raises(ValueError):
        remix("bogus", st, vc, nt)


def test_anechoic_far_field_steering():
    # No reflections and a distant source: d matches the true relative transfer
    # up to one delay and gain common to all channels (d is referenced to the
    # array centre, the separated target to microphone 1).
    scene = default_scene(0.0, source_distance=3.0)
    R = simulate_rirs(scene, FS)
    x1, x2, _ = speaker_pair(3.0, FS, seed=5)
    y = render_observation(overlapped_program(x1, x2, FS), R)
    Y = stft(y, PARAMS)
    d = far_field_steering(scene.microphones, scene.source_angle(0), Y.frequencies())
    st = projection_back(gc_iva(Y, d, IvaConfig(20, 20)), Y)
    vc, nt = split(apply_demix(st.W, Y))
    omega = 2 * np.pi * Y.frequencies() / FS
    obs = istft(Y).samples

    best = None
    for delay in np.arange(-6.0, 6.0, 0.05):
        shift = np.exp(-1j * omega * delay)
        dd = SteeringVector(d.d * shift[:, None])
        z = istft(remix_steering(st, dd, vc, nt), Y.length).samples
        target = z - istft(remix_steering(st, dd, vc.with_data(0 * vc.data), nt), Y.length).samples
        rest = z - target
        g = np.sum(target * (obs - rest)) / np.sum(target * target)
        err = [np.sum((obs[j] - rest[j] - g * target[j]) ** 2) / np.sum(obs[j] ** 2) for j in range(2)]
        if best is None or max(err) < max(best):
            best = err
    assert max(10 * np.log10(best)) < -20
