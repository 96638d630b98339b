import numpy as np
import pytest

from spatialvc.room_sim import (
    RirSet, RoomScene, SourceProgram, default_scene, measure_rt60, overlapped_program,
    render_ideal, render_observation, render_source_image, simulate_rirs,
)
from spatialvc.signal_core import WaveBuffer

FS = 24000


@pytest.fixture(scope="module")
def rirs_05():
    return simulate_rirs(default_scene(0.5), FS)


def two_point_scene(r=0.0, c=300.0, dist=1.0):
    # source-mic distances are exact multiples of c / FS so delays fall on samples
    return RoomScene(
        sources=[(3.0, 3.0, 1.5), (6.0, 3.0, 1.5)],
        microphones=[(3.0, 3.0 + dist, 1.5), (6.0, 3.0 + 2 * dist, 1.5)],
        reflection_coeff=r, sound_speed=c,
    )


class TestScene:
    def test_defaults(self):
        s = default_scene()
        assert s.room_dims == (9.0, 7.5, 3.5)
        assert s.reflection_coeff == 0.5
        assert s.max_image_order == 17
        mics = np.asarray(s.microphones)
        assert np.linalg.norm(mics[1] - mics[0]) == pytest.approx(0.15)
        assert s.source_angle(0) == pytest.approx(np.pi / 4)
        assert s.source_angle(1) == pytest.approx(-np.pi / 4)

    def test_outside_room_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            RoomScene(sources=[(10.0, 1, 1)], microphones=[(1, 1, 1)])

    def test_source_mic_count_must_match(self):
        with pytest.raises(ValueError):
            RoomScene(sources=[(1, 1, 1)], microphones=[(2, 2, 2), (2, 3, 2)])

    @pytest.mark.parametrize("r", [-0.1, 1.0])
    def test_reflection_range(self, r):
        with pytest.raises(ValueError):
            default_scene(r)

    def test_dict_round_trip(self):
        s = default_scene(0.3)
        assert RoomScene.from_dict(s.to_dict()) == s


class TestRirs:
    def test_anechoic_single_tap(self):
        scene = two_point_scene()
        R = simulate_rirs(scene, FS)
        h = R[0, 0]
        delay = int(round(1.0 / 300.0 * FS))
        assert h[delay] == pytest.approx(1.0, rel=1e-12)
        others = np.delete(h, delay)
        assert np.max(np.abs(others)) < 1e-12

    def test_inverse_distance_law(self):
        near = simulate_rirs(two_point_scene(dist=1.0), FS)
        far = simulate_rirs(two_point_scene(dist=2.0), FS)
        assert far[0, 0].max() == pytest.approx(0.5 * near[0, 0].max(), rel=1e-9)

    def test_direct_path_delay(self, rirs_05):
        scene = default_scene(0.5)
        for i in range(2):
            for j in range(2):
                dist = np.linalg.norm(np.subtract(scene.sources[i], scene.microphones[j]))
                expect = dist / scene.sound_speed * FS
                h = rirs_05[i, j]
                first = np.argmax(np.abs(h) > 0.5 * np.abs(h).max())
                assert abs(first - expect) <= 1.0
                # the windowed sinc has unit DC gain, so the taps around the
                # direct path sum to its amplitude
                k = int(np.floor(expect))
                assert h[k - 40 : k + 41].sum() == pytest.approx(1 / dist, rel=0.01)

    def test_rirs_finite_and_shaped(self, rirs_05):
        assert rirs_05.rirs.shape[:2] == (2, 2)
        assert np.all(np.isfinite(rirs_05.rirs))

    def test_zero_order(self):
        R0 = simulate_rirs(default_scene(0.5, max_image_order=0), FS)
        Ra = simulate_rirs(default_scene(0.0), FS)
        n = min(R0.rirs.shape[-1], Ra.rirs.shape[-1])
        np.testing.assert_allclose(R0.rirs[..., :n], Ra.rirs[..., :n], atol=1e-14)

    def test_export(self, tmp_path, rirs_05):
        from spatialvc.signal_core import read_wav
        rirs_05.write(tmp_path / "rirs.wav")
        back = read_wav(tmp_path / "rirs.wav")
        assert back.n_channels == 4
        np.testing.assert_allclose(back.samples[3], rirs_05[1, 1], atol=1e-6)


class TestRt60:
    def test_exact_exponential_decay(self):
        t = np.arange(FS) / FS
        h = 10 ** (-3 * t / 0.2)  # 60 dB energy decay per 0.2 s
        assert measure_rt60(h, FS) == pytest.approx(0.200, abs=0.005)

    def test_single_impulse_rejected(self):
        h = np.zeros(1000)
        h[10] = 1
        with pytest.raises(ValueError):
            measure_rt60(h, FS)

    def test_default_scene_calibration(self, rirs_05):
        assert 0.140 <= measure_rt60(rirs_05[0, 0], FS) <= 0.280

    def test_high_reflection(self):
        R = simulate_rirs(default_scene(0.8), FS)
        assert 0.300 <= measure_rt60(R[0, 0], FS) <= 0.550

    def test_monotone_in_r(self):
        vals = [measure_rt60(simulate_rirs(default_scene(r), FS)[0, 0], FS)
                for r in (0.2, 0.5, 0.8)]
        assert vals[0] < vals[1] < vals[2]


class TestRendering:
    def test_identity_mixing(self, rng):
        x = rng.standard_normal(500)
        R = RirSet(np.ones((1, 2, 1)), FS)
        y = render_observation(SourceProgram((x,), sample_rate=FS), R)
        np.testing.assert_allclose(y.samples, np.vstack([x, x]))

    def test_silent_second_source(self, rng, rirs_05):
        x = rng.standard_normal(3000)
        both = render_observation(SourceProgram((x, np.zeros(3000))), rirs_05)
        single = RirSet(rirs_05.rirs[:1], FS)
        alone = render_observation(SourceProgram((x,)), single)
        np.testing.assert_allclose(both.samples, alone.samples, atol=1e-12)

    def test_matches_direct_sum(self, rng):
        h = rng.standard_normal((2, 2, 64))
        R = RirSet(h, FS)
        x1, x2 = rng.standard_normal(400), rng.standard_normal(300)
        prog = SourceProgram((x1, x2), (0, 150), FS)
        y = render_observation(prog, R)
        n = 450
        p1 = np.zeros(n); p1[:400] = x1
        p2 = np.zeros(n); p2[150:] = x2
        ref = np.vstack([np.convolve(p1, h[0, j]) + np.convolve(p2, h[1, j]) for j in range(2)])
        assert np.linalg.norm(y.samples - ref) / np.linalg.norm(ref) < 1e-9

    def test_linearity(self, rng, rirs_05):
        a, b = rng.standard_normal((2, 2, 2000))
        ya = render_observation(SourceProgram(tuple(a)), rirs_05).samples
        yb = render_observation(SourceProgram(tuple(b)), rirs_05).samples
        yab = render_observation(SourceProgram(tuple(a + b)), rirs_05).samples
        np.testing.assert_allclose(yab, ya + yb, atol=1e-10)

    def test_source_count_mismatch(self, rirs_05):
        with pytest.raises(ValueError):
            render_observation(SourceProgram((np.ones(10),)), rirs_05)

    def test_sample_rate_mismatch(self, rirs_05):
        with pytest.raises(ValueError, match="sample rate"):
            render_observation(SourceProgram((np.ones(10), np.ones(10)), sample_rate=16000),
                               rirs_05)

    def test_overlapped_program(self):
        p = overlapped_program(np.ones(1000), np.ones(800))
        assert p.offsets == (0, 500)
        assert p.length == 1300

    def test_negative_offset_rejected(self):
        with pytest.raises(ValueError):
            SourceProgram((np.ones(3),), (-1,))


class TestIdeal:
    @pytest.fixture
    def setup(self, rng, rirs_05):
        x1, x2 = rng.standard_normal((2, 4000))
        return overlapped_program(x1, x2), rirs_05

    def test_identity_vc_reduces_to_observation(self, setup):
        prog, R = setup
        ideal = render_ideal(prog.signals[0], prog, R)
        obs = render_observation(prog, R)
        assert np.array_equal(ideal.samples, obs.samples)

    def test_zero_vc_leaves_nontarget(self, setup):
        prog, R = setup
        ideal = render_ideal(np.zeros(4000), prog, R)
        np.testing.assert_allclose(ideal.samples, render_source_image(prog, R, 1).samples,
                                   atol=1e-12)

    def test_half_gain(self, setup):
        prog, R = setup
        ideal = render_ideal(0.5 * prog.signals[0], prog, R)
        obs = render_observation(prog, R).samples
        target = render_source_image(prog, R, 0).samples
        np.testing.assert_allclose(ideal.samples, obs - 0.5 * target, atol=1e-10)

    def test_wave_input_rate_checked(self, setup):
        prog, R = setup
        with pytest.raises(ValueError):
            render_ideal(WaveBuffer(prog.signals[0], 16000), prog, R)
