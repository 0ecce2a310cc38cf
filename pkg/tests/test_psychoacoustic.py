#===============================================================================
# SongShield - Tests - Psychoacoustic
#===============================================================================

#===============================================================================
# Imports
#===============================================================================

import os
import shutil
import tempfile
import unittest

import numpy as np

from songshield.audio import FrameSpec, Song, Waveform
from songshield.const import BACKING, FLOOR_DB, JOINT, VOICE, ValidationError
from songshield.psychoacoustic import (
    MaskingThreshold, absolute_threshold_of_hearing, bark_scale, compute_psd,
    joint_threshold, masking_threshold, power_spectral_density, save_threshold_csv,
    song_thresholds, utility_loss
)

from helpers import directional_check, noise, random_direction, relative_error, tone


SPEC = FrameSpec(256, 128)


#===============================================================================
# TestPsd Class
#===============================================================================

class TestPsd(unittest.TestCase):

    def test_silence_at_floor(self):
        """"""
        p = compute_psd(Waveform.silence(1024, 8000), SPEC)
        self.assertTrue(np.all(p.values == FLOOR_DB))

    def test_peak_at_reference(self):
        """"""
        p = compute_psd(tone(1000.0, 1024, amplitude=1.0), SPEC)
        self.assertAlmostEqual(p.values.max(), 96.0, places=9)

    def test_scale_invariance(self):
        """"""
        quiet = compute_psd(tone(440.0, 1024, amplitude=0.05), SPEC)
        loud = compute_psd(tone(440.0, 1024, amplitude=0.5), SPEC)
        np.testing.assert_allclose(quiet.values, loud.values, atol=1e-6)
        self.assertAlmostEqual(loud.reference_db - quiet.reference_db, 20.0, places=6)

    def test_fixed_reference(self):
        """"""
        loud = compute_psd(tone(440.0, 1024, amplitude=0.5), SPEC)
        quiet = compute_psd(tone(440.0, 1024, amplitude=0.05), SPEC, loud.reference_db)
        self.assertAlmostEqual(quiet.values.max(), 76.0, places=6)

    def test_shape(self):
        """"""
        p = compute_psd(noise(1024), SPEC)
        self.assertEqual(p.shape, (SPEC.num_frames(1024), SPEC.num_bins))
        self.assertTrue(np.all(np.isfinite(p.values)))


#===============================================================================
# TestMaskingThreshold Class
#===============================================================================

class TestMaskingThreshold(unittest.TestCase):

    def setUp(self):
        """"""
        self.ath = absolute_threshold_of_hearing(SPEC.frequencies(8000))

    def test_ath_finite_at_dc(self):
        """"""
        self.assertTrue(np.all(np.isfinite(self.ath)))

    def test_bark_monotone(self):
        """"""
        self.assertTrue(np.all(np.diff(bark_scale(SPEC.frequencies(8000))) > 0))

    def test_silence_gives_ath(self):
        """"""
        theta = masking_threshold(compute_psd(Waveform.silence(1024, 8000), SPEC), SPEC, 8000)
        np.testing.assert_allclose(theta.values, np.tile(self.ath, (theta.shape[0], 1)))

    def test_never_below_ath(self):
        """"""
        theta = masking_threshold(compute_psd(noise(2048), SPEC), SPEC, 8000)
        self.assertTrue(np.all(theta.values >= self.ath[None, :]))

    def test_tone_raises_threshold(self):
        """"""
        loud = tone(440.0, 1024, amplitude=0.5)
        quiet = tone(440.0, 1024, amplitude=0.05)
        p_loud = compute_psd(loud, SPEC)
        p_quiet = compute_psd(quiet, SPEC, p_loud.reference_db)
        t_loud = masking_threshold(p_loud, SPEC, 8000)
        t_quiet = masking_threshold(p_quiet, SPEC, 8000)
        peak = int(np.argmax(p_loud.values[0]))
        rise = t_loud.values[:, peak] - t_quiet.values[:, peak]
        self.assertTrue(np.all(np.abs(rise - 20.0) <= 1.0))

    def test_tone_threshold_peaks_near_masker(self):
        """"""
        theta = masking_threshold(compute_psd(tone(440.0, 1024), SPEC), SPEC, 8000)
        bark = bark_scale(SPEC.frequencies(8000))
        for frame in theta.values:
            self.assertLess(abs(bark[int(np.argmax(frame))] - bark_scale([440.0])[0]), 1.0)

    def test_bins_mismatch(self):
        """"""
        p = compute_psd(noise(1024), SPEC)
        with self.assertRaises(ValidationError):
            masking_threshold(p, FrameSpec(128, 64), 8000)


#===============================================================================
# TestJointThreshold Class
#===============================================================================

class TestJointThreshold(unittest.TestCase):

    def test_max(self):
        """"""
        a = MaskingThreshold([[10.0, 0.0]], VOICE, 0.0)
        b = MaskingThreshold([[0.0, 10.0]], BACKING, 0.0)
        joint = joint_threshold(a, b)
        np.testing.assert_array_equal(joint.values, [[10.0, 10.0]])
        self.assertEqual(joint.source, JOINT)

    def test_idempotent(self):
        """"""
        a = MaskingThreshold([[1.0, 2.0], [3.0, 4.0]], VOICE, 0.0)
        np.testing.assert_array_equal(joint_threshold(a, a).values, a.values)

    def test_dominates_parents(self):
        """"""
        rng = np.random.default_rng(4)
        a = MaskingThreshold(rng.normal(size=(5, 7)), VOICE, 1.0)
        b = MaskingThreshold(rng.normal(size=(5, 7)), BACKING, 1.0)
        joint = joint_threshold(a, b)
        self.assertTrue(np.all(joint.values >= a.values))
        self.assertTrue(np.all(joint.values >= b.values))

    def test_reference_mismatch(self):
        """"""
        a = MaskingThreshold([[1.0]], VOICE, 0.0)
        b = MaskingThreshold([[1.0]], BACKING, 3.0)
        with self.assertRaises(ValidationError):
            joint_threshold(a, b)

    def test_song_thresholds_share_reference(self):
        """"""
        song = Song(noise(2048, amplitude=0.2), tone(330.0, 2048, amplitude=0.4))
        voice, backing, joint = song_thresholds(song, SPEC)
        self.assertEqual(voice.reference_db, backing.reference_db)
        self.assertEqual(joint.reference_db, voice.reference_db)
        np.testing.assert_array_equal(joint.values, np.maximum(voice.values, backing.values))


#===============================================================================
# TestUtilityLoss Class
#===============================================================================

class TestUtilityLoss(unittest.TestCase):

    def setUp(self):
        """"""
        self.x0 = noise(1024, amplitude=0.3, seed=1)
        self.delta = noise(1024, amplitude=0.01, seed=2)
        self.x = Waveform(self.x0.samples + self.delta.samples, 8000)
        self.reference = compute_psd(self.x0, SPEC).reference_db

    def test_zero_perturbation(self):
        """"""
        theta = masking_threshold(compute_psd(self.x0, SPEC), SPEC, 8000)
        self.assertEqual(float(utility_loss(self.x0, self.x0, theta, SPEC)), 0.0)

    def test_single_bin_excess(self):
        """"""
        p, _ = power_spectral_density(self.x.as_tensor() - self.x0.as_tensor(), SPEC,
                                      self.reference)
        values = p.numpy() + 10.0
        values[1, 3] = p.numpy()[1, 3] - 6.0
        theta = MaskingThreshold(values, VOICE, self.reference)
        expected = 6.0 / values.size
        self.assertAlmostEqual(float(utility_loss(self.x, self.x0, theta, SPEC)), expected, places=9)

    def test_refined_below_basic(self):
        """"""
        song = Song(self.x0, tone(330.0, 1024, amplitude=0.5))
        voice, _, joint = song_thresholds(song, SPEC)
        basic = float(utility_loss(self.x, self.x0, voice, SPEC))
        refined = float(utility_loss(self.x, self.x0, joint, SPEC))
        self.assertLessEqual(refined, basic)

    def test_length_mismatch(self):
        """"""
        theta = masking_threshold(compute_psd(self.x0, SPEC), SPEC, 8000)
        with self.assertRaises(ValidationError):
            utility_loss(noise(1100), self.x0, theta, SPEC)

    def test_gradient(self):
        """"""
        shape = (SPEC.num_frames(1024), SPEC.num_bins)
        theta = MaskingThreshold(np.full(shape, -50.0), VOICE, self.reference)
        x0 = self.x0.as_tensor()

        def f(x):
            return utility_loss(x, x0, theta, SPEC)

        analytic, numeric = directional_check(f, self.x.as_tensor(), random_direction(1024, 3))
        self.assertLess(relative_error(analytic, numeric), 1e-3)


#===============================================================================
# TestExport Class
#===============================================================================

class TestExport(unittest.TestCase):

    def test_csv(self):
        """"""
        folder = tempfile.mkdtemp()
        try:
            theta = masking_threshold(compute_psd(noise(1024), SPEC), SPEC, 8000)
            path = os.path.join(folder, 'theta.csv')
            save_threshold_csv(theta, path)
            loaded = np.loadtxt(path, delimiter=',')
            np.testing.assert_allclose(loaded, theta.values, atol=1e-6)
        finally:
            shutil.rmtree(folder)
