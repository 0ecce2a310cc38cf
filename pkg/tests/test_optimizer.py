#===============================================================================
# SongShield - Tests - Optimizer
#===============================================================================

#===============================================================================
# Imports
#===============================================================================

import math
import os
import shutil
import tempfile
import unittest

import numpy as np
import torch

from songshield.const import (
    F_H, F_ID_TE, F_L, F_LY_TE, F_T, F_U, F_UT, HIGH, LOW, UNTARGETED, VOICE,
    NumericalError, ValidationError
)
from songshield.optimizer import (
    AdamState, LossStats, ProtectionConfig, ProtectionContext, adam_step,
    build_context, build_profiles, clip_seed, normalize_loss, protect,
    protect_corpus
)
from songshield.psychoacoustic import song_thresholds

from helpers import small_corpus, untrained_registry


def context_for(clip, cfg, seed=0):
    corpus = small_corpus()
    profiles = build_profiles(corpus)
    return build_context(clip.song, profiles[clip.singer], corpus, untrained_registry(), cfg,
                         np.random.default_rng(seed), symbols=clip.symbols, exclude=clip.name,
                         profiles=profiles)


#===============================================================================
# TestNormalize Class
#===============================================================================

class TestNormalize(unittest.TestCase):

    def test_first_value_is_zero(self):
        """"""
        stats = LossStats()
        self.assertEqual(normalize_loss(stats, 'f', 2.0, 1), 0.0)
        self.assertEqual(stats.mu['f'], 2.0)
        self.assertEqual(stats.sigma['f'], 0.0)

    def test_second_value(self):
        """"""
        stats = LossStats()
        normalize_loss(stats, 'f', 2.0, 1)
        value = normalize_loss(stats, 'f', 4.0, 2)
        self.assertAlmostEqual(value, 1.0 / math.sqrt(0.5 + 1e-8), places=12)
        self.assertEqual(stats.mu['f'], 3.0)
        self.assertEqual(stats.sigma['f'], 0.5)

    def test_hundred_values(self):
        """"""
        values = np.random.default_rng(7).normal(3.0, 2.0, size=100)
        steps = np.arange(1, 101)
        mu = np.cumsum(values) / steps
        # variance of the deviations from the already updated mean
        sigma = np.cumsum((values - mu) ** 2) / steps
        stale = np.cumsum((values - np.concatenate([[0.0], mu[:-1]])) ** 2) / steps
        self.assertGreater(np.abs(sigma - stale).max(), 1e-3)

        stats = LossStats()
        out = [normalize_loss(stats, 'f', v, n) for n, v in zip(steps, values)]
        np.testing.assert_allclose(out, (values - mu) / np.sqrt(sigma + 1e-8), rtol=1e-9, atol=1e-12)
        self.assertAlmostEqual(stats.mu['f'], values.mean(), places=10)
        self.assertAlmostEqual(stats.sigma['f'], sigma[-1], places=10)

    def test_losses_tracked_apart(self):
        """"""
        stats = LossStats()
        normalize_loss(stats, 'a', 1.0, 1)
        normalize_loss(stats, 'b', 5.0, 1)
        self.assertEqual((stats.mu['a'], stats.mu['b']), (1.0, 5.0))

    def test_statistics_are_constants(self):
        """"""
        stats = LossStats()
        normalize_loss(stats, 'f', 1.0, 1)
        x = torch.tensor(3.0, dtype=torch.float64, requires_grad=True)
        value = normalize_loss(stats, 'f', x * 2.0, 2)
        grad, = torch.autograd.grad(value, x)
        self.assertAlmostEqual(float(grad), 2.0 / math.sqrt(stats.sigma['f'] + 1e-8))

    def test_iteration_starts_at_one(self):
        """"""
        with self.assertRaises(ValidationError):
            normalize_loss(LossStats(), 'f', 1.0, 0)


#===============================================================================
# TestAdam Class
#===============================================================================

class TestAdam(unittest.TestCase):

    def test_first_step(self):
        """"""
        state = AdamState((1,))
        x = adam_step(state, torch.tensor([0.5], dtype=torch.float64), torch.tensor([2.0]), 0.001)
        self.assertAlmostEqual(float(x[0]), 0.499, places=9)
        self.assertEqual(state.t, 1)

    def test_zero_gradient(self):
        """"""
        state = AdamState((3,))
        x = torch.tensor([0.1, -0.2, 0.3], dtype=torch.float64)
        for _ in range(5):
            x_next = adam_step(state, x, torch.zeros(3), 0.01)
            self.assertTrue(torch.equal(x_next, x))
            x = x_next

    def test_shape_mismatch(self):
        """"""
        with self.assertRaises(ValidationError):
            adam_step(AdamState((2,)), torch.zeros(2, dtype=torch.float64), torch.zeros(3), 0.01)

    def test_non_finite_gradient(self):
        """"""
        with self.assertRaises(NumericalError):
            adam_step(AdamState((2,)), torch.zeros(2, dtype=torch.float64),
                      torch.tensor([0.0, float('nan')]), 0.01)


#===============================================================================
# TestProtectionConfig Class
#===============================================================================

class TestProtectionConfig(unittest.TestCase):

    def test_default_losses(self):
        """"""
        self.assertEqual(ProtectionConfig().enabled_losses(), [F_UT, F_T, F_H, F_L, F_U])

    def test_all_losses(self):
        """"""
        cfg = ProtectionConfig(transfer_identity=True, transfer_lyric=True)
        self.assertEqual(cfg.enabled_losses(), [F_UT, F_T, F_H, F_L, F_U, F_ID_TE, F_LY_TE])

    def test_no_disruption(self):
        """"""
        cfg = ProtectionConfig(protect_target=False, protect_source=False)
        self.assertEqual(cfg.enabled_losses(), [F_U])
        self.assertFalse(cfg.protective)

    def test_variants(self):
        """"""
        self.assertEqual(ProtectionConfig(identity_variant=UNTARGETED, protect_source=False)
                         .enabled_losses(), [F_UT, F_U])
        self.assertEqual(ProtectionConfig(lyric_hierarchy=HIGH, protect_target=False)
                         .enabled_losses(), [F_H, F_U])
        self.assertEqual(ProtectionConfig(lyric_hierarchy=LOW, protect_target=False)
                         .enabled_losses(), [F_L, F_U])

    def test_validation(self):
        """"""
        for bad in ({'iterations': 0}, {'learning_rate': 0.0}, {'num_targets': 0},
                    {'identity_variant': 'x'}, {'lyric_hierarchy': 'x'},
                    {'utility_masker': 'x'}, {'balance': 'manual'},
                    {'balance': {'f_nope': 1.0}}, {'balance': {F_U: float('inf')}}):
            with self.assertRaises(ValidationError):
                ProtectionConfig(**bad)

    def test_weights(self):
        """"""
        self.assertEqual(ProtectionConfig().weight(F_U), 1.0)
        cfg = ProtectionConfig(balance={F_U: 5.0})
        self.assertEqual(cfg.weight(F_U), 5.0)
        self.assertEqual(cfg.weight(F_UT), 1.0)

    def test_replace(self):
        """"""
        cfg = ProtectionConfig(iterations=7, seed=1)
        other = cfg.replace(seed=9)
        self.assertEqual((other.iterations, other.seed, cfg.seed), (7, 9, 1))


#===============================================================================
# TestProtect Class
#===============================================================================

class TestProtect(unittest.TestCase):

    def setUp(self):
        """"""
        self.clip = small_corpus()[0]

    def test_no_disruption_is_bit_exact(self):
        """"""
        cfg = ProtectionConfig(iterations=3, protect_target=False, protect_source=False)
        result = protect(self.clip.song, context_for(self.clip, cfg), cfg)
        self.assertEqual(result.protected, self.clip.voice)
        self.assertEqual(result.raw[F_U], [0.0, 0.0, 0.0])
        self.assertEqual(result.snapshot['snr_voice_db'], math.inf)

    def test_deterministic(self):
        """"""
        cfg = ProtectionConfig(iterations=2, num_targets=2, seed=5)
        a = protect(self.clip.song, context_for(self.clip, cfg, 1), cfg)
        b = protect(self.clip.song, context_for(self.clip, cfg, 1), cfg)
        self.assertEqual(a.protected, b.protected)
        self.assertEqual(a.raw, b.raw)

    def test_default_run(self):
        """"""
        cfg = ProtectionConfig(iterations=2, num_targets=2)
        ctx = context_for(self.clip, cfg)
        result = protect(self.clip.song, ctx, cfg)
        self.assertEqual(list(result.raw), [F_UT, F_T, F_H, F_L, F_U])
        self.assertNotEqual(result.protected, self.clip.voice)
        self.assertTrue(np.all(np.abs(result.protected.samples) <= 1.0))
        self.assertNotEqual(ctx.destination.gender, self.clip.gender)
        for name in result.raw:
            self.assertEqual(result.normalized[name][0], 0.0)
            self.assertEqual(result.snapshot['final_%s' % name], result.raw[name][-1])
        self.assertLess(np.max(np.abs(result.protected.perturbation(self.clip.voice))), 0.003)

    def test_trace_rows(self):
        """"""
        cfg = ProtectionConfig(iterations=2, protect_target=False, protect_source=False)
        result = protect(self.clip.song, context_for(self.clip, cfg), cfg)
        rows = result.trace_rows()
        self.assertEqual(len(rows), 2)
        self.assertEqual([r['iteration'] for r in rows], [1, 2])
        self.assertEqual(rows[0]['loss'], F_U)

    def test_explicit_balance(self):
        """"""
        cfg = ProtectionConfig(iterations=2, num_targets=2, protect_source=False,
                               balance={F_UT: 2.0, F_U: 0.5})
        result = protect(self.clip.song, context_for(self.clip, cfg), cfg)
        for name, weight in ((F_UT, 2.0), (F_T, 1.0), (F_U, 0.5)):
            for raw, term in zip(result.raw[name], result.normalized[name]):
                self.assertAlmostEqual(term, weight * raw)

    def test_voice_masker(self):
        """"""
        cfg = ProtectionConfig(utility_masker=VOICE)
        voice, _, joint = song_thresholds(self.clip.song, cfg.analysis)
        ctx = ProtectionContext((voice, None, joint), [], [])
        self.assertIs(ctx.threshold(cfg), voice)
        self.assertIs(ctx.threshold(ProtectionConfig()), joint)


#===============================================================================
# TestContext Class
#===============================================================================

class TestContext(unittest.TestCase):

    def test_missing_destination(self):
        """"""
        registry = untrained_registry()
        ctx = ProtectionContext(None, registry.ensemble('identity'), [], targets=None)
        with self.assertRaises(ValidationError):
            ctx.check(ProtectionConfig(protect_source=False))

    def test_missing_encoders(self):
        """"""
        with self.assertRaises(ValidationError):
            ProtectionContext(None, [], []).check(ProtectionConfig(protect_source=False))

    def test_missing_targets(self):
        """"""
        registry = untrained_registry()
        ctx = ProtectionContext(None, [], registry.ensemble('lyric'))
        with self.assertRaises(ValidationError):
            ctx.check(ProtectionConfig(protect_target=False))

    def test_build_context_no_disruption(self):
        """"""
        clip = small_corpus()[0]
        ctx = context_for(clip, ProtectionConfig(protect_target=False, protect_source=False))
        self.assertIsNone(ctx.destination)
        self.assertIsNone(ctx.targets)

    def test_build_context_targets(self):
        """"""
        clip = small_corpus()[0]
        ctx = context_for(clip, ProtectionConfig(num_targets=3))
        self.assertEqual(len(ctx.targets), 3)
        self.assertNotIn(clip.symbols, ctx.targets.symbols)
        self.assertEqual([h.id for h in ctx.identity_handles], ['identity0', 'identity1'])

    def test_clip_seed(self):
        """"""
        self.assertEqual(clip_seed(3, 1), clip_seed(3, 1))
        self.assertNotEqual(clip_seed(3, 1), clip_seed(3, 2))
        self.assertNotEqual(clip_seed(3, 1), clip_seed(4, 1))


#===============================================================================
# TestProtectCorpus Class
#===============================================================================

class TestProtectCorpus(unittest.TestCase):

    def setUp(self):
        """"""
        self.folder = tempfile.mkdtemp()

    def tearDown(self):
        """"""
        shutil.rmtree(self.folder)

    def test_writes_every_clip(self):
        """"""
        corpus = small_corpus()
        cfg = ProtectionConfig(iterations=1, protect_target=False, protect_source=False)
        snapshots = protect_corpus(corpus, untrained_registry(), cfg, self.folder)
        self.assertEqual(sorted(snapshots), sorted(c.name for c in corpus))
        for clip in corpus:
            for suffix in ('_voice.wav', '.trace.csv', '.summary.txt'):
                self.assertTrue(os.path.exists(os.path.join(self.folder, clip.name + suffix)))
