#===============================================================================
# SongShield - Tests - Adversary
#===============================================================================

#===============================================================================
# Imports
#===============================================================================

import unittest

import numpy as np
import torch

from songshield.adversary import (
    ADVERSARY_FIELDS, FinetuneConfig, NesConfig, QueryCounter, SpeakerOracle,
    attack_harness, finetune_encoder, gaussian_at, nes_gradient,
    optimization_adversary, requantize
)
from songshield.audio import Waveform
from songshield.const import (
    F1, GAUSSIAN, IDENTITY, LYRIC, NES, NES_SAMPLES_PER_DRAW, REQUANTIZE, ValidationError
)
from songshield.metrics import build_pairs, snr

from helpers import handle, noise, small_corpus, untrained_registry


#===============================================================================
# TestTransforms Class
#===============================================================================

class TestTransforms(unittest.TestCase):

    def test_gaussian_exact_snr(self):
        """"""
        w = noise(8000, amplitude=0.2)
        self.assertAlmostEqual(snr(w, gaussian_at(w, 30.0, seed=1)), 30.0, places=6)

    def test_gaussian_seeded(self):
        """"""
        w = noise(1000)
        self.assertEqual(gaussian_at(w, 20.0, 3), gaussian_at(w, 20.0, 3))
        self.assertNotEqual(gaussian_at(w, 20.0, 3), gaussian_at(w, 20.0, 4))

    def test_gaussian_rejects(self):
        """"""
        with self.assertRaises(ValidationError):
            gaussian_at(noise(100), float('inf'))
        with self.assertRaises(ValidationError):
            gaussian_at(Waveform.silence(100, 8000), 20.0)

    def test_requantize_sixteen_bits(self):
        """"""
        w = Waveform(np.array([-32768, -5, 0, 7, 32767]) / 32768.0, 8000)
        self.assertEqual(requantize(w, 16), w)

    def test_requantize_error_bound(self):
        """"""
        w = noise(1000, amplitude=0.9)
        q = requantize(w, 8)
        self.assertLessEqual(np.max(np.abs(q.samples - w.samples)), 2.0 ** -8)
        self.assertEqual(requantize(q, 8), q)

    def test_requantize_bits(self):
        """"""
        for bits in (3, 17):
            with self.assertRaises(ValidationError):
                requantize(noise(10), bits)


#===============================================================================
# TestConfigs Class
#===============================================================================

class TestConfigs(unittest.TestCase):

    def test_nes_budget(self):
        """"""
        self.assertEqual(NesConfig().budget, 50 * 1000)
        self.assertEqual(NesConfig(samples_per_draw=4, iterations=3).budget, 12)

    def test_nes_rejects(self):
        """"""
        for bad in ({'samples_per_draw': 3}, {'samples_per_draw': 0}, {'iterations': -1},
                    {'sigma': 0.0}, {'step_size': -1.0}):
            with self.assertRaises(ValidationError):
                NesConfig(**bad)

    def test_finetune_rejects(self):
        """"""
        for bad in ({'loss_mode': 'f3'}, {'epochs': -1}, {'learning_rate': 0.0}):
            with self.assertRaises(ValidationError):
                FinetuneConfig(**bad)


#===============================================================================
# TestNes Class
#===============================================================================

class TestNes(unittest.TestCase):

    def test_counter(self):
        """"""
        counter = QueryCounter(lambda batch: batch.sum(axis=1))
        np.testing.assert_allclose(counter(np.ones((3, 4))), [4.0, 4.0, 4.0])
        counter(np.ones(4))
        self.assertEqual(counter.calls, 4)

    def test_linear_oracle(self):
        """"""
        c = np.random.default_rng(0).normal(size=16)
        counter = QueryCounter(lambda batch: batch @ c)
        cfg = NesConfig(samples_per_draw=20000, sigma=0.01)
        estimate = nes_gradient(counter, np.zeros(16), cfg, np.random.default_rng(1))
        self.assertEqual(counter.calls, 20000)
        cosine = np.dot(estimate, c) / (np.linalg.norm(estimate) * np.linalg.norm(c))
        self.assertGreater(cosine, 0.95)

    def test_quadratic_oracle_at_defaults(self):
        """"""
        x = np.ones(4)
        cosines = []
        for seed in range(10):
            counter = QueryCounter(lambda batch: (batch ** 2).sum(axis=1))
            estimate = nes_gradient(counter, x, NesConfig(), np.random.default_rng(seed))
            self.assertEqual(counter.calls, NES_SAMPLES_PER_DRAW)
            cosines.append(np.dot(estimate, 2 * x) / (np.linalg.norm(estimate) * np.linalg.norm(2 * x)))
        self.assertGreaterEqual(np.mean(cosines), 0.9)

    def test_speaker_oracle(self):
        """"""
        h = handle(IDENTITY, seed=3)
        w = noise(2048, seed=2)
        with torch.no_grad():
            centroid = h.embed(w.as_tensor())
        scores = SpeakerOracle(h, centroid)(np.stack([w.samples, noise(2048, seed=5).samples]))
        self.assertAlmostEqual(float(scores[0]), 1.0)
        self.assertLess(float(scores[1]), 1.0)

    def test_zero_iterations(self):
        """"""
        clip = small_corpus()[0]
        h = handle(IDENTITY, seed=3)
        counter = QueryCounter(SpeakerOracle(h, np.ones(32)))
        song = optimization_adversary(clip.song, clip.voice, counter, [handle(LYRIC, seed=4)],
                                      NesConfig(iterations=0))
        self.assertEqual(song.voice, clip.voice)
        self.assertEqual(counter.calls, 0)

    def test_budget_respected(self):
        """"""
        clip = small_corpus()[0]
        counter = QueryCounter(SpeakerOracle(handle(IDENTITY, seed=3), np.ones(32)))
        cfg = NesConfig(samples_per_draw=4, iterations=5, budget=9)
        trace = []
        song = optimization_adversary(clip.song, clip.voice, counter, [handle(LYRIC, seed=4)],
                                      cfg, trace=trace)
        self.assertEqual(counter.calls, 8)
        self.assertEqual([t[0] for t in trace], [1, 2])
        self.assertLessEqual(np.max(np.abs(song.voice.perturbation(clip.voice))), 2 * cfg.step_size + 1e-12)


#===============================================================================
# TestFinetune Class
#===============================================================================

class TestFinetune(unittest.TestCase):

    def setUp(self):
        """"""
        self.h = handle(IDENTITY, 'identity_eval', 5, held_out=True)
        self.pairs = [(noise(2048, seed=1), noise(2048, seed=2))]

    def test_zero_epochs(self):
        """"""
        tuned = finetune_encoder(self.h, self.pairs, FinetuneConfig(loss_mode=F1, epochs=0))
        self.assertEqual(tuned.id, 'identity_eval_ft')
        for a, b in zip(self.h.parameters(), tuned.parameters()):
            self.assertTrue(torch.equal(a, b))

    def test_original_untouched(self):
        """"""
        before = [p.clone() for p in self.h.parameters()]
        tuned = finetune_encoder(self.h, self.pairs, FinetuneConfig(loss_mode=F1, epochs=3))
        for a, b in zip(before, self.h.parameters()):
            self.assertTrue(torch.equal(a, b))
        self.assertFalse(all(torch.equal(a, b) for a, b in zip(before, tuned.parameters())))
        self.assertTrue(tuned.held_out)
        self.assertFalse(any(p.requires_grad for p in tuned.parameters()))

    def test_needs_pairs(self):
        """"""
        with self.assertRaises(ValidationError):
            finetune_encoder(self.h, [], FinetuneConfig(loss_mode=F1))

    def test_classification_needs_labels(self):
        """"""
        with self.assertRaises(ValidationError):
            finetune_encoder(self.h, self.pairs, FinetuneConfig())


#===============================================================================
# TestHarness Class
#===============================================================================

class TestHarness(unittest.TestCase):

    def setUp(self):
        """"""
        self.corpus = small_corpus()
        self.registry = untrained_registry()
        self.protected = dict((c.name, c.voice) for c in self.corpus)
        self.pairs = build_pairs(self.corpus, 2, np.random.default_rng(0))

    def test_baseline_only(self):
        """"""
        rows, reports = attack_harness(self.corpus, self.registry, self.protected, self.pairs, [])
        self.assertEqual(len(rows), 1)
        self.assertEqual(rows[0]['adversary'], 'baseline')
        self.assertEqual(sorted(rows[0]), sorted(ADVERSARY_FIELDS))
        self.assertEqual(len(reports), 1)

    def test_transforms(self):
        """"""
        rows, _ = attack_harness(self.corpus, self.registry, self.protected, self.pairs,
                                 [GAUSSIAN, REQUANTIZE])
        self.assertEqual([r['adversary'] for r in rows],
                         ['baseline', 'gaussian_30dB', 'requantize_8bit'])
        self.assertEqual([r['attacked_songs'] for r in rows], [0, 8, 8])

    def test_nes_queries_per_song(self):
        """"""
        traces = {}
        cfg = NesConfig(samples_per_draw=4, iterations=2, songs=2)
        rows, reports = attack_harness(self.corpus, self.registry, self.protected, self.pairs,
                                       [NES], nes=cfg, traces=traces)
        self.assertEqual(rows[1]['adversary'], 'nes')
        self.assertEqual(rows[1]['queries_per_song'], 8)
        self.assertEqual(rows[1]['attacked_songs'], 2)
        self.assertEqual(sorted(traces), sorted(self.protected)[:2])
        for trace in traces.values():
            self.assertEqual([t[0] for t in trace], [1, 2])

    def test_unknown_adversary(self):
        """"""
        with self.assertRaises(ValidationError):
            attack_harness(self.corpus, self.registry, self.protected, self.pairs, ['shout'])
