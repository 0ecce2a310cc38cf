#===============================================================================
# SongShield - Tests - Corpus
#===============================================================================

#===============================================================================
# Imports
#===============================================================================

import os
import shutil
import tempfile
import unittest

import numpy as np

from songshield.audio import FrameSpec, Song
from songshield.const import FEMALE, MALE, ValidationError
from songshield.corpus import (
    Clip, Corpus, SyntheticCorpus, formant_table, open_corpus, render_reference,
    save_corpus, segment_bounds, symbol_formants, symbol_names
)

from helpers import noise, small_corpus


#===============================================================================
# TestClip Class
#===============================================================================

class TestClip(unittest.TestCase):

    def setUp(self):
        """"""
        self.clip = Clip('c', 'singer00', FEMALE, ['a', 'b', 'c', 'd'],
                         Song(noise(8000), noise(8000, seed=1)))

    def test_segments(self):
        """"""
        self.assertEqual(self.clip.segments(), [
            (0, 2000, 'a'), (2000, 4000, 'b'), (4000, 6000, 'c'), (6000, 8000, 'd')])

    def test_frame_labels(self):
        """"""
        labels = self.clip.frame_labels(FrameSpec(512, 128))
        self.assertEqual(len(labels), (8000 - 512) // 128 + 1)
        self.assertEqual(labels[0], 0)
        self.assertEqual(labels[11], 0)
        self.assertEqual(labels[12], -1)
        self.assertEqual(labels[-1], 3)

    def test_unknown_gender(self):
        """"""
        with self.assertRaises(ValidationError):
            Clip('c', 's', 'X', ['a'], self.clip.song)

    def test_no_symbols(self):
        """"""
        with self.assertRaises(ValidationError):
            Clip('c', 's', FEMALE, [], self.clip.song)


#===============================================================================
# TestCorpus Class
#===============================================================================

class TestCorpus(unittest.TestCase):

    def setUp(self):
        """"""
        self.corpus = small_corpus()

    def test_size(self):
        """"""
        self.assertEqual(len(self.corpus), 8)
        self.assertEqual(self.corpus.singers(), ['singer00', 'singer01', 'singer02', 'singer03'])
        self.assertTrue(set(self.corpus.vocabulary()) <= set('abcd'))

    def test_genders(self):
        """"""
        self.assertEqual(self.corpus.gender_of('singer00'), FEMALE)
        self.assertEqual(self.corpus.gender_of('singer03'), MALE)
        with self.assertRaises(ValidationError):
            self.corpus.gender_of('nobody')

    def test_lookup(self):
        """"""
        clip = self.corpus['singer01_00']
        self.assertEqual(clip.singer, 'singer01')
        self.assertIs(self.corpus[0], self.corpus.clips[0])
        with self.assertRaises(ValidationError):
            self.corpus['nope']

    def test_duplicate_name(self):
        """"""
        corpus = Corpus(list(self.corpus)[:2])
        with self.assertRaises(ValidationError):
            corpus.add(self.corpus[0])

    def test_find_clips(self):
        """"""
        female = self.corpus.find_clips(gender=FEMALE)
        self.assertEqual(len(female), 4)
        self.assertTrue(all(c.gender == FEMALE for c in female))
        first = self.corpus[0]
        rest = self.corpus.find_clips(exclude_symbols=first.symbols)
        self.assertNotIn(first, rest)

    def test_random_clips(self):
        """"""
        rng = np.random.default_rng(0)
        picked = self.corpus.random_clips(3, rng, gender=MALE)
        self.assertEqual(len(picked), 3)
        self.assertEqual(len(set(c.name for c in picked)), 3)
        self.assertEqual(len(self.corpus.random_clips(10, rng, singer='singer00')), 2)

    def test_split(self):
        """"""
        kept, held = self.corpus.split(0.5, np.random.default_rng(1))
        self.assertEqual((len(kept), len(held)), (4, 4))
        self.assertEqual(kept.singers(), held.singers())
        kept, held = self.corpus.split(0.0, np.random.default_rng(1))
        self.assertEqual(len(held), 0)
        with self.assertRaises(ValidationError):
            self.corpus.split(1.0, np.random.default_rng(1))


#===============================================================================
# TestSyntheticCorpus Class
#===============================================================================

class TestSyntheticCorpus(unittest.TestCase):

    def test_deterministic(self):
        """"""
        again = SyntheticCorpus(singers=4, symbols=4, clips_per_singer=2, seed=3)
        for a, b in zip(small_corpus(), again):
            self.assertEqual(a, b)
            self.assertEqual(a.voice, b.voice)
            self.assertEqual(a.song.backing, b.song.backing)

    def test_seed_changes_audio(self):
        """"""
        other = SyntheticCorpus(singers=4, symbols=4, clips_per_singer=2, seed=4)
        self.assertNotEqual(small_corpus()[0].voice, other[0].voice)

    def test_peaks(self):
        """"""
        for clip in small_corpus():
            self.assertAlmostEqual(np.max(np.abs(clip.voice.samples)), 0.5)
            self.assertAlmostEqual(np.max(np.abs(clip.song.backing.samples)), 0.3)
            self.assertEqual(len(clip.voice), 8000)
            self.assertEqual(len(clip.symbols), 4)

    def test_f0_registers(self):
        """"""
        for voice in small_corpus().voices:
            if voice.gender == FEMALE:
                self.assertTrue(220.0 <= voice.f0 <= 330.0)
            else:
                self.assertTrue(110.0 <= voice.f0 <= 165.0)

    def test_rejects_bad_counts(self):
        """"""
        with self.assertRaises(ValidationError):
            SyntheticCorpus(singers=2)
        with self.assertRaises(ValidationError):
            SyntheticCorpus(singers=5)
        with self.assertRaises(ValidationError):
            SyntheticCorpus(symbols=1)

    def test_symbol_names(self):
        """"""
        self.assertEqual(symbol_names(3), ['a', 'b', 'c'])
        self.assertEqual(symbol_names(30)[-1], 's29')

    def test_segment_bounds(self):
        """"""
        self.assertEqual(segment_bounds(10, 3), [(0, 3), (3, 7), (7, 10)])

    def test_render_reference(self):
        """"""
        a = render_reference(['a', 'b'], 4000, seed=2)
        self.assertEqual(len(a), 4000)
        self.assertEqual(a, render_reference(['a', 'b'], 4000, seed=2))


#===============================================================================
# TestFormantTable Class
#===============================================================================

class TestFormantTable(unittest.TestCase):

    def setUp(self):
        """"""
        self.corpus = SyntheticCorpus(singers=4, symbols=8, clips_per_singer=1,
                                      symbols_per_clip=2, clip_seconds=0.25, seed=0)

    def test_unsung_symbols_keep_positions(self):
        """"""
        loaded = Corpus(list(self.corpus))
        self.assertIsNone(loaded.formants)
        table = loaded.formant_table()
        for symbol in loaded.vocabulary():
            self.assertEqual(table[symbol], self.corpus.formants[symbol])

    def test_numbered_symbols(self):
        """"""
        full = symbol_formants(symbol_names(30), np.random.default_rng(0))
        table = formant_table(['s3', 's29', 's10'])
        for symbol in ('s3', 's10', 's29'):
            self.assertEqual(table[symbol], full[symbol])
        self.assertEqual(formant_table(['s5'])['s5'], full['s5'])

    def test_split_keeps_formants(self):
        """"""
        kept, held = self.corpus.split(0.5, np.random.default_rng(0))
        self.assertEqual(kept.formants, self.corpus.formants)
        self.assertEqual(held.formant_table(), self.corpus.formants)

    def test_reference_sings_corpus_formants(self):
        """"""
        symbols = self.corpus.vocabulary()[-2:]
        ours = render_reference(symbols, 2000, seed=1, formants=self.corpus.formants)
        self.assertEqual(render_reference(symbols, 2000, seed=1), ours)

    def test_unknown_name(self):
        """"""
        with self.assertRaises(ValidationError):
            formant_table(['ah'])


#===============================================================================
# TestCorpusFiles Class
#===============================================================================

class TestCorpusFiles(unittest.TestCase):

    def setUp(self):
        """"""
        self.folder = tempfile.mkdtemp()

    def tearDown(self):
        """"""
        shutil.rmtree(self.folder)

    def test_save_and_open(self):
        """"""
        corpus = small_corpus()
        manifest = save_corpus(corpus, self.folder)
        self.assertEqual(manifest, os.path.join(self.folder, 'manifest.csv'))
        self.assertTrue(os.path.exists(os.path.join(self.folder, 'singer00_00_voice.wav')))
        loaded = open_corpus(manifest)
        self.assertEqual(list(loaded), list(corpus))
        for a, b in zip(loaded, corpus):
            self.assertEqual(a.gender, b.gender)
            np.testing.assert_allclose(a.voice.samples, b.voice.samples, atol=1.0 / 32768)

    def test_missing_manifest(self):
        """"""
        with self.assertRaises(OSError):
            open_corpus(os.path.join(self.folder, 'missing.csv'))
