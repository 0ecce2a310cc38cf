#===============================================================================
# SongShield - Tests - Utils
#===============================================================================

#===============================================================================
# Imports
#===============================================================================

import os
import shutil
import tempfile
import unittest

import numpy as np
import torch

from songshield.const import IDENTITY, LYRIC, ValidationError
from songshield.encoders import identity_embed
from songshield.utils import (
    open_encoder, open_manifest, open_registry, save_adversary_trace, save_encoder,
    save_manifest, save_registry, save_summary, write_csv
)

from helpers import handle, noise, untrained_registry


#===============================================================================
# TestUtils Class
#===============================================================================

class TestUtils(unittest.TestCase):

    def setUp(self):
        """"""
        self.folder = tempfile.mkdtemp()

    def tearDown(self):
        """"""
        shutil.rmtree(self.folder)

    def path(self, name):
        return os.path.join(self.folder, name)

    def test_encoder_file(self):
        """"""
        h = handle(IDENTITY, 'identity_eval', 7, held_out=True)
        save_encoder(h, self.path('h.enc'))
        loaded = open_encoder(self.path('h.enc'))
        self.assertEqual((loaded.id, loaded.kind, loaded.held_out), ('identity_eval', IDENTITY, True))
        self.assertEqual(loaded.front_end, h.front_end)
        for key, value in h.state_dict().items():
            self.assertTrue(torch.equal(loaded.state_dict()[key], value))
        w = noise(2048)
        np.testing.assert_array_equal(identity_embed(loaded, w), identity_embed(h, w))
        self.assertFalse(any(p.requires_grad for p in loaded.parameters()))

    def test_encoder_bad_magic(self):
        """"""
        save_encoder(handle(LYRIC), self.path('h.enc'))
        with open(self.path('h.enc'), 'r+b') as f:
            f.write(b'XXXX')
        with self.assertRaises(ValidationError):
            open_encoder(self.path('h.enc'))

    def test_encoder_truncated(self):
        """"""
        save_encoder(handle(LYRIC), self.path('h.enc'))
        with open(self.path('h.enc'), 'rb') as f:
            data = f.read()
        with open(self.path('h.enc'), 'wb') as f:
            f.write(data[:-8])
        with self.assertRaises(ValidationError):
            open_encoder(self.path('h.enc'))
        with open(self.path('short.enc'), 'wb') as f:
            f.write(b'SSEN')
        with self.assertRaises(ValidationError):
            open_encoder(self.path('short.enc'))

    def test_registry_files(self):
        """"""
        registry = untrained_registry()
        save_registry(registry, self.path('encoders'))
        loaded = open_registry(self.path('encoders'))
        self.assertEqual(sorted(h.id for h in loaded), sorted(h.id for h in registry))
        self.assertEqual(loaded.held_out(IDENTITY).id, 'identity_eval')
        self.assertEqual(sorted(loaded.vocabulary), sorted(registry.vocabulary))
        for symbol, template in registry.vocabulary.items():
            np.testing.assert_array_equal(loaded.vocabulary[symbol], template)

    def test_missing_registry(self):
        """"""
        with self.assertRaises(ValidationError):
            open_registry(self.path('nowhere'))

    def test_manifest(self):
        """"""
        rows = [{'clip': 'c0', 'singer': 's0', 'gender': 'F', 'symbols': 'a b',
                 'voice': 'c0_voice.wav', 'backing': 'c0_backing.wav'}]
        save_manifest(rows, self.path('manifest.csv'))
        self.assertEqual(open_manifest(self.path('manifest.csv')), rows)

    def test_manifest_missing_columns(self):
        """"""
        write_csv([{'clip': 'c0'}], self.path('bad.csv'), ['clip'])
        with self.assertRaises(ValidationError):
            open_manifest(self.path('bad.csv'))

    def test_summary(self):
        """"""
        save_summary({'b': 1, 'a': 0.5}, self.path('s.txt'))
        with open(self.path('s.txt')) as f:
            self.assertEqual(f.read(), 'b: 1\na: 0.5\n')

    def test_adversary_trace(self):
        """"""
        traces = {'c1': [(1, 0.5, 0.25)], 'c0': [(1, 0.1, 0.2), (2, 0.3, 0.1)]}
        save_adversary_trace(traces, self.path('t.csv'))
        with open(self.path('t.csv')) as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], 'clip,iteration,score,lyric_loss')
        self.assertEqual([line.split(',')[:2] for line in lines[1:]],
                         [['c0', '1'], ['c0', '2'], ['c1', '1']])
