# -*- coding: utf-8 -*-

import csv
import logging
import os
import struct

import numpy as np
import torch

from songshield.audio import FrameSpec
from songshield.const import ACOUSTIC, IDENTITY, LYRIC, ValidationError
from songshield.encoders import EncoderHandle, EncoderRegistry

logger = logging.getLogger(__name__)

MAGIC = b'SSEN'
VERSION = 1
KIND_CODES = {IDENTITY: 0, LYRIC: 1, ACOUSTIC: 2}

# magic, version, kind, held_out, seed, sample_rate, n_mels, hidden, out_dim,
# n_classes, frame_length, frame_shift, fft_size, id length, window length
HEADER = struct.Struct('<4sHB?qIIIIIIIIHH')

MANIFEST_FIELDS = ['clip', 'singer', 'gender', 'symbols', 'voice', 'backing']
REGISTRY_FILE = 'registry.csv'
VOCABULARY_FILE = 'vocabulary.csv'


def open_manifest(filename):
    """
    Open a corpus manifest CSV.

    :arg str filename:
        The manifest filename.

    :returns:
        The rows, as a list of dicts keyed by ``MANIFEST_FIELDS``.

    """
    with open(filename, 'r', newline='') as manifest_file:
        reader = csv.DictReader(manifest_file)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ValidationError('Manifest %s lacks columns: %s' % (filename, ', '.join(sorted(missing))))
        return list(reader)


def save_manifest(rows, filename):
    """
    Save manifest rows to a CSV file.

    :arg list rows:
        Dicts keyed by ``MANIFEST_FIELDS``.
    :arg str filename:
        The manifest filename.

    """
    write_csv(rows, filename, MANIFEST_FIELDS)


def write_csv(rows, filename, fields):
    """
    Write dict rows to a CSV file with a header line.

    :arg list rows:
        The rows.
    :arg str filename:
        The output filename.
    :arg list fields:
        Column order.

    """
    with open(filename, 'w', newline='') as out_file:
        writer = csv.DictWriter(out_file, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def save_encoder(handle, filename):
    """
    Save an encoder to its binary format: a fixed header, the id and window
    name in UTF-8, then every state tensor as little-endian float64 in sorted
    key order.

    :arg EncoderHandle handle:
        The encoder.
    :arg str filename:
        The output filename.

    """
    encoder_id = handle.id.encode('utf-8')
    window = handle.front_end.window.encode('utf-8')
    spec = handle.front_end
    header = HEADER.pack(MAGIC, VERSION, KIND_CODES[handle.kind], handle.held_out, handle.seed,
                         handle.sample_rate, handle.n_mels, handle.hidden, handle.out_dim,
                         handle.n_classes, spec.frame_length, spec.frame_shift, spec.fft_size,
                         len(encoder_id), len(window))
    state = handle.state_dict()
    with open(filename, 'wb') as enc_file:
        enc_file.write(header)
        enc_file.write(encoder_id)
        enc_file.write(window)
        for key in sorted(state):
            enc_file.write(state[key].detach().cpu().numpy().astype('<f8').tobytes())


def open_encoder(filename):
    """
    Open an encoder saved by ``save_encoder``.

    :arg str filename:
        The encoder filename.

    :returns:
        A frozen ``EncoderHandle``.

    """
    with open(filename, 'rb') as enc_file:
        data = enc_file.read()

    if len(data) < HEADER.size:
        raise ValidationError('%s is too short to be an encoder file' % (filename,))
    (magic, version, kind_code, held_out, seed, sample_rate, n_mels, hidden, out_dim,
     n_classes, frame_length, frame_shift, fft_size, id_len, window_len) = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValidationError('%s is not an encoder file' % (filename,))
    if version != VERSION:
        raise ValidationError('%s has unsupported encoder version %d' % (filename, version))
    kinds = dict((code, kind) for kind, code in KIND_CODES.items())
    if kind_code not in kinds:
        raise ValidationError('%s has unknown encoder kind %d' % (filename, kind_code))

    offset = HEADER.size
    encoder_id = data[offset:offset + id_len].decode('utf-8')
    offset += id_len
    window = data[offset:offset + window_len].decode('utf-8')
    offset += window_len

    handle = EncoderHandle(kinds[kind_code], encoder_id, n_classes=n_classes, seed=seed,
                           held_out=held_out,
                           front_end=FrameSpec(frame_length, frame_shift, fft_size, window),
                           sample_rate=sample_rate, n_mels=n_mels, hidden=hidden, out_dim=out_dim)
    state = handle.state_dict()
    payload = np.frombuffer(data, dtype='<f8', offset=offset)
    expected = sum(state[key].numel() for key in state)
    if payload.size != expected:
        raise ValidationError('%s holds %d parameters, expected %d' % (filename, payload.size, expected))

    loaded, start = {}, 0
    for key in sorted(state):
        n = state[key].numel()
        loaded[key] = torch.tensor(payload[start:start + n].astype(np.float64)).reshape(state[key].shape)
        start += n
    handle.load_state_dict(loaded)
    return handle.freeze()


def save_registry(registry, directory):
    """
    Save every encoder of a registry, an index CSV and the vocabulary.

    :arg EncoderRegistry registry:
        The registry.
    :arg str directory:
        The output folder, created when missing.

    """
    os.makedirs(directory, exist_ok=True)
    rows = []
    for handle in registry:
        filename = '%s.enc' % handle.id
        save_encoder(handle, os.path.join(directory, filename))
        rows.append({'id': handle.id, 'kind': handle.kind,
                     'held_out': int(handle.held_out), 'file': filename})
    write_csv(rows, os.path.join(directory, REGISTRY_FILE), ['id', 'kind', 'held_out', 'file'])

    vocab_rows = []
    for symbol in sorted(registry.vocabulary):
        template = np.asarray(registry.vocabulary[symbol], dtype=np.float64)
        vocab_rows.append([symbol] + ['%.17g' % v for v in template])
    with open(os.path.join(directory, VOCABULARY_FILE), 'w', newline='') as out_file:
        csv.writer(out_file).writerows(vocab_rows)
    logger.info('Saved %d encoders to %s', len(registry), directory)


def open_registry(directory):
    """
    Open a registry saved by ``save_registry``.

    :arg str directory:
        The registry folder.

    :returns:
        A new ``EncoderRegistry``.

    """
    index = os.path.join(directory, REGISTRY_FILE)
    if not os.path.isfile(index):
        raise ValidationError('No encoder registry in %s' % (directory,))
    with open(index, 'r', newline='') as index_file:
        handles = [open_encoder(os.path.join(directory, row['file']))
                   for row in csv.DictReader(index_file)]

    vocabulary = {}
    vocab_path = os.path.join(directory, VOCABULARY_FILE)
    if os.path.isfile(vocab_path):
        with open(vocab_path, 'r', newline='') as vocab_file:
            for row in csv.reader(vocab_file):
                if row:
                    vocabulary[row[0]] = np.array([float(v) for v in row[1:]])
    return EncoderRegistry(handles, vocabulary)


def save_trace(result, filename):
    """
    Save a protection trace: one row per iteration and loss with the raw
    and normalized values and the wall time spent on the iteration.

    :arg ProtectionResult result:
        The protection result.
    :arg str filename:
        The CSV filename.

    """
    write_csv(result.trace_rows(), filename,
              ['iteration', 'loss', 'raw', 'normalized', 'seconds'])


def save_adversary_trace(traces, filename):
    """
    Save NES adversary traces: one row per clip and iteration with the
    speaker score and the lyric loss.

    :arg dict traces:
        Clip name to a list of ``(iteration, score, lyric loss)`` tuples.
    :arg str filename:
        The CSV filename.

    """
    rows = [{'clip': clip, 'iteration': n, 'score': score, 'lyric_loss': lyric}
            for clip in sorted(traces) for n, score, lyric in traces[clip]]
    write_csv(rows, filename, ['clip', 'iteration', 'score', 'lyric_loss'])


def save_summary(values, filename):
    """
    Save ``key: value`` lines, in insertion order.

    :arg dict values:
        The summary values.
    :arg str filename:
        The output filename.

    """
    with open(filename, 'w') as out_file:
        for key, value in values.items():
            out_file.write('%s: %s\n' % (key, value))
