# -*- coding: utf-8 -*-

"""
This module trains the toy encoders on a synthetic corpus: a protection
ensemble and one held-out evaluation encoder for each of identity and
lyrics, plus the symbol templates the evaluation recognizer matches against.
"""

import logging

import numpy as np
import torch
import torch.nn.functional as F

from songshield.const import (
    ACCURACY_FLOOR, ENSEMBLE_SIZE, FEMALE, HELD_IN_FRACTION, IDENTITY, LYRIC,
    MALE, TRAIN_EPOCHS, TRAIN_LEARNING_RATE, TrainingError, ValidationError
)
from songshield.encoders import EncoderHandle, EncoderRegistry, accuracy

logger = logging.getLogger(__name__)

HELD_OUT_OFFSET = 50
STD_FLOOR = 1e-3


def check_corpus(corpus):
    """Raises ``ValidationError`` unless the corpus can train both encoders."""
    for gender in (FEMALE, MALE):
        singers = set(c.singer for c in corpus.find_clips(gender=gender))
        if len(singers) < 2:
            raise ValidationError('Training needs at least 2 singers of gender %s, found %d' % (
                gender, len(singers)))
    if len(corpus.vocabulary()) < 4:
        raise ValidationError('Training needs at least 4 lyric symbols, found %d' % (
            len(corpus.vocabulary()),))


def _segment_masks(clips, spec, n_frames):
    """Pooling rows: every whole clip, then every single-symbol segment."""
    rows, owners = [], []
    for i, clip in enumerate(clips):
        whole = np.zeros((len(clips), n_frames))
        whole[i] = 1.0
        rows.append(whole)
        owners.append(i)
        labels = np.array(clip.frame_labels(spec))
        for s in range(len(clip.symbols)):
            if np.any(labels == s):
                mask = np.zeros((len(clips), n_frames))
                mask[i] = labels == s
                rows.append(mask)
                owners.append(i)
    masks = torch.tensor(np.stack(rows))
    return masks / masks.sum(dim=(1, 2), keepdim=True), owners


def train_encoder(kind, encoder_id, clips, classes, seed, held_out=False,
                  epochs=TRAIN_EPOCHS, learning_rate=TRAIN_LEARNING_RATE, **handle_params):
    """
    Trains one toy encoder with its classification head, full batch, for a
    fixed number of epochs.

    Identity encoders classify singers from mean-pooled embeddings of whole
    clips and of single-symbol segments. Lyric encoders classify the symbol
    of every frame lying inside one segment.

    :arg str kind:
        ``const.IDENTITY`` or ``const.LYRIC``.
    :arg str encoder_id:
        The encoder id.
    :arg list clips:
        Training clips.
    :arg list classes:
        Class names: singer ids or symbols.
    :arg int seed:
        Seeds the parameters.
    :arg bool held_out:
        Optional. Flags an evaluation-only encoder.
    :arg int epochs:
        Optional. Full-batch steps.
    :arg float learning_rate:
        Optional. Step size.

    :returns:
        A frozen ``EncoderHandle``.

    """
    handle = EncoderHandle(kind, encoder_id, n_classes=len(classes), seed=seed,
                           held_out=held_out, **handle_params)
    batch = torch.stack([c.voice.as_tensor() for c in clips])
    with torch.no_grad():
        feats = handle.features(batch)
        handle.feature_mean.copy_(feats.mean(dim=(0, 1)))
        handle.feature_std.copy_(feats.std(dim=(0, 1)).clamp(min=STD_FLOOR))

    if kind == IDENTITY:
        masks, owners = _segment_masks(clips, handle.front_end, feats.shape[1])
        targets = torch.tensor([classes.index(clips[i].singer) for i in owners])
    else:
        targets = torch.tensor([[classes.index(c.symbols[label]) if label >= 0 else -1
                                 for label in c.frame_labels(handle.front_end)] for c in clips])

    optimizer = torch.optim.Adam(handle.parameters(), lr=learning_rate)
    loss = None
    for epoch in range(epochs):
        optimizer.zero_grad()
        frames = handle.frames(batch)
        if kind == IDENTITY:
            pooled = torch.einsum('rnt,ntd->rd', masks, frames)
            loss = F.cross_entropy(handle.head(pooled), targets)
        else:
            logits = handle.head(frames)
            loss = F.cross_entropy(logits.reshape(-1, len(classes)), targets.reshape(-1),
                                   ignore_index=-1)
        if not torch.isfinite(loss):
            raise TrainingError('Training of %s diverged at epoch %d' % (encoder_id, epoch))
        loss.backward()
        optimizer.step()

    logger.debug('Encoder %s final training loss %.6f', encoder_id, float(loss) if loss is not None else 0.0)
    return handle.freeze()


def classification_loss(h, clips, classes):
    """
    Cross-entropy of the classification head on clean clips: whole-clip
    singer labels for identity encoders, single-symbol frame labels for
    lyric encoders.

    :arg EncoderHandle h:
        An identity or lyric encoder.
    :arg list clips:
        Labelled clips.
    :arg list classes:
        Class names in head order.

    :returns:
        A 0-d tensor.

    """
    batch = torch.stack([c.voice.as_tensor() for c in clips])
    if h.kind == IDENTITY:
        targets = torch.tensor([classes.index(c.singer) for c in clips])
        return F.cross_entropy(h.logits(batch), targets)
    targets = torch.tensor([[classes.index(c.symbols[label]) if label >= 0 else -1
                             for label in c.frame_labels(h.front_end)] for c in clips])
    logits = h.logits(batch)
    return F.cross_entropy(logits.reshape(-1, len(classes)), targets.reshape(-1), ignore_index=-1)


def build_vocabulary(h, clips):
    """
    Symbol templates for transcription: the mean lyric feature of every
    single-symbol frame carrying that symbol.

    :arg EncoderHandle h:
        A lyric encoder.
    :arg list clips:
        Clean clips.

    :returns:
        A dict of symbol to numpy template vector.

    """
    sums, counts = {}, {}
    clips = list(clips)
    with torch.no_grad():
        frames = h.frames(torch.stack([c.voice.as_tensor() for c in clips])).numpy()
    for row, clip in zip(frames, clips):
        for t, label in enumerate(clip.frame_labels(h.front_end)):
            if label < 0:
                continue
            symbol = clip.symbols[label]
            sums[symbol] = sums.get(symbol, 0.0) + row[t]
            counts[symbol] = counts.get(symbol, 0) + 1
    return dict((symbol, sums[symbol] / counts[symbol]) for symbol in sums)


def train_toy(corpus, seed=0, ensemble_size=ENSEMBLE_SIZE, epochs=TRAIN_EPOCHS,
              learning_rate=TRAIN_LEARNING_RATE, accuracy_floor=ACCURACY_FLOOR,
              held_in_fraction=HELD_IN_FRACTION, **handle_params):
    """
    Trains ``ensemble_size`` identity and lyric encoders plus one held-out
    encoder of each kind. Every encoder gets its own seed and its own
    singer-stratified clip split.

    :arg Corpus corpus:
        The training corpus.
    :arg int seed:
        Optional. Seeds every split and initialization.
    :arg int ensemble_size:
        Optional. Ensemble encoders per kind.
    :arg float accuracy_floor:
        Optional. Minimum held-in accuracy of every encoder.
    :arg float held_in_fraction:
        Optional. Share of each singer's clips an encoder trains on.

    :returns:
        An ``EncoderRegistry``; its vocabulary comes from the held-out
        lyric encoder.

    """
    check_corpus(corpus)
    if ensemble_size < 1:
        raise ValidationError('Ensemble size must be at least 1, got %r' % (ensemble_size,))

    registry = EncoderRegistry()
    classes = {IDENTITY: corpus.singers(), LYRIC: corpus.vocabulary()}
    plan = []
    for kind in (IDENTITY, LYRIC):
        for j in range(ensemble_size):
            plan.append((kind, '%s%d' % (kind, j), j, False))
        plan.append((kind, '%s_eval' % kind, HELD_OUT_OFFSET, True))

    accuracies = {}
    for kind, encoder_id, offset, held_out in plan:
        encoder_seed = seed * 1000 + (0 if kind == IDENTITY else 100) + offset
        held_in, _ = corpus.split(1.0 - held_in_fraction, np.random.default_rng(encoder_seed))
        handle = train_encoder(kind, encoder_id, list(held_in), classes[kind], encoder_seed,
                               held_out=held_out, epochs=epochs, learning_rate=learning_rate,
                               **handle_params)
        score = accuracy(handle, list(held_in), classes[kind])
        accuracies[encoder_id] = score
        logger.info('Trained %s encoder %s: held-in accuracy %.3f', kind, encoder_id, score)
        if score < accuracy_floor:
            raise TrainingError('Encoder %s reached accuracy %.3f, below the floor %.3f' % (
                encoder_id, score, accuracy_floor))
        if score < accuracy_floor + 0.02:
            logger.warning('Encoder %s accuracy %.3f is close to the floor', encoder_id, score)
        registry.add(handle)

    registry.vocabulary = build_vocabulary(registry.held_out(LYRIC), corpus)
    registry.accuracies = accuracies
    return registry
