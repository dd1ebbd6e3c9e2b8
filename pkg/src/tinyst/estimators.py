"""scikit-learn style wrappers around the feature, augmentation and model code."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .augment import AugmentPolicy, mask_rng, spec_augment
from .corpus import Manifest, Utterance
from .decode import beam_search
from .dsp import Waveform, cmvn, features_for, log_mel
from .metrics import corpus_bleu
from .model import ModelConfig, Vocab, init
from .training import FeatureStore, HyperParams, Trainer


def _featurize(x, audio_root=None, normalize=True) -> np.ndarray:
    if isinstance(x, str):
        return features_for(x, audio_root) if normalize else log_mel(_load(x, audio_root))
    if isinstance(x, Waveform):
        f = log_mel(x)
    else:
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim == 2:
            return arr
        f = log_mel(Waveform(arr))
    return cmvn(f) if normalize else f


def _load(ref, root):
    from .dsp import load_audio
    return load_audio(ref, root)


class LogMelFeaturizer(TransformerMixin, BaseEstimator):
    """Audio references, waveforms or sample arrays to (T, 80) log-mel matrices."""

    def __init__(self, audio_root=None, normalize=True):
        self.audio_root = audio_root
        self.normalize = normalize

    def fit(self, X, y=None):
        self.n_mels_ = 80
        return self

    def transform(self, X):
        check_is_fitted(self, "n_mels_")
        return [_featurize(x, self.audio_root, self.normalize) for x in X]


class SpecAugmenter(TransformerMixin, BaseEstimator):
    """Time and frequency masking; item ``i`` is keyed by ``ids[i]`` or ``str(i)``."""

    def __init__(self, max_time_mask=30, max_freq_mask=30, n_time_masks=2, n_freq_masks=2, seed=0, epoch=0):
        self.max_time_mask = max_time_mask
        self.max_freq_mask = max_freq_mask
        self.n_time_masks = n_time_masks
        self.n_freq_masks = n_freq_masks
        self.seed = seed
        self.epoch = epoch

    def fit(self, X, y=None):
        self.policy_ = AugmentPolicy(sa_enabled=True, max_time_mask=self.max_time_mask,
                                     max_freq_mask=self.max_freq_mask, n_time_masks=self.n_time_masks,
                                     n_freq_masks=self.n_freq_masks, seed=self.seed)
        return self

    def transform(self, X, ids=None):
        check_is_fitted(self, "policy_")
        ids = list(ids) if ids is not None else [str(i) for i in range(len(X))]
        return [spec_augment(np.asarray(f), self.policy_, mask_rng(self.seed, uid, self.epoch))
                for f, uid in zip(X, ids)]


class SpeechTranslator(BaseEstimator):
    """Encoder-decoder trained on (features or audio refs, target text).

    ``X`` items are audio references (strings) or precomputed feature
    matrices. Speed perturbation needs audio references.
    """

    def __init__(self, d_model=64, n_heads=4, enc_layers=2, dec_layers=2, ff_dim=128, dropout=0.1,
                 lr_peak=3e-4, label_smoothing=0.1, batch_size=32, warmup_steps=250, patience=10,
                 max_epochs=100, beam_size=10, speed_perturb=False, spec_augment=False, seed=0,
                 audio_root=None):
        self.d_model = d_model
        self.n_heads = n_heads
        self.enc_layers = enc_layers
        self.dec_layers = dec_layers
        self.ff_dim = ff_dim
        self.dropout = dropout
        self.lr_peak = lr_peak
        self.label_smoothing = label_smoothing
        self.batch_size = batch_size
        self.warmup_steps = warmup_steps
        self.patience = patience
        self.max_epochs = max_epochs
        self.beam_size = beam_size
        self.speed_perturb = speed_perturb
        self.spec_augment = spec_augment
        self.seed = seed
        self.audio_root = audio_root

    def _manifest(self, X, y, store: FeatureStore, tag: str) -> Manifest:
        utts = []
        for i, (x, text) in enumerate(zip(X, y)):
            if isinstance(x, str):
                ref = x
            else:
                ref = f"{tag}:{i}"
                store.put(ref, _featurize(x))
            utts.append(Utterance(f"{tag}{i:06d}", ref, 1.0, "src", "tgt", "", text))
        return Manifest("train", utts)

    def fit(self, X, y, X_dev=None, y_dev=None):
        """Train with early stopping on ``(X_dev, y_dev)`` (the training data when omitted)."""
        y = list(y)
        if X_dev is None:
            X_dev, y_dev = X, y
        self.vocab_ = Vocab.from_texts(list(y) + list(y_dev))
        self.store_ = FeatureStore(self.audio_root)
        train = self._manifest(X, y, self.store_, "train")
        dev = self._manifest(X_dev, list(y_dev), self.store_, "dev")
        cfg = ModelConfig(vocab_size=len(self.vocab_), d_model=self.d_model, n_heads=self.n_heads,
                          enc_layers=self.enc_layers, dec_layers=self.dec_layers, ff_dim=self.ff_dim,
                          dropout=self.dropout)
        hp = HyperParams(lr_peak=self.lr_peak, label_smoothing=self.label_smoothing, batch_size=self.batch_size,
                         warmup_steps=self.warmup_steps, patience=self.patience, beam_size=self.beam_size,
                         max_epochs=self.max_epochs, seed=self.seed)
        policy = AugmentPolicy(sp_enabled=self.speed_perturb, sa_enabled=self.spec_augment, seed=self.seed)
        state = init(cfg, self.seed, dtype=np.float32, vocab=self.vocab_)
        self.state_, self.log_ = Trainer(hp, policy, self.store_).fit(state, train, dev)
        return self

    def predict(self, X):
        check_is_fitted(self, "state_")
        out = []
        for x in X:
            f = self.store_(x) if isinstance(x, str) else _featurize(x)
            out.append(self.vocab_.decode(beam_search(self.state_, f, beam=self.beam_size).tokens))
        return out

    def score(self, X, y):
        """Corpus BLEU of the predictions."""
        return corpus_bleu(self.predict(X), list(y)).bleu
