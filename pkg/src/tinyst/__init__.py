"""Desk-scale speech-to-text translation toolkit."""

from .analysis import classify_lengths, extract_numerals, numeral_audit, report
from .augment import AugmentPolicy, expand_with_speed, spec_augment
from .corpus import Manifest, Utterance, load_manifest, mix, save_manifest, stats
from .decode import beam_search, exhaustive_oracle, greedy_decode
from .dsp import Waveform, cmvn, load_audio, log_mel, read_wav, speed_perturb, write_wav
from .metrics import chrf_pp, corpus_bleu, score_corpus, sentence_bleu
from .model import ModelConfig, ModelState, Vocab, forward, grad_check, init, load_checkpoint, save_checkpoint
from .sweep import ExperimentRecord, Grid, render_tables, run_grid, select_best
from .training import FeatureStore, HyperParams, joint_finetune, label_smoothed_loss, lr_at_step, train

__version__ = "0.1.0"
