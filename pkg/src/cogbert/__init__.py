"""Desk-scale BERT-style encoder with cognitive-feature augmentations.

Subpackages and modules:
  numerics   dense kernels, seeded RNG, reverse-mode autodiff, grad checking
  tokenizer  word-level vocab, special tokens, fixed-length encoding
  features   eye/EEG token derivation, feature database, word-EEG lexicon,
             synthetic planted-keyword corpora
  model      the encoder, augmentation modes, checkpoints, attention traces
  training   Adam + linear LR decay loop, metrics, repeated-run protocol
  explain    incoming-attention accumulation and a LIME-style surrogate
  cli        command-line entry point (`cogbert`)
"""

__version__ = "0.1.0"
