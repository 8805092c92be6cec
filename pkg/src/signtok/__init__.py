"""Segment-aware visual tokenization and contrastive pretraining for gloss-free
sign language translation, with a sequence-to-sequence translation stage,
evaluation metrics, and attention-memory accounting. Built on a small numpy
reverse-mode autodiff core for full gradient verifiability."""

__version__ = "0.1.0"
