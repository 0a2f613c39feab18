"""Confidence-separation toolkit: adversarial training, confidence attacks,
embedding defenses and separation estimates for dense classifiers."""

__version__ = "0.1.0"
