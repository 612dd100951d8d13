"""Phoneme-space adversarial training with waveform-augmentation guidance.

A desk-scale laboratory: waveform augmentation, a frozen log-mel frontend,
a small CTC acoustic model, and single-step adversaries in the frontend's
representation space.
"""

__version__ = "0.1.0"
