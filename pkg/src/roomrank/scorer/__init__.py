"""Perceptual scorer: network, augmentation, datasets, training, model files."""
