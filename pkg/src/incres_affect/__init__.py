"""Facial affect (valence/arousal) regression with Inception-ResNet networks."""
