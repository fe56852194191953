"""Adversarial Bayesian experimental design by gradient descent ascent."""
