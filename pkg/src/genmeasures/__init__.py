"""Complexity measures for predicting generalization of small convolutional classifiers."""

__version__ = "0.1.0"
