"""Gaussian belief propagation linear solver and its applications."""
