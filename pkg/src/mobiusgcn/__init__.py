"""Spectral graph convolution with Möbius filters for 2D-to-3D pose lifting."""
