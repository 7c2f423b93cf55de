"""Warm-started diffusion policies at desk scale: toy 2D control tasks, a
conditional denoiser plus a consistency predictor, stall-recovery noise
injection, and numerical contraction analysis of the reverse process."""

__version__ = "0.1.0"
