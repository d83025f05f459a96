"""Binarized Transformer accelerator toolkit: bit-exact reference model,
bit-serial datapath, cycle simulator and design-space exploration."""

__version__ = "0.1.0"
