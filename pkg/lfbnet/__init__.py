"""
lfbnet - latent-space feedback segmentation.

A forward encoder-decoder system S whose decoder is regularised by a fully
convolutional feedback system F through a latent-space feedback loop, trained
with a three-step alternating protocol on synthetic phantom data.

Packages:
    tensor      reverse-mode autodiff tensors, conv ops, Adam
    model       S, F, merge block, parameter groups
    evaluation  losses, metrics, Wilcoxon test, reports
    training    trainer, inference, normalization, checkpoints
    data        phantoms, sample files, manifests
    commands    command-line subcommands
"""

__version__ = "0.1.0"
