"""Discrete belief propagation in reduced-normal-form factor graphs.

SISO blocks, diverters and sources compose into latent variable models and a
parameter-tied quadtree network supporting generative, encoding, pattern
completion and error-correction inference.
"""

from fgrn.blocks import CptMatrix, Diverter, Prior, diverter_update, siso_backward, siso_forward, source_forward, source_posterior
from fgrn.errors import *  # noqa: F401,F403
from fgrn.inference import BeliefState, Evidence, mode_complete, mode_correct, mode_encode, mode_generative, propagate
from fgrn.io import load_checkpoint, load_images, render_distribution_grid, save_checkpoint
from fgrn.learning import LearnConfig, TrainingBatch, batch_log_likelihood, learn_siso, learn_source
from fgrn.lvm import LvmBlock, lvm_downward, lvm_train, lvm_upward
from fgrn.messages import Alphabet, Message, delta, hadamard, normalize, uniform
from fgrn.quadtree import (
    ArchitectureConfig,
    PatchPyramid,
    QuadtreeNetwork,
    build_network,
    extract_patches,
    sample_image,
    sample_images,
    train_layerwise,
)

__version__ = "0.1.0"
