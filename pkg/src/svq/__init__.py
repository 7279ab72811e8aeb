"""Semantically coupled VQ models with a conditional latent transformer."""

from . import autodiff, metrics
from .adversarial import PatchDiscriminator, d_loss, g_loss
from .autoencoder import (CoupledAutoencoder, DecoupledBaseline, baseline_losses,
                          decode_image, decode_semantic, encode_joint, svq_loss)
from .data import (PairedSample, SceneSpec, generate_dataset, load_dataset,
                   read_image_ppm, read_semantics_pgm, save_dataset,
                   write_image_ppm, write_semantics_pgm)
from .errors import (ConfigurationError, DataError, FormatError, NumericError,
                     SvqError, TrainingDiverged)
from .metrics import MetricsReport, frechet_distance, miou, ssim
from .quantizer import Codebook, LatentGrid, quantize, straight_through, vq_regularizers
from .transformer import (TokenSequence, TransformerModel, conditional_nll,
                          pack_sequence, sample, unpack_sequence)

__version__ = "0.1.0"
