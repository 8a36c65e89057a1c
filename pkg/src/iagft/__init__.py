"""Perceptual image codec built on weighted-inner-product graph transforms."""

from .imaging import (
    BlockGrid,
    FormatError,
    ImageGray,
    LocalStatsMap,
    assemble,
    load_image,
    local_moments,
    save_image,
    tile_blocks,
)
from .graph import Laplacian, grid_laplacian, quadratic_form
from .transform import (
    IAGFTBasis,
    InnerProductWeights,
    compute_iagft,
    dct_aligned_basis,
    forward,
    inverse,
    load_basis,
    mode_energy_profile,
    save_basis,
)
from .weights import GammaMap, WeightMap, gamma_map, optimal_weights, weight_curve
from .vq import Codebook, assign, codebook_hash, load_codebook, save_codebook, side_info_bits, train_ecvq
from .codec import (
    BitstreamError,
    EncodedImage,
    QuantTable,
    decode_image,
    dequantize,
    derive_quant_table,
    encode_image,
    entropy_decode,
    entropy_encode,
    quantize,
    scan_order,
)
from .metrics import RDPoint, bd_rate, mse, ms_ssim, psnr, ssim, wmse

__version__ = "0.1.0"

__all__ = [
    "BlockGrid",
    "BitstreamError",
    "Codebook",
    "EncodedImage",
    "FormatError",
    "GammaMap",
    "IAGFTBasis",
    "ImageGray",
    "InnerProductWeights",
    "Laplacian",
    "LocalStatsMap",
    "QuantTable",
    "RDPoint",
    "WeightMap",
    "assemble",
    "assign",
    "bd_rate",
    "codebook_hash",
    "compute_iagft",
    "dct_aligned_basis",
    "decode_image",
    "dequantize",
    "derive_quant_table",
    "encode_image",
    "entropy_decode",
    "entropy_encode",
    "forward",
    "gamma_map",
    "grid_laplacian",
    "inverse",
    "load_basis",
    "load_codebook",
    "load_image",
    "local_moments",
    "mode_energy_profile",
    "mse",
    "ms_ssim",
    "optimal_weights",
    "psnr",
    "quadratic_form",
    "quantize",
    "save_basis",
    "save_codebook",
    "save_image",
    "scan_order",
    "side_info_bits",
    "ssim",
    "tile_blocks",
    "train_ecvq",
    "weight_curve",
    "wmse",
]
