"""Sketch/patch compression of 3D Gaussian splat scenes.

Dense edge-like clusters are stored as polynomial attribute models over
compressed positions (sketch); the remaining splats are pruned and vector
quantised (patch). Both go into a layered container whose prefixes decode
to progressively complete scenes.
"""
from .clustering import ClusterParams, Labeling, dbscan
from .config import Config
from .container import LayerPlan, assemble_prefix, pack, read_header, unpack
from .errors import (DataError, FormatError, GsspError, IncompleteError, InputError, ParseError,
                     SchemaError, SplitRefused, VersionError)
from .kernels import BACKEND
from .patch_codec import (PatchPayload, PruneSpec, dequantize_patch, import_retrained_patch,
                          prune_uniform, quantize_patch, train_codebook)
from .pipeline import encode_scene
from .polyfit import fit_attribute, grid_search_fit, polynomial_feature_count
from .refine import Categorization, RefineParams, categorize
from .sketch_codec import (EncodedSketch, compress_positions, decode_sketch, decompress_positions,
                           encode_sketch)
from .halffloat import from_half, to_half
from .splat_model import Scene, SplatRecord, load_ply, read_ply, save_ply, write_ply

__version__ = "0.1.0"
