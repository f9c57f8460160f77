from .acdc import load_acdc_case, load_acdc_cases, write_acdc_manifest
from .dataset import (
    assign_splits,
    load_dataset,
    make_batches,
    read_manifest,
    write_manifest,
)
from .nifti import read_nifti, write_nifti
from .phantom import (
    generate_phantom,
    generate_phantom_with_meta,
    save_phantom_case,
    write_phantom_dataset,
)
from .transforms import augment, crop_to_shape, normalize, pad_to_square_multiple, warp_pair
from .types import Batch, Case, Dataset, Image, LabelMap

__all__ = [
    "Batch",
    "Case",
    "Dataset",
    "Image",
    "LabelMap",
    "assign_splits",
    "augment",
    "crop_to_shape",
    "generate_phantom",
    "generate_phantom_with_meta",
    "load_acdc_case",
    "load_acdc_cases",
    "load_dataset",
    "make_batches",
    "normalize",
    "pad_to_square_multiple",
    "read_manifest",
    "read_nifti",
    "save_phantom_case",
    "warp_pair",
    "write_acdc_manifest",
    "write_manifest",
    "write_nifti",
    "write_phantom_dataset",
]
