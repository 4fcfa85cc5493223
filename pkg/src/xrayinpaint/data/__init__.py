from .manifest import DatasetManifest, XrayRecord, ingest_manifest, make_splits
from .sampling import (
    NoduleAnnotation,
    extract_nodule_patch,
    load_nodule_annotations,
    sample_patch_specs,
)
from .lungmask import heuristic_lung_mask, load_lung_mask
from .store import PatchStore, build_patch_dataset

__all__ = [
    "DatasetManifest",
    "XrayRecord",
    "ingest_manifest",
    "make_splits",
    "NoduleAnnotation",
    "extract_nodule_patch",
    "load_nodule_annotations",
    "sample_patch_specs",
    "heuristic_lung_mask",
    "load_lung_mask",
    "PatchStore",
    "build_patch_dataset",
]
