"""
Data package for lfbnet.
Provides synthetic phantom generation, the raw-tensor sample files and the
dataset manifest with deterministic splitting.
"""

from .phantoms import PhantomSpec, Sample, generate
from .storage import read_sample, write_sample
from .manifest import DatasetManifest, ManifestEntry, load_dataset, read_manifest, split, stack, write_dataset

__all__ = [
    "PhantomSpec",
    "Sample",
    "generate",
    "read_sample",
    "write_sample",
    "DatasetManifest",
    "ManifestEntry",
    "load_dataset",
    "read_manifest",
    "split",
    "stack",
    "write_dataset",
]
