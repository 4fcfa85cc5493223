"""On-disk patch store: flat binary shards plus a JSON-lines index.

One record per patch: raw uint8 bytes in a shard file, and an index line
carrying (image_id, window, shard, offset, mask provenance). Per-patch
image files were rejected on purpose: at paper scale the store holds
1.2M patches and that many tiny files is hostile to filesystems.

Durability contract: shard bytes are flushed and fsynced before their
index lines are appended, so on crash the index only ever references
complete patches and a rebuild can resume at the last indexed image.
Iteration order is the index order, which is manifest order times
sample order - stable across rebuilds with the same seed.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from ..errors import StoreError
from ..imaging import PatchSpec, crop, load_gray_png
from .lungmask import heuristic_lung_mask, load_lung_mask
from .sampling import sample_patch_specs

MAGIC = "xrayinpaint-patch-store"
VERSION = 1
DEFAULT_SHARD_PATCHES = 4096


def derive_seed(seed: int, key: str) -> int:
    """Stable per-item sub-seed, independent of iteration order."""
    digest = hashlib.sha256(f"{seed}:{key}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class PatchStore:
    """Reader for a finished (or partially written) store directory."""

    def __init__(self, root):
        self.root = Path(root)
        header_path = self.root / "header.json"
        if not header_path.is_file():
            raise StoreError(f"{self.root} is not a patch store (missing header.json)")
        header = json.loads(header_path.read_text())
        if header.get("magic") != MAGIC:
            raise StoreError(f"bad magic in {header_path}: {header.get('magic')!r}")
        if header.get("version") != VERSION:
            raise StoreError(f"unsupported store version {header.get('version')!r}")
        self.patch_size = int(header["patch_size"])
        self.shard_patches = int(header["shard_patches"])
        self.entries = []
        index_path = self.root / "index.jsonl"
        if index_path.is_file():
            with open(index_path) as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        self.entries.append(json.loads(line))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def image_ids(self) -> set:
        return {e["image_id"] for e in self.entries}

    def meta(self, i: int) -> dict:
        return self.entries[i]

    def __getitem__(self, i: int) -> np.ndarray:
        e = self.entries[i]
        nbytes = self.patch_size * self.patch_size
        shard = self.root / f"shard-{e['shard']:04d}.bin"
        with open(shard, "rb") as fh:
            fh.seek(e["offset"])
            buf = fh.read(nbytes)
        if len(buf) != nbytes:
            raise StoreError(f"short read in {shard.name} at offset {e['offset']}")
        return np.frombuffer(buf, dtype=np.uint8).reshape(self.patch_size, self.patch_size)

    def as_array(self) -> np.ndarray:
        """All patches as one (n, size, size) uint8 array, index order."""
        out = np.empty((len(self), self.patch_size, self.patch_size), dtype=np.uint8)
        for i in range(len(self)):
            out[i] = self[i]
        return out

    def content_hash(self) -> str:
        """sha256 over header, index, and shard bytes."""
        h = hashlib.sha256()
        h.update((self.root / "header.json").read_bytes())
        index = self.root / "index.jsonl"
        if index.is_file():
            h.update(index.read_bytes())
        for shard in sorted(self.root.glob("shard-*.bin")):
            h.update(shard.read_bytes())
        return h.hexdigest()


class PatchStoreWriter:
    """Appends patches image by image; an image is the resume unit."""

    def __init__(self, root, patch_size: int, shard_patches: int = DEFAULT_SHARD_PATCHES):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.patch_size = int(patch_size)
        self.shard_patches = int(shard_patches)
        header_path = self.root / "header.json"
        header = {
            "magic": MAGIC,
            "version": VERSION,
            "patch_size": self.patch_size,
            "shard_patches": self.shard_patches,
        }
        if header_path.is_file():
            existing = json.loads(header_path.read_text())
            if existing != header:
                raise StoreError(
                    f"existing store at {self.root} has incompatible header {existing}"
                )
        else:
            header_path.write_text(json.dumps(header, sort_keys=True))
        self._count = sum(1 for _ in open(self.root / "index.jsonl")) if (
            self.root / "index.jsonl"
        ).is_file() else 0

    @property
    def count(self) -> int:
        return self._count

    def completed_images(self) -> set:
        index = self.root / "index.jsonl"
        if not index.is_file():
            return set()
        ids = set()
        with open(index) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    ids.add(json.loads(line)["image_id"])
        return ids

    def add_image(self, image_id: str, patches, specs, mask_source: str) -> None:
        """Write one image's patches durably: shard bytes first, index after."""
        patches = np.ascontiguousarray(patches, dtype=np.uint8)
        if patches.ndim != 3 or patches.shape[1:] != (self.patch_size, self.patch_size):
            raise StoreError(
                f"patches for {image_id} have shape {patches.shape}, "
                f"store expects (n, {self.patch_size}, {self.patch_size})"
            )
        if len(specs) != len(patches):
            raise StoreError(f"{len(specs)} specs for {len(patches)} patches")

        nbytes = self.patch_size * self.patch_size
        lines = []
        for patch, spec in zip(patches, specs):
            shard_no = self._count // self.shard_patches
            offset = (self._count % self.shard_patches) * nbytes
            shard_path = self.root / f"shard-{shard_no:04d}.bin"
            with open(shard_path, "ab") as fh:
                if fh.tell() != offset:
                    raise StoreError(
                        f"shard {shard_path.name} is {fh.tell()} bytes, expected {offset}: "
                        "store was interrupted mid-image; delete the trailing bytes or rebuild"
                    )
                fh.write(patch.tobytes())
                fh.flush()
                os.fsync(fh.fileno())
            lines.append(
                json.dumps(
                    {
                        "image_id": image_id,
                        "x0": spec.x0,
                        "y0": spec.y0,
                        "size": spec.size,
                        "shard": shard_no,
                        "offset": offset,
                        "mask_source": mask_source,
                    },
                    sort_keys=True,
                )
            )
            self._count += 1
        with open(self.root / "index.jsonl", "a") as fh:
            fh.write("\n".join(lines) + "\n")
            fh.flush()
            os.fsync(fh.fileno())


def build_patch_dataset(
    manifest,
    out_dir,
    count_per_image: int,
    patch_size: int,
    seed: int,
    mask_dir=None,
    shard_patches: int = DEFAULT_SHARD_PATCHES,
) -> PatchStore:
    """Sample lung-overlapping patches from every train image into a store.

    Resumable: images already present in the index are skipped, and
    per-image seeds are derived from (seed, image_id) so a resumed build
    is byte-identical to an uninterrupted one. Masks come from mask_dir
    when available; otherwise the heuristic segmenter fills in and the
    index entry says so.
    """
    writer = PatchStoreWriter(out_dir, patch_size=patch_size, shard_patches=shard_patches)
    done = writer.completed_images()
    for record in manifest.by_split("train"):
        if record.image_id in done:
            continue
        image = load_gray_png(record.file_path)
        mask = load_lung_mask(mask_dir, record.image_id, shape=image.pixels.shape)
        if mask is None:
            mask = heuristic_lung_mask(image.pixels)
            mask_source = "heuristic"
        else:
            mask_source = "file"
        specs = sample_patch_specs(
            image,
            mask,
            count=count_per_image,
            patch_size=patch_size,
            rng_seed=derive_seed(seed, record.image_id),
        )
        patches = np.stack([crop(image.pixels, s) for s in specs])
        writer.add_image(record.image_id, patches, specs, mask_source)
    return PatchStore(out_dir)
