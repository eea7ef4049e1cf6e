"""Dataset generation and train/test splitting."""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

from .annotations import (
    annotation_sets_to_coco,
    dumps,
    load_annotation_set,
    save_annotation_set,
)
from .errors import ConfigError, DeformtabError, FoldError, InvalidInputError
from .imaging import luminance, read_image, write_image
from .sampler import SamplerConfig, derive_seed, make_rng, sample_params
from .warp import compose_warps

__all__ = ["GeneratorConfig", "split_dataset", "list_sources", "generate_dataset"]

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class GeneratorConfig:
    variants: int = 10
    densify_step: float = 8.0
    max_attempts: int = 8
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if isinstance(self.sampler, dict):
            object.__setattr__(self, "sampler", SamplerConfig.from_dict(self.sampler))
        if int(self.variants) != self.variants or self.variants < 0:
            raise ConfigError(f"variants must be a non-negative integer, got {self.variants}")
        if self.densify_step is not None and self.densify_step <= 0:
            raise ConfigError(f"densify_step must be positive, got {self.densify_step}")
        if self.max_attempts < 1:
            raise ConfigError(f"max_attempts must be >= 1, got {self.max_attempts}")

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown generator config keys: {', '.join(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return {"variants": self.variants, "densify_step": self.densify_step,
                "max_attempts": self.max_attempts, "sampler": self.sampler.to_dict()}


def split_dataset(ids, ratio: float = 0.8, seed: int = 0):
    """Random train/test partition with ``round(n * ratio)`` training ids.

    Both halves keep the input order of ``ids``.
    """
    ids = list(ids)
    if not ids:
        raise InvalidInputError("cannot split an empty id list")
    if not 0.0 < ratio < 1.0:
        raise InvalidInputError(f"ratio must lie in (0, 1), got {ratio}")
    n_train = int(math.floor(len(ids) * ratio + 0.5))
    perm = make_rng(derive_seed(seed, 0x5911)).permutation(len(ids))
    chosen = set(perm[:n_train].tolist())
    train = [x for i, x in enumerate(ids) if i in chosen]
    test = [x for i, x in enumerate(ids) if i not in chosen]
    return train, test


def list_sources(src_dir) -> list[tuple[Path, Path]]:
    """Image files in ``src_dir`` paired with their ``<stem>.json`` annotations, sorted by name."""
    src = Path(src_dir)
    if not src.is_dir():
        raise InvalidInputError(f"source directory {src} does not exist")
    images = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())
    return [(p, p.with_suffix(".json")) for p in images]


def _generate_one(task):
    (src_index, image_path, ann_path, variant, image_id, master_seed, cfg_dict, out_dir) = task
    cfg = GeneratorConfig.from_dict(cfg_dict)
    stem = Path(image_path).stem
    name = f"{stem}_{variant:03d}"
    record = {"source": Path(image_path).name, "variant": variant, "image_id": image_id}
    try:
        img = read_image(image_path)
        ann = load_annotation_set(ann_path)
        if (ann.width, ann.height) != img.size:
            raise InvalidInputError(
                f"annotation size {ann.width}x{ann.height} does not match image {img.width}x{img.height}")
        lum = luminance(img)
        last_error = None
        for attempt in range(cfg.max_attempts):
            seed = derive_seed(master_seed, src_index, variant, attempt)
            params = sample_params(seed, lum, img.size, cfg.sampler)
            try:
                out_img, out_ann = compose_warps(img, ann, params, densify_step=cfg.densify_step)
            except FoldError as exc:
                last_error = exc
                continue
            break
        else:
            raise last_error
        out_ann = out_ann.replace(image_id=image_id, file_name=f"images/{name}.png")
        write_image(Path(out_dir) / "images" / f"{name}.png", out_img)
        save_annotation_set(Path(out_dir) / "annotations" / f"{name}.json", out_ann)
        record.update(status="ok", image=f"images/{name}.png", annotation=f"annotations/{name}.json",
                      seed=seed, attempts=attempt + 1, params=params.to_dict(),
                      luminance=round(lum, 4), instances=len(out_ann.instances),
                      dropped=len(ann.instances) - len(out_ann.instances))
        return record, out_ann
    except (DeformtabError, OSError) as exc:
        record.update(status="error", error=f"{type(exc).__name__}: {exc}")
        return record, None


def generate_dataset(src_dir, out_dir, config: GeneratorConfig | None = None, seed: int = 0,
                     workers: int | None = None) -> dict:
    """Produce ``config.variants`` deformed copies of every source image.

    Writes ``images/``, ``annotations/`` (one COCO-style JSON per image),
    ``instances.json`` (all images together) and ``manifest.json`` under
    ``out_dir``, and returns the manifest.  Source entries that fail are
    recorded in the manifest and skipped.
    """
    cfg = config or GeneratorConfig()
    sources = list_sources(src_dir)
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(parents=True, exist_ok=True)

    cfg_dict = cfg.to_dict()
    tasks = []
    for i, (image_path, ann_path) in enumerate(sources):
        for v in range(cfg.variants):
            tasks.append((i, str(image_path), str(ann_path), v, i * cfg.variants + v + 1,
                          seed, cfg_dict, str(out)))

    if workers is None:
        workers = os.cpu_count() or 1
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_generate_one, tasks, chunksize=1))
    else:
        results = [_generate_one(t) for t in tasks]

    items = [r for r, _ in results]
    produced = [a for _, a in results if a is not None]
    for r in items:
        if r["status"] != "ok":
            log.warning("%s variant %d failed: %s", r["source"], r["variant"], r["error"])
    with open(out / "instances.json", "w", encoding="utf-8") as fh:
        fh.write(dumps(annotation_sets_to_coco(produced)))
    manifest = {
        "seed": int(seed),
        "config": cfg_dict,
        "sources": [p.name for p, _ in sources],
        "items": items,
        "errors": [{"source": r["source"], "variant": r["variant"], "error": r["error"]}
                   for r in items if r["status"] != "ok"],
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest
