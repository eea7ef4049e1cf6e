"""Small ruled-table renderer used for fixtures, demos and self-checks."""

from __future__ import annotations

import numpy as np

from .annotations import AnnotationSet, PolygonInstance
from .imaging import ImageBuffer


def make_table(width=160, height=120, rows=4, cols=3, margin=16, line=2,
               background=(236, 234, 228), ink=(20, 20, 30), seed=0, image_id=1, file_name=""):
    """Render a ruled table and return ``(image, annotations)``.

    Cells are the grid rectangles between rule centerlines, so neighbours
    share edges exactly.  Each cell holds a few dark "text" strokes at
    seeded random positions.
    """
    rng = np.random.default_rng(seed)
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[:] = background
    xs = np.linspace(margin, width - margin, cols + 1)
    ys = np.linspace(margin, height - margin, rows + 1)
    half = line / 2
    for x in xs:
        img[int(ys[0] - half):int(np.ceil(ys[-1] + half)), int(x - half):int(np.ceil(x + half))] = ink
    for y in ys:
        img[int(y - half):int(np.ceil(y + half)), int(xs[0] - half):int(np.ceil(xs[-1] + half))] = ink

    instances = []
    for r in range(rows):
        for c in range(cols):
            x0, x1, y0, y1 = xs[c], xs[c + 1], ys[r], ys[r + 1]
            cw, ch = x1 - x0, y1 - y0
            for _ in range(rng.integers(1, 3)):
                tw = int(rng.uniform(0.3, 0.7) * cw)
                tx = int(x0 + rng.uniform(0.15, 0.85) * (cw - tw) + line)
                ty = int(y0 + rng.uniform(0.25, 0.65) * ch)
                img[ty:ty + 2, tx:tx + tw] = (60, 60, 70)
            instances.append(PolygonInstance(((x0, y0), (x1, y0), (x1, y1), (x0, y1)), id=r * cols + c + 1))
    ann = AnnotationSet(image_id=image_id, width=width, height=height, instances=tuple(instances),
                        file_name=file_name)
    return ImageBuffer(img), ann
