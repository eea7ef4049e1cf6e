from pathlib import Path

import numpy as np
import pytest

from deformtab.annotations import save_annotation_set
from deformtab.imaging import write_image
from deformtab.synth import make_table

# (width, height, rows, cols) of the two synthetic source tables
SOURCE_TABLES = [(200, 160, 4, 3), (240, 180, 5, 4)]


def write_sources(directory: Path, tables=SOURCE_TABLES) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for i, (w, h, rows, cols) in enumerate(tables):
        img, ann = make_table(w, h, rows, cols, seed=i, image_id=1, file_name=f"table{i}.png")
        write_image(directory / f"table{i}.png", img)
        save_annotation_set(directory / f"table{i}.json", ann)
    return directory


@pytest.fixture(scope="session")
def source_dir(tmp_path_factory) -> Path:
    return write_sources(tmp_path_factory.mktemp("sources"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tree_bytes(root: Path) -> dict[str, bytes]:
    """Relative path -> content for every file under ``root``."""
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
