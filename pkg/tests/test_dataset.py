import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import tree_bytes
from deformtab.annotations import load_annotation_set, rasterize
from deformtab.dataset import GeneratorConfig, generate_dataset, list_sources, split_dataset
from deformtab.errors import ConfigError, InvalidInputError
from deformtab.sampler import DeformationParams, check_params


class TestSplit:
    def test_eighty_twenty(self):
        train, test = split_dataset(range(10), 0.8, seed=1)
        assert len(train) == 8 and len(test) == 2

    def test_deterministic(self):
        assert split_dataset(range(50), seed=3) == split_dataset(range(50), seed=3)
        assert split_dataset(range(50), seed=3) != split_dataset(range(50), seed=4)

    @given(st.lists(st.integers(), min_size=1, max_size=60, unique=True), st.floats(0.01, 0.99), st.integers(0, 99))
    def test_partition(self, ids, ratio, seed):
        train, test = split_dataset(ids, ratio, seed)
        assert sorted(train + test) == sorted(ids) and not set(train) & set(test)
        assert len(train) == int(len(ids) * ratio + 0.5)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            split_dataset([])

    @pytest.mark.parametrize("ratio", [0.0, 1.0, -0.2])
    def test_bad_ratio(self, ratio):
        with pytest.raises(InvalidInputError):
            split_dataset([1, 2], ratio)


class TestGenerate:
    def test_zero_variants(self, source_dir, tmp_path):
        manifest = generate_dataset(source_dir, tmp_path, GeneratorConfig(variants=0), seed=1, workers=1)
        assert manifest["items"] == [] and not list((tmp_path / "images").iterdir())
        assert (tmp_path / "manifest.json").exists()

    def test_outputs_and_manifest(self, source_dir, tmp_path):
        manifest = generate_dataset(source_dir, tmp_path, GeneratorConfig(variants=3), seed=11, workers=1)
        assert [i["status"] for i in manifest["items"]] == ["ok"] * 6
        assert [i["image_id"] for i in manifest["items"]] == list(range(1, 7))
        for item in manifest["items"]:
            params = DeformationParams.from_dict(item["params"])
            assert check_params(params) == []
            ann = load_annotation_set(tmp_path / item["annotation"])
            assert (tmp_path / item["image"]).exists()
            assert ann.image_id == item["image_id"] and ann.file_name == item["image"]
            for inst in ann.instances:
                assert rasterize(inst, (ann.width, ann.height)).any()
        combined = json.loads((tmp_path / "instances.json").read_text())
        assert len(combined["images"]) == 6

    def test_repeat_and_worker_count_identical(self, source_dir, tmp_path):
        cfg = GeneratorConfig(variants=2)
        generate_dataset(source_dir, tmp_path / "a", cfg, seed=5, workers=1)
        generate_dataset(source_dir, tmp_path / "b", cfg, seed=5, workers=1)
        generate_dataset(source_dir, tmp_path / "c", cfg, seed=5, workers=3)
        a = tree_bytes(tmp_path / "a")
        assert a == tree_bytes(tmp_path / "b") == tree_bytes(tmp_path / "c")

    def test_seed_changes_output(self, source_dir, tmp_path):
        cfg = GeneratorConfig(variants=1)
        generate_dataset(source_dir, tmp_path / "a", cfg, seed=1, workers=1)
        generate_dataset(source_dir, tmp_path / "b", cfg, seed=2, workers=1)
        assert tree_bytes(tmp_path / "a") != tree_bytes(tmp_path / "b")

    def test_bad_source_recorded_and_skipped(self, source_dir, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        for p in source_dir.iterdir():
            (src / p.name).write_bytes(p.read_bytes())
        (src / "broken.png").write_bytes(b"\x89PNG\r\n\x1a\ntruncated")
        (src / "broken.json").write_text("{}")
        manifest = generate_dataset(src, tmp_path / "out", GeneratorConfig(variants=1), seed=0, workers=1)
        assert len(manifest["errors"]) == 1 and manifest["errors"][0]["source"] == "broken.png"
        assert sum(i["status"] == "ok" for i in manifest["items"]) == 2

    def test_missing_source_dir(self, tmp_path):
        with pytest.raises(InvalidInputError):
            list_sources(tmp_path / "nope")


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            GeneratorConfig.from_dict({"variants": 2, "extra": True})

    def test_nested_sampler_dict(self):
        cfg = GeneratorConfig.from_dict({"sampler": {"amplitude": [10, 20]}})
        assert cfg.sampler.amplitude == (10, 20)
        assert GeneratorConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("doc", [{"variants": -1}, {"max_attempts": 0}, {"densify_step": 0}])
    def test_invalid(self, doc):
        with pytest.raises(ConfigError):
            GeneratorConfig.from_dict(doc)
