import numpy as np
import pytest

from filmpol import io
from filmpol.dataset import (file_digests, load_dataset, load_manifest, make_dataset,
                             replay_dataset, sample_seed, synthesize)
from filmpol.errors import ConfigError, DataError, FormatError
from filmpol.mosaic import DemosaicMethod, from_uint16
from filmpol.sim import SceneConfig

CONFIGS = [SceneConfig(content="text", width=32, height=32), SceneConfig(content="product", width=32, height=32)]


def test_empty_dataset(tmp_path):
    m = make_dataset(CONFIGS, 0, tmp_path / "d")
    assert m["samples"] == []
    assert load_manifest(tmp_path / "d")["samples"] == []
    assert len(load_dataset(tmp_path / "d")) == 0
    assert len(synthesize(CONFIGS, 0, 0)) == 0


def test_writes_all_files(tmp_path):
    m = make_dataset(CONFIGS, 10, tmp_path, seed=4)
    assert len(m["samples"]) == 10
    assert [s["config_index"] for s in m["samples"]] == [0, 1] * 5
    for s in m["samples"]:
        for k in ("raw", "gt", "stack", "meta"):
            assert (tmp_path / s[k]).is_file()
        assert s["seed"] == sample_seed(4, int(s["id"]))
        assert io.read_pgm(tmp_path / s["raw"]).shape == (32, 32)
    assert len({s["seed"] for s in m["samples"]}) == 10
    assert load_manifest(tmp_path) == m


def test_replay_is_bit_identical(tmp_path):
    make_dataset(CONFIGS, 6, tmp_path / "a", seed=11)
    replay_dataset(tmp_path / "a" / "manifest.json", tmp_path / "b")
    da, db = file_digests(tmp_path / "a"), file_digests(tmp_path / "b")
    assert len(da) == 6 * 4 + 1
    assert da == db


def test_sample_seed_depends_only_on_index(tmp_path):
    short = make_dataset(CONFIGS, 3, tmp_path / "s", seed=2)
    long = make_dataset(CONFIGS, 6, tmp_path / "l", seed=2)
    assert short["samples"] == long["samples"][:3]


def test_memory_matches_disk(tmp_path):
    make_dataset(CONFIGS, 4, tmp_path, seed=5)
    disk = load_dataset(tmp_path)
    mem = synthesize(CONFIGS, 4, 5)
    assert disk.ids == mem.ids
    assert np.array_equal(disk.captures, mem.captures)
    assert np.array_equal(disk.gt, mem.gt)
    raw = load_dataset(tmp_path, source="raw", method=DemosaicMethod.BILINEAR)
    assert raw.captures.shape == disk.captures.shape
    err = np.abs(raw.captures - disk.captures).mean()
    assert 0 < err < 0.05
    gt0 = from_uint16(io.read_pgm(tmp_path / "samples" / "00000" / "gt.pgm"))
    assert np.array_equal(mem.gt[0], gt0)


def test_manifest_errors(tmp_path):
    with pytest.raises(FormatError):
        load_manifest(tmp_path / "nothing")
    make_dataset(CONFIGS, 2, tmp_path / "d", seed=0)
    (tmp_path / "d" / "samples" / "00001" / "raw.pgm").unlink()
    with pytest.raises(DataError):
        load_manifest(tmp_path / "d")
    assert len(load_manifest(tmp_path / "d", check_files=False)["samples"]) == 2
    m = io.read_json(tmp_path / "d" / "manifest.json")
    m["format_version"] = 7
    io.write_json(tmp_path / "d" / "manifest.json", m)
    with pytest.raises(FormatError):
        load_manifest(tmp_path / "d", check_files=False)
    with pytest.raises(ConfigError):
        make_dataset(CONFIGS, -1, tmp_path / "e")
    with pytest.raises(ConfigError):
        make_dataset([], 2, tmp_path / "e")
