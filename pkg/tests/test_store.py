import json
import math
import struct

import numpy as np
import pytest

from conftest import random_map, unit_rows
from nlmap.core import EmbeddingVector
from nlmap.embedding import QueryFeatures
from nlmap.errors import IntegrityError, SchemaError, VersionError
from nlmap.scene import HeatGrid, top_k
from nlmap.store import (
    dump_map,
    frame_from_dict,
    frame_to_dict,
    heatmap_to_pgm,
    infer_schema,
    load_map,
    parse_map,
    read_frames,
    save_map,
    write_frames,
    write_heatmap_csv,
)


def test_round_trip_same_content(tmp_path, rng):
    m = random_map(rng, 300)
    save_map(m, tmp_path / "m.nlm")
    back = load_map(tmp_path / "m.nlm")
    assert back.same_content(m)
    assert back.build_info == m.build_info
    # re-serialising is byte-stable
    assert dump_map(back) == dump_map(m)


def test_round_trip_queries_identical(tmp_path, rng):
    m = random_map(rng, 2000, dims=(("clip", 32), ("vild", 32)))
    save_map(m, tmp_path / "m.nlm")
    back = load_map(tmp_path / "m.nlm")
    for v in unit_rows(rng, 20, 32):
        q = QueryFeatures(EmbeddingVector(v, "clip"), ("clip", "vild"))
        a = [(e.element_id, s) for e, s in top_k(m, q, 8, -1.0)]
        b = [(e.element_id, s) for e, s in top_k(back, q, 8, -1.0)]
        assert a == b


def test_empty_map_round_trip(rng):
    m = random_map(rng, 0)
    assert len(parse_map(dump_map(m))) == 0


def test_layout(rng):
    m = random_map(rng, 3, dims=(("clip", 2),))
    data = dump_map(m)
    assert data[:4] == b"NLM1"
    (hlen,) = struct.unpack("<I", data[4:8])
    manifest = json.loads(data[8 : 8 + hlen])
    assert manifest["count"] == 3 and manifest["schema"] == [["clip", 2]]
    payload = np.frombuffer(data[8 + hlen :], dtype="<f4").reshape(3, 2)
    assert np.array_equal(payload, m.embeddings["clip"])


def test_bad_magic(rng):
    with pytest.raises(IntegrityError):
        parse_map(b"XYZ1" + dump_map(random_map(rng, 2))[4:])


def test_bad_version(rng):
    data = bytearray(dump_map(random_map(rng, 2)))
    data[3:4] = b"9"
    with pytest.raises(VersionError):
        parse_map(bytes(data))


def test_corrupt_payload(rng):
    data = bytearray(dump_map(random_map(rng, 4)))
    data[-1] ^= 0xFF
    with pytest.raises(IntegrityError, match="checksum"):
        parse_map(bytes(data))


def test_truncated(rng):
    data = dump_map(random_map(rng, 4))
    with pytest.raises(IntegrityError):
        parse_map(data[:-8])
    with pytest.raises(IntegrityError):
        parse_map(data[:20])


def test_save_is_atomic_rename(tmp_path, rng):
    save_map(random_map(rng, 5), tmp_path / "a.nlm")
    assert sorted(p.name for p in tmp_path.iterdir()) == ["a.nlm"]


def _frames(vlm):
    from nlmap.sim import NoiseSpec, SceneSpec, default_waypoints, explore, generate_scene

    scene = generate_scene(SceneSpec(count=6), 1)
    return explore(scene, default_waypoints(scene.bounds, 4), NoiseSpec(), vlm, seed=1).frames


def test_frames_round_trip(tmp_path, vlm):
    frames = _frames(vlm)
    assert write_frames(frames, tmp_path / "f.jsonl") == len(frames)
    back = read_frames(tmp_path / "f.jsonl")
    assert [frame_to_dict(f) for f in back] == [frame_to_dict(f) for f in frames]
    assert infer_schema(back).ids == ("clip", "vild")


def test_frames_nan_depth_written_as_null(tmp_path, vlm):
    f = frame_to_dict(_frames(vlm)[0])
    f["rois"][0]["depth_patch"][0] = float("nan")
    g = frame_from_dict(f)
    write_frames([g], tmp_path / "f.jsonl")
    text = (tmp_path / "f.jsonl").read_text()
    assert "NaN" not in text and "null" in text
    assert math.isnan(read_frames(tmp_path / "f.jsonl")[0].rois[0].depth_patch[0])


def test_malformed_line_is_reported(tmp_path, vlm):
    path = tmp_path / "f.jsonl"
    write_frames(_frames(vlm)[:2], path)
    with open(path, "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(SchemaError, match="line 3"):
        read_frames(path)


def test_non_unit_vector_is_normalised(vlm, caplog):
    d = frame_to_dict(_frames(vlm)[0])
    d["rois"][0]["channels"]["clip"] = [2 * v for v in d["rois"][0]["channels"]["clip"]]
    f = frame_from_dict(d)
    assert abs(np.linalg.norm(f.rois[0].channels["clip"].values) - 1) < 1e-9
    assert "normalizing" in caplog.text


def test_heatmap_csv_and_pgm(tmp_path):
    grid = HeatGrid(np.array([[0.2, np.nan], [0.6, 0.4]]), (0, 0, 2, 2), 1.0)
    write_heatmap_csv(grid, tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines() == ["0.2,NA", "0.6,0.4"]
    pgm = heatmap_to_pgm(grid)
    head, _, body = pgm.partition(b"255\n")
    lines = head.decode().splitlines()
    assert lines[0] == "P5" and lines[2] == "2 2"
    assert lines[1] == "# min=0.2 max=0.6"
    assert list(body) == [0, 0, 255, 128]
