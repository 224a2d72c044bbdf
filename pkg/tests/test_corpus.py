"""Tests for roomrank.rir.corpus: seeded corpus sampling and manifest I/O."""

import json
import logging
import os

import numpy as np
import pandas as pd
import pytest

from roomrank.audio_io import read_wav
from roomrank.rir.corpus import (
    MANIFEST_NAME,
    SUMMARY_COLUMNS,
    SUMMARY_NAME,
    ManifestError,
    classify_room,
    cli_main,
    load_corpus,
    load_ir,
    plan_corpus,
    render_corpus,
    render_entry,
    sample_corpus,
    spec_from_entry,
)


def _small_corpus(out_dir, count=6, seed=3, workers=1):
    return sample_corpus(count, seed, out_dir=str(out_dir), max_order=2, workers=workers,
                         points_per_room=2)


# ===========================================================================
# classify_room / plan_corpus
# ===========================================================================

@pytest.mark.parametrize("dims,expected", [
    ((10.0, 3.0), "small"),
    ((3.0, 10.5), "medium"),
    ((30.0, 30.0), "medium"),
    ((31.0, 2.0), "large"),
])
def test_classify_room(dims, expected):
    assert classify_room(*dims) == expected


def test_plan_round_robin_classes():
    manifest = plan_corpus(7, seed=1, points_per_room=3)
    assert len(manifest) == 7
    rooms = [e.room_id for e in manifest.entries]
    assert rooms == ["room_0000"] * 3 + ["room_0001"] * 3 + ["room_0002"]
    classes = [manifest.entries[i].room_class for i in (0, 3, 6)]
    assert classes == ["small", "medium", "large"]


def test_plan_draws_within_ranges():
    manifest = plan_corpus(30, seed=5, points_per_room=1)
    for e in manifest.entries:
        assert classify_room(*e.dims[:2]) == e.room_class
        assert 2.0 <= e.dims[2] <= 5.0
        assert all(0.1 <= a <= 0.9 for a in e.absorptions)
        for pos in (e.positions["source"], e.positions["mic"]):
            assert all(0.1 <= c <= d - 0.1 for c, d in zip(pos, e.dims))


def test_plan_is_seeded():
    a = plan_corpus(5, seed=9).to_dict()
    b = plan_corpus(5, seed=9).to_dict()
    c = plan_corpus(5, seed=10).to_dict()
    assert a == b
    assert a != c


def test_plan_prefix_stable():
    # A larger corpus with the same seed starts with the same entries.
    small = plan_corpus(3, seed=4).entries
    large = plan_corpus(8, seed=4).entries
    assert small == large[:3]


def test_plan_rejects_bad_count():
    with pytest.raises(ValueError):
        plan_corpus(0, seed=1)


def test_spec_from_entry_round_trip():
    entry = plan_corpus(1, seed=2).entries[0]
    spec = spec_from_entry(entry, max_order=3)
    assert list(spec.dims) == entry.dims
    assert list(spec.source_pos) == entry.positions["source"]
    assert spec.max_order == 3
    assert spec.seed == entry.seed


def test_render_entry_sets_rt60():
    entry = plan_corpus(1, seed=2).entries[0]
    ir = render_entry(entry, max_order=3)
    assert ir.room_id == entry.room_id
    assert ir.rt60_est is None or ir.rt60_est > 0


# ===========================================================================
# sample_corpus / load_corpus
# ===========================================================================

def test_sample_corpus_writes_files(tmp_path):
    manifest = _small_corpus(tmp_path)
    assert len(manifest) == 6
    for e in manifest.entries:
        assert os.path.exists(tmp_path / e.ir_path)
    assert os.path.exists(tmp_path / MANIFEST_NAME)
    summary = pd.read_csv(tmp_path / SUMMARY_NAME)
    assert list(summary.columns) == SUMMARY_COLUMNS
    assert len(summary) == 6


def test_sample_corpus_manifest_is_byte_identical(tmp_path):
    _small_corpus(tmp_path / "a")
    _small_corpus(tmp_path / "b")
    assert (tmp_path / "a" / MANIFEST_NAME).read_bytes() == \
        (tmp_path / "b" / MANIFEST_NAME).read_bytes()


def test_sample_corpus_independent_of_workers(tmp_path):
    _small_corpus(tmp_path / "one", workers=1)
    _small_corpus(tmp_path / "four", workers=4)
    assert (tmp_path / "one" / MANIFEST_NAME).read_bytes() == \
        (tmp_path / "four" / MANIFEST_NAME).read_bytes()
    a = read_wav(str(tmp_path / "one" / "irs" / "room_0001_p001.wav"))
    b = read_wav(str(tmp_path / "four" / "irs" / "room_0001_p001.wav"))
    np.testing.assert_array_equal(a.samples, b.samples)


def test_render_corpus_subset_matches_full_run(tmp_path):
    full = _small_corpus(tmp_path / "full")
    planned = plan_corpus(6, seed=3, max_order=2, points_per_room=2)
    planned.entries = planned.entries[3:]
    subset = render_corpus(planned, str(tmp_path / "subset"))
    assert [e.rt60_est for e in subset.entries] == [e.rt60_est for e in full.entries[3:]]
    assert load_corpus(str(tmp_path / "subset")).entries == subset.entries
    path = subset.entries[0].ir_path
    assert (tmp_path / "subset" / path).read_bytes() == (tmp_path / "full" / path).read_bytes()


def test_sample_corpus_logs_summary(tmp_path, caplog):
    with caplog.at_level(logging.INFO, logger="roomrank.rir.corpus"):
        _small_corpus(tmp_path)
    assert "Rendered 6 impulse responses in 3 rooms" in caplog.text


def test_manifest_schema(tmp_path):
    _small_corpus(tmp_path)
    data = json.loads((tmp_path / MANIFEST_NAME).read_text())
    assert data["version"] == 1
    assert data["count"] == 6
    entry = data["entries"][0]
    for key in ("ir_path", "room_id", "point_id", "room_class", "dims", "absorptions",
                "positions", "seed", "rt60_est"):
        assert key in entry


def test_load_corpus_round_trip(tmp_path):
    manifest = _small_corpus(tmp_path)
    loaded = load_corpus(str(tmp_path))
    assert loaded.entries == manifest.entries
    assert loaded.root == str(tmp_path)


def test_load_ir_reads_wav(tmp_path):
    manifest = _small_corpus(tmp_path)
    ir = load_ir(manifest, 2)
    rendered = render_entry(manifest.entries[2], max_order=2)
    np.testing.assert_array_equal(ir.h.samples, rendered.h.samples.astype(np.float32))
    assert ir.spec is not None


def test_load_corpus_missing(tmp_path):
    with pytest.raises(ManifestError):
        load_corpus(str(tmp_path))


def test_load_corpus_bad_json(tmp_path):
    (tmp_path / MANIFEST_NAME).write_text("{broken")
    with pytest.raises(ManifestError):
        load_corpus(str(tmp_path))


def test_load_corpus_empty(tmp_path):
    (tmp_path / MANIFEST_NAME).write_text(json.dumps({"version": 1, "entries": []}))
    with pytest.raises(ManifestError):
        load_corpus(str(tmp_path))


def test_load_corpus_wrong_version(tmp_path):
    (tmp_path / MANIFEST_NAME).write_text(json.dumps({"version": 99, "entries": []}))
    with pytest.raises(ManifestError):
        load_corpus(str(tmp_path))


# ===========================================================================
# cli_main
# ===========================================================================

def test_cli_count_zero_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli_main(["--count", "0", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_cli_generates_corpus(tmp_path, capsys):
    out = tmp_path / "corpus"
    cli_main(["--count", "3", "--seed", "7", "--out", str(out), "--max-order", "2",
              "--no-progress"])
    data = json.loads((out / MANIFEST_NAME).read_text())
    assert data["count"] == 3
    assert len(os.listdir(out / "irs")) == 3
    err = capsys.readouterr().err
    assert "small" in err


def test_cli_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(SystemExit) as exc:
        cli_main(["--count", "1", "--out", str(blocker / "sub"), "--max-order", "1",
                  "--no-progress"])
    assert exc.value.code == 1
