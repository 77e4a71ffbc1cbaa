import hashlib
import json
import os
import struct
import tracemalloc
from collections import Counter

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from mhn.autograd import ParamStore
from mhn.data import (
    FeatureReader,
    QARecord,
    SyntheticConfig,
    generate_synthetic,
    load_checkpoint,
    read_checkpoint,
    read_features,
    read_records,
    save_checkpoint,
    write_features,
    write_records,
)
from mhn.errors import ConfigError, FormatError
from mhn.model import ModelConfig, build_params
from mhn.sampling import FeatureRecord


def records(n, F=4, d_app=3, d_mot=2, seed=0):
    rng = np.random.default_rng(seed)
    return [FeatureRecord(f"vid{i}", rng.normal(size=(F, d_app)), rng.normal(size=(F, d_mot))) for i in range(n)]


# -- feature store -------------------------------------------------------------

def test_feature_round_trip(tmp_path):
    path = tmp_path / "f.mhnf"
    [rec] = records(1)
    write_features(path, [rec])
    [back] = list(read_features(path))
    assert back.video_id == "vid0"
    np.testing.assert_array_equal(back.appearance, rec.appearance.astype(np.float32))
    np.testing.assert_array_equal(back.motion, rec.motion.astype(np.float32))


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(st.tuples(st.text(min_size=0, max_size=8), st.integers(1, 5)), min_size=1, max_size=4),
       st.integers(1, 4), st.integers(1, 4))
def test_feature_round_trip_is_bit_identical(tmp_path, layout, d_app, d_mot):
    rng = np.random.default_rng(len(layout))
    recs = [FeatureRecord(vid, rng.normal(size=(F, d_app)).astype(np.float32).astype(np.float64),
                          rng.normal(size=(F, d_mot)).astype(np.float32).astype(np.float64)) for vid, F in layout]
    path = tmp_path / "p.mhnf"
    write_features(path, recs)
    back = list(read_features(path))
    assert [r.video_id for r in back] == [r.video_id for r in recs]
    for a, b in zip(recs, back):
        assert a.appearance.tobytes() == b.appearance.tobytes()
        assert a.motion.tobytes() == b.motion.tobytes()


def test_truncated_file_names_record(tmp_path):
    path = tmp_path / "t.mhnf"
    write_features(path, records(3))
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(FormatError, match="record 2") as info:
        list(read_features(path))
    assert info.value.offset is not None and info.value.index == 2


def test_bad_magic(tmp_path):
    path = tmp_path / "m.mhnf"
    path.write_bytes(b"NOPE!" + b"\0" * 16)
    with pytest.raises(FormatError, match="magic"):
        list(read_features(path))


def test_width_disagreement(tmp_path):
    path = tmp_path / "w.mhnf"
    write_features(path, records(2) + records(1, d_app=5))
    with pytest.raises(FormatError, match="record 2"):
        list(read_features(path))


def test_zero_frames_rejected(tmp_path):
    path = tmp_path / "z.mhnf"
    vid = b"v"
    path.write_bytes(b"MHNF1" + struct.pack("<I", 1) + vid + struct.pack("<III", 0, 2, 2))
    with pytest.raises(FormatError, match="zero frames"):
        list(read_features(path))


def test_streaming_uses_constant_memory(tmp_path):
    path = tmp_path / "big.mhnf"
    n, F, D = 1000, 32, 64
    rng = np.random.default_rng(0)
    one = FeatureRecord("v", rng.normal(size=(F, D)), rng.normal(size=(F, D)))
    write_features(path, (FeatureRecord(f"v{i}", one.appearance, one.motion) for i in range(n)))
    file_size = os.path.getsize(path)
    per_record = 2 * F * D * 8  # float64 in memory
    tracemalloc.start()
    count = 0
    for rec in FeatureReader(path):
        count += 1
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    assert count == n
    # a whole-file load would need ~2x the file size in float64
    assert peak < 10 * per_record
    assert peak < file_size / 20


# -- QA records ----------------------------------------------------------------

def test_records_round_trip(tmp_path):
    recs = [QARecord("v0", "action", ["what", "action"], 3),
            QARecord("v0", "transition", ["what"], 1, [["a", "then", "b"], ["b", "then", "a"]])]
    write_records(tmp_path / "r.jsonl", recs)
    assert read_records(tmp_path / "r.jsonl") == recs
    assert read_records(tmp_path / "r.jsonl", task="action") == recs[:1]


def test_record_errors_name_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"video_id":"v","task":"action","question":["a"],"answer":1}\n'
                    '{"video_id":"v","task":"transition","question":["a"],"answer":0}\n')
    with pytest.raises(FormatError, match="line 2"):
        read_records(path)
    path.write_text("not json\n")
    with pytest.raises(FormatError, match="line 1"):
        read_records(path)


def test_record_invariants():
    with pytest.raises(ValueError):
        QARecord("v", "count", ["how"], 12).validate(count_range=(1, 10))
    with pytest.raises(ValueError):
        QARecord("v", "action", ["a"], 1, [["x"], ["y"]]).validate()


# -- checkpoints -----------------------------------------------------------------

def small_store(seed=0, **kw):
    cfg = ModelConfig(**{"d": 16, "heads": 2, "n_levels": 2, "T": 2, "vocab_size": 10, "d_app": 6,
                         "d_mot": 6, "embed_dim": 8, **kw})
    return cfg, build_params(cfg, seed=seed)


def test_checkpoint_round_trip_bit_identical(tmp_path):
    cfg, store = small_store()
    save_checkpoint(store, tmp_path / "c.ckpt", config=cfg.to_dict(), step=7)
    _, fresh = small_store(seed=1)
    manifest = load_checkpoint(fresh, tmp_path / "c.ckpt")
    assert manifest["step"] == 7
    for name, t in store.items():
        assert t.data.tobytes() == fresh[name].data.tobytes()


def test_checkpoint_default_width_round_trip(tmp_path):
    cfg = ModelConfig(d=512, heads=8, n_levels=3, T=16, vocab_size=50, d_app=64, d_mot=64)
    store = build_params(cfg, seed=0)
    save_checkpoint(store, tmp_path / "big.ckpt", config=cfg.to_dict())
    _, tensors = read_checkpoint(tmp_path / "big.ckpt")
    assert all(store[n].data.tobytes() == tensors[n].tobytes() for n in store)


def test_checkpoint_offsets_do_not_overlap(tmp_path):
    _, store = small_store()
    save_checkpoint(store, tmp_path / "c.ckpt")
    manifest, _ = read_checkpoint(tmp_path / "c.ckpt")
    spans = sorted((e["offset"], e["offset"] + e["nbytes"]) for e in manifest["tensors"])
    assert all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))
    assert sorted(e["name"] for e in manifest["tensors"]) == sorted(store.names())


def test_mismatched_model_rejected_without_changes(tmp_path):
    _, store = small_store()
    save_checkpoint(store, tmp_path / "c.ckpt")
    _, other = small_store(share_pvr=False, d=8)
    before = {n: t.data.copy() for n, t in other.items()}
    with pytest.raises(ConfigError, match=r"more\)"):
        load_checkpoint(other, tmp_path / "c.ckpt")
    assert all(np.array_equal(before[n], other[n].data) for n in other)


def test_missing_parameter_rejected(tmp_path):
    _, store = small_store()
    partial = ParamStore()
    for name, t in list(store.items())[1:]:
        partial.add(name, t.data)
    save_checkpoint(partial, tmp_path / "p.ckpt")
    with pytest.raises(ConfigError, match="missing visual.app.weight"):
        load_checkpoint(store, tmp_path / "p.ckpt")


def test_truncated_checkpoint(tmp_path):
    _, store = small_store()
    save_checkpoint(store, tmp_path / "c.ckpt")
    raw = (tmp_path / "c.ckpt").read_bytes()
    (tmp_path / "c.ckpt").write_bytes(raw[:-16])
    with pytest.raises(FormatError, match="past end"):
        read_checkpoint(tmp_path / "c.ckpt")
    (tmp_path / "c.ckpt").write_bytes(b"XXXXX" + raw[5:])
    with pytest.raises(FormatError, match="magic"):
        read_checkpoint(tmp_path / "c.ckpt")


# -- synthetic generator -----------------------------------------------------------

def small_synthetic(**kw):
    return SyntheticConfig(**{"n_train": 100, "n_val": 10, "n_test": 10, "seed": 3, **kw})


def test_one_record_per_video_and_task(tmp_path):
    meta = generate_synthetic(small_synthetic(), tmp_path)
    assert meta["splits"]["train"] == {"videos": 100, "records": 400}
    recs = read_records(tmp_path / "train.jsonl")
    assert Counter(r.task for r in recs) == {t: 100 for t in ("frameqa_attr", "action", "transition", "count")}


def test_same_seed_gives_identical_files(tmp_path):
    digests = []
    for sub in ("a", "b"):
        generate_synthetic(small_synthetic(), tmp_path / sub)
        digests.append({f: hashlib.sha256((tmp_path / sub / f).read_bytes()).hexdigest()
                        for f in sorted(os.listdir(tmp_path / sub))})
    assert digests[0] == digests[1]


def test_noise_free_probe_recovers_majority_object(tmp_path):
    meta = generate_synthetic(small_synthetic(), tmp_path)
    assert meta["probe_frameqa_attr_sigma0"] == 1.0


def test_label_balance_within_twenty_percent(tmp_path):
    generate_synthetic(SyntheticConfig(n_train=1000, n_val=1, n_test=1, tasks=["frameqa_attr", "action", "mixed"]),
                       tmp_path)
    recs = read_records(tmp_path / "train.jsonl")
    answers = json.loads((tmp_path / "answers.json").read_text())
    for task in ("frameqa_attr", "action", "mixed"):
        counts = Counter(r.answer for r in recs if r.task == task)
        k = len(answers[task]["classes"])
        expected = 1000 / k
        assert len(counts) == k
        assert all(abs(c - expected) <= 0.2 * expected for c in counts.values()), (task, counts)


def test_transition_candidates_hold_correct_pair(tmp_path):
    generate_synthetic(small_synthetic(tasks=["transition"]), tmp_path)
    recs = read_records(tmp_path / "train.jsonl")
    positions = Counter(r.answer for r in recs)
    assert set(positions) == {0, 1, 2, 3}
    for r in recs:
        assert len(r.candidates) == 4
        assert len({tuple(c) for c in r.candidates}) == 4


def test_count_bursts_span_two_frames():
    from mhn.data.synthetic import _video_latents

    cfg = SyntheticConfig()
    rng = np.random.default_rng(0)
    for count in range(cfg.count_min, cfg.count_max + 1):
        lat = _video_latents(cfg, rng, 0, 1, count, 2)
        b = lat["burst"].astype(int)
        starts = np.flatnonzero(np.diff(np.concatenate([[0], b])) == 1)
        ends = np.flatnonzero(np.diff(np.concatenate([b, [0]])) == -1)
        assert len(starts) == count
        assert np.all(ends - starts + 1 >= 2)


def test_invalid_config_rejected():
    with pytest.raises(ConfigError):
        SyntheticConfig(n_train=0).validate()
    with pytest.raises(ConfigError):
        SyntheticConfig(sigma=-1).validate()
    with pytest.raises(ConfigError):
        SyntheticConfig(tasks=["nope"]).validate()


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        generate_synthetic(small_synthetic(), blocker / "sub")
