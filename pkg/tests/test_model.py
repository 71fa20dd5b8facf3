"""Network wiring, inference conventions, and checkpoint round trips."""

import json

import numpy as np
import pytest

from difex.autodiff import Tensor
from difex.model import (
    StudentModel,
    TeacherModel,
    load_checkpoint,
    predict,
    save_checkpoint,
)


def rng_for(seed):
    return np.random.default_rng(seed)


# -- architecture ---------------------------------------------------------


def test_student_splits_features_evenly():
    m = StudentModel(10, 16, 8, 3, rng_for(0))
    out = m.forward(Tensor(np.random.default_rng(1).normal(size=(5, 10))))
    assert out.z1.data.shape == (5, 4)
    assert out.z2.data.shape == (5, 4)
    assert out.logits.data.shape == (5, 3)
    # classifier reads the concatenation, so its weight is d wide
    assert m.wc.data.shape == (8, 3)


def test_student_rejects_odd_width():
    with pytest.raises(ValueError):
        StudentModel(10, 16, 7, 3, rng_for(0))


def test_teacher_head_matches_half_width():
    t = TeacherModel(10, 16, 4, 3, rng_for(0))
    feat, logits = t.forward(Tensor(np.zeros((2, 10))))
    assert feat.data.shape == (2, 4)
    assert logits.data.shape == (2, 3)


def test_teacher_and_student_trunks_have_equal_parameter_shapes():
    t = TeacherModel(10, 16, 4, 3, rng_for(0))
    s = StudentModel(10, 16, 8, 3, rng_for(0))
    assert t.w1.data.shape == s.w1.data.shape
    # the student's two heads together hold as many weights as one d-wide layer
    assert t.w2.data.size * 2 == s.wz1.data.size + s.wz2.data.size


def test_init_is_seed_deterministic():
    a = StudentModel(6, 8, 4, 3, rng_for(7))
    b = StudentModel(6, 8, 4, 3, rng_for(7))
    for pa, pb in zip(a.params(), b.params()):
        assert np.array_equal(pa.data, pb.data)


# -- forward agreement ----------------------------------------------------


def test_student_graph_and_plain_forward_agree():
    m = StudentModel(10, 16, 8, 4, rng_for(2))
    x = np.random.default_rng(3).normal(size=(6, 10))
    out = m.forward(Tensor(x))
    graph_logits = out.logits.data
    assert np.abs(graph_logits - m.forward_np(x)).max() < 1e-12


def test_teacher_graph_and_plain_forward_agree():
    t = TeacherModel(10, 16, 4, 3, rng_for(4))
    x = np.random.default_rng(5).normal(size=(6, 10))
    feat_g, logits_g = t.forward(Tensor(x))
    feat_n, logits_n = t.forward_np(x)
    assert np.abs(feat_g.data - feat_n).max() < 1e-12
    assert np.abs(logits_g.data - logits_n).max() < 1e-12


def test_student_features_stay_inside_unit_ball():
    m = StudentModel(10, 16, 8, 3, rng_for(6))
    x = np.random.default_rng(7).normal(size=(20, 10)) * 50.0
    out = m.forward(Tensor(x))
    for z in (out.z1.data, out.z2.data):
        assert np.all(np.sqrt((z * z).sum(axis=1)) < 1.0)


def test_teacher_features_are_tanh_bounded():
    # saturated pre-activations round to exactly +-1 in 64-bit, hence <=
    t = TeacherModel(10, 16, 4, 3, rng_for(8))
    feat, _ = t.forward_np(np.random.default_rng(9).normal(size=(10, 10)) * 30)
    assert np.all(np.abs(feat) <= 1.0)


# -- inference ------------------------------------------------------------


def test_predict_single_and_batch_agree():
    m = StudentModel(6, 8, 4, 3, rng_for(10))
    X = np.random.default_rng(11).normal(size=(5, 6))
    batch = predict(m, X)
    assert batch.shape == (5,)
    for i in range(5):
        assert predict(m, X[i]) == batch[i]


def test_predict_breaks_ties_toward_lowest_index():
    # a zero-initialized net emits identical logits for every class
    m = StudentModel(6, 8, 4, 5, rng=None)
    assert predict(m, np.ones(6)) == 0
    got = predict(m, np.ones((3, 6)))
    assert np.array_equal(got, [0, 0, 0])


# -- checkpoints ----------------------------------------------------------


def test_student_checkpoint_round_trip(tmp_path):
    m = StudentModel(12, 8, 6, 4, rng_for(12), input_kind="raw")
    path = tmp_path / "student.ckpt"
    save_checkpoint(m, path, seed=9)
    back, header = load_checkpoint(path)
    for pa, pb in zip(m.params(), back.params()):
        assert np.array_equal(pa.data, pb.data)
    assert header["kind"] == "student" and header["d"] == 6
    assert header["seed"] == 9 and header["input"] == "raw"
    X = np.random.default_rng(13).normal(size=(8, 12))
    assert np.array_equal(predict(m, X), predict(back, X))
    assert np.array_equal(m.forward_np(X), back.forward_np(X))


def test_teacher_checkpoint_round_trip(tmp_path):
    t = TeacherModel(12, 8, 3, 4, rng_for(14))
    path = tmp_path / "teacher.ckpt"
    save_checkpoint(t, path)
    back, header = load_checkpoint(path)
    assert header["kind"] == "teacher" and header["feat_dim"] == 3
    X = np.random.default_rng(15).normal(size=(5, 12))
    feat_a, logits_a = t.forward_np(X)
    feat_b, logits_b = back.forward_np(X)
    assert np.array_equal(feat_a, feat_b)
    assert np.array_equal(logits_a, logits_b)


def test_checkpoint_preserves_input_kind(tmp_path):
    m = StudentModel(12, 8, 6, 4, rng_for(16), input_kind="phase")
    path = tmp_path / "p.ckpt"
    save_checkpoint(m, path)
    back, _ = load_checkpoint(path)
    assert back.input_kind == "phase"


def split_checkpoint(path):
    blob = path.read_bytes()
    nl = blob.index(b"\n")
    return json.loads(blob[: nl].decode()), blob[nl + 1 :]


def test_checkpoint_rejects_truncated_blob(tmp_path):
    m = StudentModel(6, 4, 4, 2, rng_for(17))
    path = tmp_path / "t.ckpt"
    save_checkpoint(m, path)
    data = path.read_bytes()
    path.write_bytes(data[:-16])
    with pytest.raises(ValueError, match="bytes"):
        load_checkpoint(path)


def test_checkpoint_rejects_garbage_header(tmp_path):
    path = tmp_path / "g.ckpt"
    path.write_bytes(b"\xff\xfe not json\n" + b"\x00" * 64)
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_checkpoint_rejects_unknown_format(tmp_path):
    m = StudentModel(6, 4, 4, 2, rng_for(18))
    path = tmp_path / "v.ckpt"
    save_checkpoint(m, path)
    header, blob = split_checkpoint(path)
    header["format"] = 99
    path.write_bytes(json.dumps(header).encode() + b"\n" + blob)
    with pytest.raises(ValueError, match="format"):
        load_checkpoint(path)


def test_checkpoint_rejects_unknown_kind(tmp_path):
    m = StudentModel(6, 4, 4, 2, rng_for(19))
    path = tmp_path / "k.ckpt"
    save_checkpoint(m, path)
    header, blob = split_checkpoint(path)
    header["kind"] = "referee"
    path.write_bytes(json.dumps(header).encode() + b"\n" + blob)
    with pytest.raises(ValueError, match="kind"):
        load_checkpoint(path)


def test_checkpoint_rejects_shape_table_mismatch(tmp_path):
    m = StudentModel(6, 4, 4, 2, rng_for(20))
    path = tmp_path / "s.ckpt"
    save_checkpoint(m, path)
    header, blob = split_checkpoint(path)
    header["shapes"][0] = [5, 4]
    path.write_bytes(json.dumps(header).encode() + b"\n" + blob)
    with pytest.raises(ValueError, match="shape"):
        load_checkpoint(path)
