import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from momakd import tensor as T
from momakd.config import RunConfig
from momakd.distill import (MOMENTUM_BLOCKS, MomentumPair, NegativeQueue, enqueue_dequeue, freeze_teacher,
                            gamma_for_task, momentum_update, teacher_forward_pipeline)
from momakd.errors import ConfigError, DegenerateInputError, StateError
from momakd.losses import info_nce
from momakd.networks import ModelStack


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def labelled_rows(labels, d=4):
    """Unit rows that encode an integer label as an angle, so contents can be read back."""
    a = np.asarray(labels, dtype=np.float64)
    out = np.zeros((len(a), d))
    out[:, 0], out[:, 1] = np.cos(a / 10), np.sin(a / 10)
    return out


def read_labels(rows):
    return [int(round(v)) for v in np.arctan2(rows[:, 1], rows[:, 0]) * 10]


def test_enqueue_into_empty_queue():
    q = NegativeQueue(8, 4)
    enqueue_dequeue(q, labelled_rows([1, 2, 3, 4]))
    assert len(q) == 4 and read_labels(q.rows()) == [1, 2, 3, 4]


def test_full_queue_drops_oldest():
    q = NegativeQueue(8, 4)
    q.enqueue(labelled_rows(range(1, 9)))
    q.enqueue(labelled_rows(range(9, 13)))
    assert read_labels(q.rows()) == list(range(5, 13))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.lists(st.integers(1, 5), min_size=1, max_size=60), st.integers(0, 2**16))
def test_queue_matches_list_oracle(capacity, sizes, seed):
    rng = np.random.default_rng(seed)
    q, oracle = NegativeQueue(capacity, 3), []
    for n in sizes:
        n = min(n, capacity)
        rows = unit_rows(rng, n, 3)
        q.enqueue(rows)
        oracle.extend(rows)
        expect = np.array(oracle[-capacity:])
        np.testing.assert_array_equal(q.rows(), expect)
        np.testing.assert_allclose(np.linalg.norm(q.rows(), axis=1), 1.0, atol=1e-10)


def test_queue_contracts():
    q = NegativeQueue(4, 3)
    with pytest.raises(DegenerateInputError, match="row 1"):
        q.enqueue(np.array([[1.0, 0, 0], [2.0, 0, 0]]))
    with pytest.raises(ConfigError):
        q.enqueue(unit_rows(np.random.default_rng(0), 5, 3))
    with pytest.raises(ConfigError):
        NegativeQueue(4, 3, batch_size=5)
    assert len(q) == 0


def test_load_rows_roundtrip(rng):
    q = NegativeQueue(5, 3)
    for _ in range(3):
        q.enqueue(unit_rows(rng, 2, 3))
    r = NegativeQueue(5, 3)
    r.load_rows(q.rows())
    np.testing.assert_array_equal(r.rows(), q.rows())
    nxt = unit_rows(rng, 2, 3)
    q.enqueue(nxt)
    r.enqueue(nxt)
    np.testing.assert_array_equal(r.rows(), q.rows())


def _pair_tensors(t0, s):
    return {"w": T.Tensor(np.full(3, s))}, {"w": T.Tensor(np.full(3, t0))}


@pytest.mark.parametrize("alpha", [0.0, 0.9, 0.9999, 1.0])
@pytest.mark.parametrize("n", [1, 10, 1000])
def test_momentum_closed_form(alpha, n):
    student, teacher = _pair_tensors(1.5, -0.25)
    pair = MomentumPair(["w"], alpha)
    for _ in range(n):
        momentum_update(pair, student, teacher)
    expect = alpha ** n * 1.5 + (1 - alpha ** n) * -0.25
    np.testing.assert_allclose(teacher["w"].values, expect, atol=1e-10)


def test_momentum_direct_cases():
    student, teacher = _pair_tensors(1.0, 0.0)
    momentum_update(MomentumPair(["w"], 0.9999), student, teacher)
    np.testing.assert_allclose(teacher["w"].values, 0.9999, atol=1e-15)
    student, teacher = _pair_tensors(1.0, 0.3)
    momentum_update(MomentumPair(["w"], 0.0), student, teacher)
    np.testing.assert_array_equal(teacher["w"].values, student["w"].values)
    with pytest.raises(ConfigError):
        MomentumPair(["w"], 1.5)


def test_momentum_pair_covers_encoder_and_projection_only():
    cfg = RunConfig(input_dim=4, encoder_hidden=(5,), embed_dim=4, proj_dim=4, heads=2)
    pair = MomentumPair.for_stacks(ModelStack(cfg, 3, 0), ModelStack(cfg, 3, 1), 0.9)
    assert pair.names and all(n.split(".")[0] in MOMENTUM_BLOCKS for n in pair.names)
    assert {n.split(".")[0] for n in pair.names} == {"enc", "proj"}


def test_gamma_for_task():
    assert [gamma_for_task(k) for k in ("same", "relevant", "irrelevant")] == [1, 0, 0]


def _teacher(cfg):
    t = ModelStack(cfg, 3, 2)
    t.loaded = True
    freeze_teacher(t)
    return t


def test_teacher_pipeline_detach_contract(rng):
    cfg = RunConfig(input_dim=4, encoder_hidden=(5,), embed_dim=4, proj_dim=4, heads=2)
    teacher = _teacher(cfg)
    student_z = T.Tensor(unit_rows(rng, 3, 4), requires_grad=True)
    x = T.Tensor(rng.standard_normal((3, 4)))
    with T.Tape() as tape:
        z_t, logits = teacher_forward_pipeline(teacher, x)
        loss = T.add(info_nce(student_z, z_t, unit_rows(rng, 5, 4), 0.07), T.sum_all(T.mul(logits, logits)))
    for p in teacher.parameters().values():
        p.grad = None
    tape.backward(loss)
    for n, p in teacher.parameters().items():
        if n.startswith("attn."):
            assert p.grad is not None and np.abs(p.grad).max() > 0
        else:
            assert p.grad is None
    assert not logits.requires_grad


def test_teacher_attention_gradient_matches_spot_difference(rng):
    cfg = RunConfig(input_dim=4, encoder_hidden=(5,), embed_dim=4, proj_dim=4, heads=2)
    teacher = _teacher(cfg)
    zs = T.Tensor(unit_rows(rng, 3, 4))
    negs = unit_rows(rng, 5, 4)
    x = T.Tensor(rng.standard_normal((3, 4)))
    w = teacher.attention.wv

    def loss():
        return info_nce(zs, teacher_forward_pipeline(teacher, x)[0], negs, 0.07)

    with T.Tape() as tape:
        val = loss()
    w.grad = None
    tape.backward(val)
    h = 1e-5
    old = w.values[1, 2]
    w.values[1, 2] = old + h
    up = loss().item()
    w.values[1, 2] = old - h
    down = loss().item()
    w.values[1, 2] = old
    numeric = (up - down) / (2 * h)
    assert abs(numeric) > 1e-6
    assert abs(w.grad[1, 2] - numeric) <= 1e-6 * max(1.0, abs(numeric))


def test_teacher_pipeline_single_sample_value_path(rng):
    cfg = RunConfig(input_dim=4, encoder_hidden=(5,), embed_dim=4, proj_dim=4, heads=2)
    teacher = _teacher(cfg)
    teacher.attention.wo.values = np.eye(4)
    x = rng.standard_normal((1, 4))
    with T.no_grad():
        p = teacher.projection(teacher.encoder(T.Tensor(x))).values
    z, _ = teacher_forward_pipeline(teacher, T.Tensor(x))
    v = p @ teacher.attention.wv.values
    np.testing.assert_allclose(z.values, v / np.linalg.norm(v), atol=1e-14)


def test_teacher_pipeline_requires_loaded_teacher():
    cfg = RunConfig(input_dim=4, encoder_hidden=(5,), embed_dim=4, proj_dim=4, heads=2)
    with pytest.raises(StateError):
        teacher_forward_pipeline(ModelStack(cfg, 3, 0), T.Tensor(np.zeros((1, 4))))
