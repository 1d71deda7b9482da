import numpy as np
import pytest

from momakd import checkpoint as ckpt_io
from momakd import tensor as T
from momakd import trainer
from momakd.errors import ConfigError, ContractError, FormatError, SchemaError
from momakd.losses import info_nce

from helpers import fast_config, separable_config


@pytest.fixture(scope="module")
def teacher_ckpt():
    return trainer.pretrain_teacher(fast_config())[1]


def linear_probe_accuracy(train, test):
    """Least-squares one-vs-rest probe on raw inputs."""
    x = np.hstack([train.inputs, np.ones((len(train), 1))])
    y = np.eye(train.num_classes)[train.labels]
    w = np.linalg.lstsq(x, y, rcond=None)[0]
    xt = np.hstack([test.inputs, np.ones((len(test), 1))])
    return float(np.mean((xt @ w).argmax(1) == test.labels))


def test_separable_pretraining_reaches_floor():
    cfg = separable_config()
    run = trainer.new_pretrain_run(cfg)
    assert linear_probe_accuracy(run.source.train, run.source.test) >= 0.99
    assert run.total_steps <= 200
    run, ck = trainer.pretrain_teacher(cfg)
    assert trainer.evaluate_stack(run.student, run.source.test).accuracy >= 0.95


def test_pretraining_is_byte_reproducible(teacher_ckpt):
    again = trainer.pretrain_teacher(fast_config())[1]
    assert ckpt_io.to_bytes(again) == ckpt_io.to_bytes(teacher_ckpt)


def test_teacher_checkpoint_loads_into_distill_run(teacher_ckpt):
    run = trainer.new_distill_run(fast_config(), teacher_ckpt)
    names = {k[len("student."):] for k in teacher_ckpt.params}
    assert set(run.teacher.parameters()) == names
    for n, p in run.teacher.parameters().items():
        np.testing.assert_array_equal(p.values, teacher_ckpt.params[f"student.{n}"])


@pytest.mark.parametrize("seed", [0, 1])
def test_finetune_from_scratch_on_separable_target(seed):
    cfg = separable_config(seed=seed)
    run, report = trainer.finetune_baseline(cfg)
    assert run.tag == "FT_None" and report.accuracy >= 0.95


def test_finetune_seeds_differ():
    a, _ = trainer.finetune_baseline(separable_config(seed=0))
    b, _ = trainer.finetune_baseline(separable_config(seed=1))
    assert not np.array_equal(a.student.parameters()["cls.w"].values, b.student.parameters()["cls.w"].values)


def test_teacher_init_starts_at_teacher_accuracy(teacher_ckpt):
    cfg = fast_config()
    run = trainer.new_finetune_run(cfg, teacher_ckpt)
    assert run.tag == "FT_Teacher"
    teacher = trainer.teacher_stack_from(cfg, teacher_ckpt)
    a = trainer.evaluate_stack(run.student, run.target.test).accuracy
    b = trainer.evaluate_stack(teacher, run.target.test).accuracy
    assert a == b


def test_frozen_dynamics(teacher_ckpt):
    cfg = fast_config(lr=0.0, alpha=1.0, queue_size=8)
    run = trainer.new_distill_run(cfg, teacher_ckpt)
    before = {n: p.values.copy() for n, p in run.trainable().items()}
    t_before = run.teacher.state()
    batch = run.batch_at(0)
    logs = [trainer.train_step(run, batch) for _ in range(5)]
    for n, p in run.trainable().items():
        np.testing.assert_array_equal(p.values, before[n])
    for n, v in run.teacher.state().items():
        np.testing.assert_array_equal(v, t_before[n])
    assert len({(b.ce, b.kl) for b in logs}) == 1
    # queue holds exactly this batch's teacher rows from step 1 on
    assert len({(b.nce, b.total) for b in logs[1:]}) == 1


def test_warmup_step_has_zero_contrastive_term(teacher_ckpt):
    run = trainer.new_distill_run(fast_config(), teacher_ckpt)
    b = trainer.train_step(run)
    assert b.nce == 0.0 and len(run.queue) == run.cfg.batch_size
    assert trainer.train_step(run).nce > 0


def test_queue_excludes_current_batch(teacher_ckpt):
    run = trainer.new_distill_run(fast_config(), teacher_ckpt)
    trainer.fit(run, 3)
    pre_rows = run.queue.rows()
    x, y = run.batch_at(run.step)
    with T.no_grad():
        _, _, z_s = trainer.student_forward(run, T.Tensor(x))
        from momakd.distill import teacher_forward_pipeline
        z_t, _ = teacher_forward_pipeline(run.teacher, T.Tensor(x))
        expect = info_nce(z_s, z_t, pre_rows, run.cfg.tau).item()
    assert trainer.train_step(run).nce == expect


def test_gamma_zero_keeps_kl_out_of_total(teacher_ckpt):
    cfg = fast_config(gamma_auto=False, gamma=0, student_init="none")
    run = trainer.new_distill_run(cfg, teacher_ckpt)
    for b in trainer.fit(run, 4):
        assert b.gamma == 0 and b.kl > 0
        assert b.total == b.ce + b.nce


def test_gamma_one_adds_kl(teacher_ckpt):
    run = trainer.new_distill_run(fast_config(), teacher_ckpt)
    for b in trainer.fit(run, 4):
        assert b.gamma == 1 and abs(b.total - (b.ce + b.nce + b.kl)) <= 1e-12


def test_kl_with_mismatched_classes_requires_gamma_zero():
    cfg = fast_config(regime="relevant", target_classes=4)
    ck = trainer.pretrain_teacher(cfg.with_(pretrain_epochs=1))[1]
    with pytest.raises(ConfigError, match="KL term"):
        trainer.new_distill_run(cfg.with_(gamma_auto=False, gamma=1), ck)
    run = trainer.new_distill_run(cfg, ck)
    logs = trainer.fit(run, 2)
    assert all(b.gamma == 0 and np.isfinite(b.kl) for b in logs)


def test_checkpoint_roundtrip_is_bit_identical(teacher_ckpt, tmp_path):
    run = trainer.new_distill_run(fast_config(), teacher_ckpt)
    trainer.fit(run, 3)
    path = tmp_path / "s.ckpt"
    data = trainer.save_checkpoint(run, path, include_queue=True)
    ck = ckpt_io.load(path)
    assert ckpt_io.to_bytes(ck) == data
    ref = trainer.run_to_checkpoint(run, include_queue=True)
    for group in ("params", "extras"):
        a, b = getattr(ref, group), getattr(ck, group)
        assert list(a) == list(b)
        for k in a:
            assert a[k].tobytes() == b[k].tobytes() and a[k].shape == b[k].shape
    again = trainer.run_to_checkpoint(trainer.load_checkpoint(path), include_queue=True)
    assert ckpt_io.to_bytes(again) == data


def test_truncated_and_corrupted_files(teacher_ckpt, tmp_path):
    data = ckpt_io.to_bytes(teacher_ckpt)
    for cut in (3, 10, len(data) // 2, len(data) - 1):
        with pytest.raises(FormatError):
            ckpt_io.from_bytes(data[:cut])
    with pytest.raises(FormatError, match="magic"):
        ckpt_io.from_bytes(b"XXXXX" + data[5:])
    with pytest.raises(FormatError, match="version"):
        ckpt_io.from_bytes(data[:5] + (99).to_bytes(4, "little") + data[9:])
    with pytest.raises(FormatError, match="trailing"):
        ckpt_io.from_bytes(data + b"\0")


def test_schema_mismatch(teacher_ckpt):
    with pytest.raises(SchemaError):
        trainer.new_distill_run(fast_config(embed_dim=6), teacher_ckpt)
    ck = ckpt_io.Checkpoint(teacher_ckpt.config_text, dict(teacher_ckpt.params), dict(teacher_ckpt.extras))
    del ck.params["student.cls.b"]
    with pytest.raises(SchemaError, match="cls.b"):
        trainer.run_from_checkpoint(ck)


def test_resume_reproduces_loss_sequence(teacher_ckpt, tmp_path):
    cfg = fast_config()
    run = trainer.new_distill_run(cfg, teacher_ckpt)
    trainer.fit(run, 7)
    path = tmp_path / "mid.ckpt"
    trainer.save_checkpoint(run, path, include_queue=True)
    straight = [b.as_dict() for b in trainer.fit(run, 10)[-10:]]
    resumed = trainer.load_checkpoint(path)
    assert resumed.step == 7
    again = [b.as_dict() for b in trainer.fit(resumed, 10)]
    assert again == straight
    for n, p in run.student.parameters().items():
        assert p.values.tobytes() == resumed.student.parameters()[n].values.tobytes()


def test_missing_gradient_outside_warmup_is_reported(teacher_ckpt):
    run = trainer.new_distill_run(fast_config(), teacher_ckpt)
    trainer.fit(run, 1)
    run.teacher.attention.wq.requires_grad = False
    with pytest.raises(ContractError, match="step 1: .*teacher.attn.wq"):
        trainer.train_step(run)


def test_inference_export_matches_full_model(teacher_ckpt, tmp_path):
    run = trainer.new_distill_run(fast_config(), teacher_ckpt)
    trainer.fit(run, 5)
    model = trainer.export_inference(run)
    assert set(model.parameters()) == set(run.student.block_parameters("enc")) | set(
        run.student.block_parameters("cls"))
    x = run.target.test.inputs
    _, logits = trainer.predict_stack(run.student, x)
    assert model.predict_logits(x).tobytes() == logits.tobytes()
    ck = model.to_checkpoint()
    assert all(k.startswith(("student.enc.", "student.cls.")) for k in ck.params) and not ck.extras
    loaded, kind = trainer.inference_from_checkpoint(ckpt_io.from_bytes(ckpt_io.to_bytes(ck)))
    assert kind == "inference"
    np.testing.assert_array_equal(loaded.predict(x), logits.argmax(1))
