import numpy as np
import pytest

from scalefuse import backbone, fusion, synth, tensor, training
from scalefuse.training import Hyperparams


def tiny_samples(n=6, size=16, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        mask = np.zeros((size, size), dtype=np.int64)
        k = int(rng.integers(1, 4))
        y0, x0 = rng.integers(0, size // 2, size=2)
        mask[y0 : y0 + size // 2, x0 : x0 + size // 2] = k
        image = 0.4 + 0.05 * rng.normal(size=(3, size, size))
        image[:, mask > 0] = synth.BASE_COLORS[k - 1][:, None]
        out.append(synth.Sample(np.clip(image, 0, 1), mask, synth.labels_from_mask(mask)))
    return out


HP = Hyperparams(learning_rate=0.05, iterations=20, batch_size=4, seed=3, scales=(0.5, 1.0))


def test_hyperparams_validation():
    for bad in (dict(alpha=-1), dict(thr=0.0), dict(scales=(0.5, 2.0)), dict(scales=(1.0, -1.0)),
                dict(learning_rate=0), dict(momentum=1.0), dict(batch_size=0)):
        with pytest.raises(ValueError):
            Hyperparams(**bad)


def test_overfit_single_sample():
    sample = [synth.make_sample(np.random.default_rng(0))]
    hp = Hyperparams(learning_rate=0.1, iterations=200, batch_size=8, seed=1)
    state = training.pretrain_state(sample, hp)
    assert state.history[-1][1] < 0.05


def test_zero_iterations_returns_init():
    hp = Hyperparams(iterations=0, seed=4)
    p = training.pretrain(tiny_samples(), hp)
    assert p.equals(backbone.init(4, 3))


def test_pretrain_deterministic():
    a = training.pretrain(tiny_samples(), HP)
    b = training.pretrain(tiny_samples(), HP)
    assert a.equals(b)
    assert not a.equals(training.pretrain(tiny_samples(), Hyperparams(**{**HP.__dict__, "seed": 4})))


def test_pretrain_needs_data():
    with pytest.raises(ValueError):
        training.pretrain([], HP)


def test_self_train_keeps_teacher_frozen():
    data = tiny_samples()
    pre = training.pretrain(data, HP)
    before = [a.tobytes() for _, a in pre.named_arrays()]
    state = training.self_train(pre, data, HP)
    assert state.teacher.equals(pre)
    assert [a.tobytes() for _, a in pre.named_arrays()] == before
    assert not state.student.equals(pre)
    assert all(np.isfinite(h[3]) for h in state.history) and len(state.history) == HP.iterations


def test_alpha_zero_equals_classification_training():
    data = tiny_samples()
    pre = training.pretrain(data, HP)
    hp0 = Hyperparams(**{**HP.__dict__, "alpha": 0.0})
    a = training.self_train(pre, data, hp0)
    b = training.start_self_training(pre, hp0)
    training.train_steps(b, data, hp0, hp0.iterations)
    assert a.student.equals(b.student)


def test_cached_targets_are_bit_identical():
    data = tiny_samples()
    teacher = training.pretrain(data, HP)
    cache = training.fill_scale_cache(teacher, data, HP.scales)
    fresh = training.TeacherTargets(teacher, data, HP.scales, HP.thr)
    cached = training.TeacherTargets(teacher, data, HP.scales, HP.thr, scale_cache=cache)
    for i in range(len(data)):
        assert fresh(i).tobytes() == cached(i).tobytes()
    a = training.self_train(teacher, data, HP)
    b = training.self_train(teacher, data, HP, scale_cache=cache)
    assert a.student.equals(b.student)


def test_every_target_satisfies_reactivation_invariant():
    data = tiny_samples()
    seen = []

    def hook(i, t):
        assert np.all(t.max(axis=0) == 1.0)
        assert not t[1:][data[i].labels == 0].any()
        seen.append(i)

    training.self_train(training.pretrain(data, HP), data, HP, on_target=hook)
    assert len(seen) == HP.iterations * HP.batch_size


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts_with_iteration():
    data = tiny_samples()
    data[2].image[0, 0, 0] = np.inf
    hp = Hyperparams(**{**HP.__dict__, "batch_size": 1})
    with pytest.raises(training.NumericalAbort) as e:
        training.pretrain(data, hp)
    assert e.value.iteration >= 0 and f"iteration {e.value.iteration}" in str(e.value)


# -- checkpoints --------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    data = tiny_samples()
    state = training.self_train(training.pretrain(data, HP), data, Hyperparams(**{**HP.__dict__, "iterations": 3}))
    training.save_checkpoint(state, tmp_path / "a.ckpt")
    back = training.load_checkpoint(tmp_path / "a.ckpt")
    assert back.student.equals(state.student) and back.teacher.equals(state.teacher)
    assert back.iteration == 3 and back.history == state.history
    assert back.rng.bit_generator.state == state.rng.bit_generator.state
    training.save_checkpoint(back, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_split_run_equivalence(tmp_path):
    data = tiny_samples()
    pre = training.pretrain(data, HP)
    hp = Hyperparams(**{**HP.__dict__, "iterations": 100})
    full = training.self_train(pre, data, hp)

    half = training.start_self_training(pre, hp)
    targets = training.TeacherTargets(half.teacher, data, hp.scales, hp.thr)
    training.train_steps(half, data, hp, 50, targets)
    training.save_checkpoint(half, tmp_path / "half.ckpt")
    resumed = training.self_train(None, data, hp, state=training.load_checkpoint(tmp_path / "half.ckpt"))
    assert resumed.iteration == 100
    assert resumed.student.equals(full.student)


def test_pretrain_split_run_equivalence(tmp_path):
    data = tiny_samples()
    hp = Hyperparams(**{**HP.__dict__, "iterations": 30})
    full = training.pretrain_state(data, hp)
    part = training.pretrain_state(data, Hyperparams(**{**hp.__dict__, "iterations": 12}))
    training.save_checkpoint(part, tmp_path / "p.ckpt")
    resumed = training.pretrain_state(data, hp, state=training.load_checkpoint(tmp_path / "p.ckpt"))
    assert resumed.student.equals(full.student)


@pytest.mark.parametrize("mutate", [lambda b: b[:-3], lambda b: b"junk" + b, lambda b: b + b"\0\0"])
def test_corrupt_checkpoint_rejected_and_untouched(tmp_path, mutate):
    state = training.TrainState(backbone.init(0, 3))
    p = tmp_path / "c.ckpt"
    training.save_checkpoint(state, p)
    p.write_bytes(mutate(p.read_bytes()))
    before = p.read_bytes()
    with pytest.raises(tensor.FormatError):
        training.load_checkpoint(p)
    assert p.read_bytes() == before


def test_teacher_scale_override_allows_single_scales():
    data = tiny_samples()
    pre = training.pretrain(data, HP)
    seen = []
    state = training.self_train(pre, data, HP, scales=(2.0,), on_target=lambda i, t: seen.append(t))
    assert state.iteration == HP.iterations
    direct = fusion.make_teacher_target(pre, data[0].image, data[0].labels, (2.0,), HP.thr)
    hook = training.TeacherTargets(pre, data, (2.0,), HP.thr)
    assert hook(0).tobytes() == direct.tobytes()
    with pytest.raises(ValueError):
        Hyperparams(scales=(2.0,))
