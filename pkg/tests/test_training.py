import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bwe.autograd import checkpoint as ckpt
from bwe.data import AugmentationPolicy, build_validation_set
from bwe.evaluation import exact_mean, snr
from bwe.models import ResNetConfig, build_resnet
from bwe.training import (
    LOG_COLUMNS,
    Regularization,
    TrainConfig,
    Trainer,
    TrainingError,
    TrainState,
    load_network,
    plateau_scheduler,
    regularized_config,
    train,
    validate,
    write_log,
)

SMALL = ResNetConfig(num_blocks=1, channels=4, kernel_size=5)


def _config(**kw):
    base = dict(batch_size=2, chunk_len=512, record_interval=2, max_iterations=6, seed=3)
    return TrainConfig(**{**base, **kw})


def _vset(manifest, setting="single"):
    return build_validation_set(manifest.split("validation"), AugmentationPolicy.from_setting(setting),
                                start_s=0.25, length_s=0.5)


def _trace(losses, patience=5):
    state = TrainState(lr=1.0)
    lrs = []
    for loss in losses:
        plateau_scheduler(state, loss, patience)
        lrs.append(state.lr)
    return state, lrs


# -- plateau rule --

def test_plateau_improving():
    state, lrs = _trace([1.0, 0.9, 0.8])
    assert lrs == [1.0, 1.0, 1.0] and state.stale == 0 and state.best_loss == 0.8


def test_plateau_halves_once_after_five_stale():
    state, lrs = _trace([1.0, 1.0, 1.2, 1.0, 1.5, 1.0])
    assert lrs == [1.0] * 5 + [0.5]
    assert state.stale == 0 and state.best_loss == 1.0


def test_plateau_alternating_never_halves():
    _, lrs = _trace([1.0, 1.1, 0.9, 1.0, 0.8, 0.9, 0.7, 0.8, 0.6, 0.7, 0.5, 0.6])
    assert set(lrs) == {1.0}


def test_plateau_best_retained_across_halvings():
    state, lrs = _trace([1.0] + [2.0] * 10)
    assert lrs[5] == 0.5 and lrs[10] == 0.25 and state.best_loss == 1.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=60), st.integers(1, 6))
def test_lr_sequence_is_nonincreasing_power_of_two(losses, patience):
    _, lrs = _trace(losses, patience)
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    for lr in lrs:
        k = -math.log2(lr)
        assert k == int(k) and k >= 0


# -- configuration --

def test_train_config_defaults():
    c = TrainConfig()
    assert (c.batch_size, c.lr0, c.beta1, c.beta2) == (8, 5e-4, 0.9, 0.999)
    assert (c.record_interval, c.plateau_patience) == (2500, 5)


@pytest.mark.parametrize("reg,setting", [("none", "single"), ("bn", "single"), ("do", "single"),
                                         ("da", "multi")])
def test_regularization_picks_policy(reg, setting):
    assert TrainConfig(regularization=reg).setting.value.startswith(setting)


def test_regularized_config_flags():
    assert regularized_config(SMALL, "bn").use_batch_norm
    assert regularized_config(SMALL, "do").use_dropout
    da = regularized_config(SMALL, "da")
    assert not da.use_batch_norm and not da.use_dropout


@pytest.mark.parametrize("field", ["record_interval", "plateau_patience", "batch_size"])
def test_config_rejects_zero(field):
    with pytest.raises(ValueError, match=field):
        TrainConfig(**{field: 0})


# -- training loop --

def test_identity_network_initial_loss_is_filter_residual(tiny_corpus):
    net = build_resnet(SMALL, seed=0, dtype=np.float64)
    cfg = _config(max_iterations=1)
    trainer = Trainer(net, tiny_corpus.split("train"), cfg)
    probe = np.random.default_rng(cfg.seed)
    from bwe.data import sample_batch
    x, y, _ = sample_batch(trainer.manifest, trainer.policy, probe, cfg.batch_size, cfg.chunk_len, np.float64)
    loss = trainer.step()
    assert loss == pytest.approx(np.mean((x - y) ** 2), rel=1e-12)


def test_log_rows_and_window_average(tiny_corpus, tmp_path):
    net = build_resnet(SMALL, seed=0)
    trainer = Trainer(net, tiny_corpus.split("train"), _config(), _vset(tiny_corpus))
    trainer.run(log_path=tmp_path / "log.csv")
    rows = trainer.state.rows
    assert [r.iteration for r in rows] == [2, 4, 6]
    trace = trainer.state.loss_trace
    for i, r in enumerate(rows):
        assert r.avg_train_loss == pytest.approx(np.mean(trace[2 * i:2 * i + 2]), rel=1e-12)
        assert math.isfinite(r.snr_seen_db) and math.isfinite(r.snr_unseen_db)
    header = (tmp_path / "log.csv").read_text().splitlines()[0]
    assert header.split(",") == LOG_COLUMNS


def test_validate_identity_equals_input_snr(tiny_corpus):
    net = build_resnet(SMALL, seed=0, dtype=np.float64)
    vs = _vset(tiny_corpus, "multi")
    seen, unseen = validate(net, vs, 512)
    assert seen == exact_mean(snr(e.target, e.source) for e in vs.seen)
    assert unseen == exact_mean(snr(e.target, e.source) for e in vs.unseen)


def test_validate_exact_estimate_is_inf(tiny_corpus):
    net = build_resnet(SMALL, seed=0, dtype=np.float64)
    vs = _vset(tiny_corpus)
    for e in vs.seen + vs.unseen:
        e.source = e.target
    assert validate(net, vs, 512) == (math.inf, math.inf)


def test_validate_leaves_parameters_and_mode(tiny_corpus):
    net = build_resnet(regularized_config(SMALL, "bn"), seed=0, zero_final=False)
    Trainer(net, tiny_corpus.split("train"), _config(max_iterations=1)).run()
    net.train()
    before = [p.data.copy() for p in net.parameters()]
    buffers = {k: v.copy() for k, v in net.buffers().items()}
    validate(net, _vset(tiny_corpus), 512)
    assert net.training
    assert all(np.array_equal(a, p.data) for a, p in zip(before, net.parameters()))
    assert all(np.array_equal(buffers[k], v) for k, v in net.buffers().items())


def test_validation_does_not_perturb_training_draws(tiny_corpus):
    def run(vset):
        t = Trainer(build_resnet(SMALL, seed=0), tiny_corpus.split("train"), _config(), vset)
        t.run()
        return t.state.loss_trace

    assert run(None) == run(_vset(tiny_corpus))


def test_run_twice_bitwise(tiny_corpus, tmp_path):
    traces = []
    for name in ("a", "b"):
        net = build_resnet(SMALL, seed=1)
        state = train(net, tiny_corpus.split("train"), _config(), checkpoint_path=tmp_path / f"{name}.bin")
        traces.append(state.loss_trace)
    assert traces[0] == traces[1]
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_resume_equals_uninterrupted(tiny_corpus, tmp_path):
    cfg = _config(max_iterations=10, record_interval=3, regularization="da")
    vs = _vset(tiny_corpus, "multi")
    full = Trainer(build_resnet(SMALL, seed=2), tiny_corpus.split("train"), cfg, vs)
    full.run()

    part = Trainer(build_resnet(SMALL, seed=2), tiny_corpus.split("train"), cfg, vs)
    part.run(until=4)
    part.save(tmp_path / "mid.bin")
    resumed = Trainer.load(tmp_path / "mid.bin", tiny_corpus.split("train"), vs)
    resumed.run()
    assert resumed.state.loss_trace == full.state.loss_trace
    assert resumed.state.rows == full.state.rows
    for a, b in zip(resumed.net.parameters(), full.net.parameters()):
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(a.adam_m, b.adam_m) and np.array_equal(a.adam_v, b.adam_v)
        assert a.step_count == b.step_count


def test_resume_with_dropout_rng(tiny_corpus, tmp_path):
    cfg = _config(max_iterations=6, regularization="do")
    net_cfg = regularized_config(SMALL, "do")
    full = Trainer(build_resnet(net_cfg, seed=2), tiny_corpus.split("train"), cfg)
    full.run()
    part = Trainer(build_resnet(net_cfg, seed=2), tiny_corpus.split("train"), cfg)
    part.run(until=3)
    part.save(tmp_path / "mid.bin")
    resumed = Trainer.load(tmp_path / "mid.bin", tiny_corpus.split("train"))
    resumed.run()
    assert resumed.state.loss_trace == full.state.loss_trace


def test_checkpoint_at_iteration_zero_reproduces_init(tiny_corpus, tmp_path):
    net = build_resnet(SMALL, seed=5, zero_final=False)
    Trainer(net, tiny_corpus.split("train"), _config()).save(tmp_path / "init.bin")
    back, _ = load_network(tmp_path / "init.bin")
    fresh = build_resnet(SMALL, seed=5, zero_final=False)
    for a, b in zip(back.parameters(), fresh.parameters()):
        assert a.name == b.name and np.array_equal(a.data, b.data)


def test_train_saves_init_checkpoint(tiny_corpus, tmp_path):
    train(build_resnet(SMALL, seed=5), tiny_corpus.split("train"), _config(max_iterations=2),
          checkpoint_path=tmp_path / "c.bin")
    assert (tmp_path / "c.init.bin").is_file() and (tmp_path / "c.bin").is_file()


def test_truncated_checkpoint(tiny_corpus, tmp_path):
    p = tmp_path / "c.bin"
    Trainer(build_resnet(SMALL), tiny_corpus.split("train"), _config()).save(p)
    p.write_bytes(p.read_bytes()[:-7])
    with pytest.raises(ckpt.CheckpointError):
        Trainer.load(p, tiny_corpus.split("train"))


def test_nonfinite_loss_aborts(tiny_corpus):
    net = build_resnet(SMALL, seed=0)
    for p in net.parameters():
        p.data[...] = np.nan
    trainer = Trainer(net, tiny_corpus.split("train"), _config())
    with pytest.raises(TrainingError, match="non-finite loss .* iteration 1"):
        trainer.step()


def test_learning_rate_halves_in_loop(tiny_corpus):
    # every recorded loss ties the best with lr0 so tiny updates cannot improve
    cfg = _config(record_interval=1, plateau_patience=1, max_iterations=3, lr0=1e-30)
    trainer = Trainer(build_resnet(SMALL, seed=0), tiny_corpus.split("train"), cfg)
    trainer.state.best_loss = -1.0
    trainer.run()
    assert [r.lr for r in trainer.state.rows] == [1e-30, 5e-31, 2.5e-31]
    assert trainer.state.lr == 1.25e-31


def test_single_filter_training_never_draws_butterworth(tiny_corpus, caplog):
    for reg in ("none", "bn", "do", "da"):
        cfg = _config(regularization=reg, max_iterations=4)
        net = build_resnet(regularized_config(SMALL, reg), seed=0)
        with caplog.at_level(logging.DEBUG, logger="bwe.data"):
            Trainer(net, tiny_corpus.split("train"), cfg).run()
    draws = [r.getMessage() for r in caplog.records if r.getMessage().startswith("draw ")]
    assert len(draws) == 4 * 4 * 2
    single = draws[:24]
    assert all(line.endswith("filter=Chebyshev1-6") for line in single)
    assert not any("Butterworth" in line for line in draws)


def test_state_dict_round_trip_with_inf():
    s = TrainState(best_loss=math.inf)
    assert TrainState.from_dict(s.to_dict()) == s


def test_write_log_repr_round_trip(tmp_path):
    from bwe.training import LogRow

    rows = [LogRow(2500, 0.1 + 0.2, math.inf, -3.25, 5e-4)]
    write_log(rows, tmp_path / "l.csv")
    values = (tmp_path / "l.csv").read_text().splitlines()[1].split(",")
    assert float(values[1]) == 0.1 + 0.2 and values[2] == "inf"


def test_regularization_parse():
    assert Regularization.parse("DA") is Regularization.DATA_AUGMENTATION
    with pytest.raises(ValueError):
        Regularization.parse("weight-decay")
