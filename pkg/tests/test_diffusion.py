import zipfile

import numpy as np
import pytest

from codec import fit_codec, grids_to_table
from conftest import TOY_SCHEMA, make_toy_frame
from diffusion import (CHECKPOINT_MAGIC, TrainConfig, keyed_generator, load_checkpoint, loss, sample,
                       save_checkpoint, train, write_loss_log)
from errors import DataError, NumericError, UsageError
from layout import build_layout
from noise_schedule import NoiseSchedule
from schema_ingest import Table, parse_schema
from unet import DenoiserNet

FAST = dict(epochs=1, batch_size=32, timesteps=50, base_width=4, sample_every=1)


class OracleNet:
    """Возвращает истинный шум, восстановленный по известному x0"""

    def __init__(self, x0, schedule):
        self.x0, self.schedule = x0, schedule

    def forward(self, x_t, steps):
        abar = self.schedule.alphabar_at(steps)[:, None, None]
        return (x_t - np.sqrt(abar) * self.x0) / np.sqrt(1.0 - abar)


@pytest.fixture
def toy_setup():
    schema = parse_schema(TOY_SCHEMA)
    table = Table.from_frame(schema, make_toy_frame(100, seed=1))
    spec = fit_codec(table)
    return table, spec, build_layout('clustered', spec, table=table)


@pytest.fixture
def batch():
    return keyed_generator(9, 0).uniform(-1.0, 1.0, (64, 10, 11))


def test_zero_output_loss_is_noise_energy(batch):
    net = DenoiserNet(base_width=4, time_dim=8, groups=2)
    assert loss(net, batch, (1, 0, 1, 0), NoiseSchedule.linear(100)) == pytest.approx(1.0, abs=0.1)


def test_oracle_loss_is_zero(batch):
    schedule = NoiseSchedule.linear(100)
    assert loss(OracleNet(batch, schedule), batch, (1, 0, 1, 0), schedule) == pytest.approx(0.0, abs=1e-12)


def test_loss_is_bit_reproducible(tiny_net, batch):
    schedule = NoiseSchedule.linear(100)
    assert loss(tiny_net, batch, (3, 0, 2, 1), schedule) == loss(tiny_net, batch, (3, 0, 2, 1), schedule)


def test_seed_is_mandatory():
    with pytest.raises(UsageError):
        TrainConfig(seed=None)
    with pytest.raises(UsageError):
        TrainConfig(seed=1, epochs=-1)


def test_zero_epochs_returns_initial_net(toy_setup, tmp_path):
    table, spec, layout = toy_setup
    ckpt = train(table, layout, spec, TrainConfig(seed=1, **{**FAST, 'epochs': 0}))
    assert ckpt.epoch == 0
    assert ckpt.loss_history == []
    write_loss_log(ckpt, tmp_path / 'loss.csv')
    assert (tmp_path / 'loss.csv').read_text() == 'epoch,mean_loss,wall_seconds\n'


def test_same_seed_gives_identical_checkpoint_bytes(toy_setup, tmp_path):
    table, spec, layout = toy_setup
    cfg = TrainConfig(seed=7, **FAST)
    save_checkpoint(train(table, layout, spec, cfg), tmp_path / 'a.ckpt')
    save_checkpoint(train(table, layout, spec, cfg), tmp_path / 'b.ckpt')
    assert (tmp_path / 'a.ckpt').read_bytes() == (tmp_path / 'b.ckpt').read_bytes()


def test_snapshots_follow_schedule(toy_setup):
    table, spec, layout = toy_setup
    seen = []
    train(table, layout, spec, TrainConfig(seed=1, **{**FAST, 'epochs': 3, 'sample_every': 2}),
          on_snapshot=lambda ckpt: seen.append(ckpt.epoch))
    assert seen == [2, 3]


def test_divergence_reports_last_good(toy_setup):
    table, spec, layout = toy_setup
    net = DenoiserNet(base_width=4, seed=1)
    net.grad_hook = lambda grads: {name: g * np.nan for name, g in grads.items()}
    with pytest.raises(NumericError) as info:
        train(table, layout, spec, TrainConfig(seed=1, **FAST), net=net)
    assert info.value.last_good is not None
    assert info.value.last_good.epoch == 0


def test_checkpoint_roundtrip_keeps_sampling(toy_setup, tmp_path):
    table, spec, layout = toy_setup
    ckpt = train(table, layout, spec, TrainConfig(seed=2, **FAST))
    save_checkpoint(ckpt, tmp_path / 'model.ckpt')
    restored = load_checkpoint(tmp_path / 'model.ckpt')
    assert restored.codec_spec == spec
    assert restored.layout_obj == layout
    assert np.array_equal(sample(restored, 3, seed=5), sample(ckpt, 3, seed=5))


def test_untrained_samples_are_clamped(toy_setup):
    table, spec, layout = toy_setup
    ckpt = train(table, layout, spec, TrainConfig(seed=3, **{**FAST, 'epochs': 0}))
    grids = sample(ckpt, 4, seed=1)
    assert grids.shape == (4, 10, 11)
    assert np.isfinite(grids).all()
    assert grids.min() >= -1.0 and grids.max() <= 1.0
    for row, col in layout.padding_cells:
        assert not grids[:, row, col].any()
    assert len(grids_to_table(grids, layout, spec)) == 4


def test_unclamped_samples_leave_range(toy_setup):
    """Без обрезки ненатренированная сеть (ε̂ = 0) выходит за [−1, 1]; заполнение остается нулевым"""
    table, spec, layout = toy_setup
    ckpt = train(table, layout, spec, TrainConfig(seed=3, **{**FAST, 'epochs': 0}))
    raw = sample(ckpt, 4, seed=1, clamp=False)
    clamped = sample(ckpt, 4, seed=1)
    assert np.abs(raw).max() > 1.0
    assert np.array_equal(np.clip(raw, -1.0, 1.0), clamped)
    for row, col in layout.padding_cells:
        assert not raw[:, row, col].any()

    decoded = grids_to_table(raw, layout, spec, clamp=False)
    x = decoded.column('x')
    assert ((x < spec.minima[0]) | (x > spec.maxima[0])).any()
    inside = grids_to_table(clamped, layout, spec).column('x')
    assert ((inside >= spec.minima[0]) & (inside <= spec.maxima[0])).all()


def test_posterior_variance_sampling(toy_setup):
    table, spec, layout = toy_setup
    ckpt = train(table, layout, spec, TrainConfig(seed=3, **{**FAST, 'epochs': 0}))
    posterior = sample(ckpt, 3, seed=2, clamp=False, variance='posterior')
    assert np.array_equal(posterior, sample(ckpt, 3, seed=2, clamp=False, variance='posterior'))
    assert not np.array_equal(posterior, sample(ckpt, 3, seed=2, clamp=False, variance='beta'))
    with pytest.raises(UsageError):
        sample(ckpt, 3, seed=2, variance='sigma')


def test_non_finite_sampling_reports_step(toy_setup):
    table, spec, layout = toy_setup
    ckpt = train(table, layout, spec, TrainConfig(seed=3, **{**FAST, 'epochs': 0}))
    ckpt.params['head.b'] = np.full_like(ckpt.params['head.b'], np.inf)
    with pytest.raises(NumericError) as info:
        sample(ckpt, 2, seed=1)
    assert info.value.step == 50


def test_corrupt_checkpoints_rejected(tmp_path):
    with pytest.raises(UsageError):
        load_checkpoint(tmp_path / 'missing.ckpt')
    (tmp_path / 'junk.ckpt').write_bytes(b'not a zip')
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / 'junk.ckpt')
    with zipfile.ZipFile(tmp_path / 'foreign.ckpt', 'w') as archive:
        archive.writestr('meta.json', '{"magic": "OTHER", "version": 1}')
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / 'foreign.ckpt')
    assert CHECKPOINT_MAGIC != 'OTHER'


@pytest.mark.slow
def test_toy_model_learns_marginals():
    schema = parse_schema(TOY_SCHEMA)
    table = Table.from_frame(schema, make_toy_frame(500, seed=0))
    spec = fit_codec(table)
    layout = build_layout('clustered', spec, table=table)
    cfg = TrainConfig(seed=0, epochs=30, batch_size=50, learning_rate=2e-3, timesteps=100, base_width=8)
    ckpt = train(table, layout, spec, cfg)
    assert ckpt.loss_history[-1][1] <= 0.5 * ckpt.loss_history[0][1]

    synth = grids_to_table(sample(ckpt, 1000, seed=0), layout, spec)
    real_share = (table.column('flag') == 'yes').mean()
    synth_share = (synth.column('flag') == 'yes').mean()
    assert abs(real_share - synth_share) <= 0.1
