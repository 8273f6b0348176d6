#!/usr/bin/env python

"""Tests for `attneraser` package."""

import struct

import numpy as np
import pytest
import torch
from torch import nn

from attneraser import Checkpoint, Denoiser, DenoiserConfig, NoiseSchedule, Parameter, RemovalConfig, \
    RemovalMask, SelfAttention, TensorArchive, Trainer, make_rng
from attneraser.Attention import AttentionMode, STANDARD, aas_attention, ss_attention, standard_attention
from attneraser.Checkpoint import load_checkpoint, save_checkpoint
from attneraser.Codec import AutoencoderCodec, IdentityCodec
from attneraser.Denoiser import predict
from attneraser.Guidance import guided_predict, sarg_epsilon
from attneraser.NoiseSchedule import make_schedule
from attneraser.Pipeline import RemovalTrace, blend_latents, dip_remove, invert_roundtrip, sip_remove
from attneraser.RemovalMask import flatten_mask
from attneraser.Trainer import diffusion_loss
from attneraser.errors import ArchiveError, ArchiveVersionError, ConfigError, DegenerateMaskError, \
    DimensionError, TrainingError
from attneraser.numerics import gaussian, kmeans, masked_row_softmax, matmul, pca_top, svd_top1

EPS = 1.e-12


def micro_config(**changes):
    values = dict(image_size=8, channels=3, base_width=8, channel_mults=(1, 2), attention_resolutions=(8, 4))
    values.update(changes)
    return DenoiserConfig(**values)


def micro_checkpoint(**changes):
    return Checkpoint(Denoiser(micro_config(**changes)), NoiseSchedule(100, n_inference_steps=10))


def sample_image(seed=1, channels=3, size=8):
    return torch.from_numpy(make_rng(seed).uniform(-1., 1., (channels, size, size))).to(torch.float32)


def block_mask(size=8):
    base = torch.zeros(size, size)
    base[2:4, 3:6] = 1.
    return RemovalMask(base)


def test_numerics_matmul():
    """tests to ensure the behaviour of matmul"""
    x = torch.tensor([[1.5, -2.], [0.25, 3.]], dtype=torch.float64)
    assert torch.equal(matmul(torch.eye(2, dtype=torch.float64), x), x)
    a = torch.tensor([[1., 2.], [3., 4.]], dtype=torch.float64)
    b = torch.tensor([[0.], [1.]], dtype=torch.float64)
    assert torch.equal(matmul(a, b), torch.tensor([[2.], [4.]], dtype=torch.float64))
    assert torch.equal(matmul(torch.zeros(3, 3), torch.ones(3, 3)), torch.zeros(3, 3))
    with pytest.raises(DimensionError):
        matmul(torch.ones(2, 3), torch.ones(2, 3))
    with pytest.raises(DimensionError):
        matmul(torch.ones(3), torch.ones(3, 1))


def test_numerics_masked_row_softmax():
    """tests to ensure the behaviour of masked_row_softmax"""
    s = gaussian(make_rng(3), (3, 4), torch.float64)
    plain = masked_row_softmax(s)
    assert torch.max(torch.abs(plain - torch.softmax(s, dim=-1))) < EPS

    mask = torch.tensor([[True, False, False, True]])
    s_sentinel = s.clone()
    s_sentinel[:, 0] = -float('inf')
    for logits in [s, s_sentinel]:
        a = masked_row_softmax(logits, mask)
        assert torch.all(a[:, 0] == 0.) and torch.all(a[:, 3] == 0.)
        assert torch.max(torch.abs(a.sum(dim=-1) - 1.)) < 1.e-9
        assert torch.max(torch.abs(a[:, 1:3] - torch.softmax(s[:, 1:3], dim=-1))) < EPS

    with pytest.raises(DegenerateMaskError):
        masked_row_softmax(s, torch.ones(1, 4, dtype=torch.bool))
    with pytest.raises(TypeError):
        masked_row_softmax(s, torch.ones(1, 4))


def test_numerics_pca_svd_kmeans():
    """tests to ensure the behaviour of pca_top, svd_top1 and kmeans"""
    direction = torch.tensor([3., 4., 0.], dtype=torch.float64) / 5.
    positions = torch.arange(6, dtype=torch.float64)
    x = positions[:, None] * direction[None, :] + 1.
    projected = pca_top(x, 1)
    centred = positions - positions.mean()
    assert projected.shape == (6, 1)
    assert torch.max(torch.abs(projected[:, 0].abs() - centred.abs())) < 1.e-10
    with pytest.raises(DimensionError):
        pca_top(x, 4)

    u = torch.tensor([1., 2., 2.], dtype=torch.float64) / 3.
    v = torch.tensor([0., 0.6, 0.8], dtype=torch.float64)
    u_hat, sigma, v_hat = svd_top1(3. * torch.outer(u, v))
    assert np.abs(sigma - 3.) < 1.e-10
    assert torch.max(torch.abs(v_hat - v)) < 1.e-10
    assert torch.max(torch.abs(sigma * torch.outer(u_hat, v_hat) - 3. * torch.outer(u, v))) < 1.e-10

    points = torch.cat([gaussian(make_rng(5), (5, 2), torch.float64) * 0.01,
                        gaussian(make_rng(6), (5, 2), torch.float64) * 0.01 + 10.])
    labels = kmeans(points, 2, make_rng(7))
    assert len(set(labels[:5].tolist())) == 1
    assert len(set(labels[5:].tolist())) == 1
    assert labels[0] != labels[5]


def test_numerics_rng():
    """tests to ensure the behaviour of make_rng"""
    a = make_rng(123).standard_normal(5)
    b = make_rng(123).standard_normal(5)
    c = make_rng(123, 1).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    with pytest.raises(TypeError):
        make_rng(1.5)


def test_class_Parameter():
    """tests to ensure the behaviour class Parameter"""
    test_parameter = Parameter('test_par', 10., parameter_min=5., parameter_max=100.)
    for value in [True, 'fifty']:
        error_caught = False
        try:
            test_parameter.set_value(value)
        except TypeError:
            error_caught = True
        assert error_caught
    test_parameter.set_value(50)
    assert test_parameter.get_value() == 50.
    with pytest.raises(ConfigError):
        test_parameter.set_value(200.)
    test_parameter.set_text('7.5')
    assert test_parameter.get_value() == 7.5
    test_parameter.reset()
    assert test_parameter.get_value() == 10.

    choice = Parameter('mode', 'sip', parameter_type='str', choices=['sip', 'dip'])
    choice.set_text('DIP')
    assert choice.get_value() == 'dip'
    with pytest.raises(ConfigError):
        choice.set_text('other')
    flag = Parameter('flag', False, parameter_type='bool')
    flag.set_text('yes')
    assert flag.get_value() is True


def test_class_NoiseSchedule():
    """tests to ensure the behaviour class NoiseSchedule"""
    schedule = NoiseSchedule(1000, 1.e-4, 0.02, 50)
    assert schedule.timestep(50) == 1000
    assert schedule.timestep(1) == 20
    assert schedule.timestep(0) == 0
    assert schedule.get_alpha_bar(0) == 1.
    assert schedule.step_pairs()[0] == (50, 1000, 980)
    assert schedule.step_pairs()[-1] == (1, 20, 0)
    assert bool(torch.all(schedule.alpha_bar[1:] < schedule.alpha_bar[:-1]))
    assert schedule.with_inference_steps(40).timestep(1) == 25

    for args in [(10, 1.e-4, 0.02, 20), (100, 0.02, 1.e-4, 10), (100, 0., 0.02, 10), (0, 1.e-4, 0.02, 1)]:
        with pytest.raises(ConfigError):
            NoiseSchedule(*args)
    with pytest.raises(ValueError):
        schedule.get_alpha_bar(1001)

    x0 = gaussian(make_rng(1), (2, 3, 4, 4), torch.float64)
    eps = gaussian(make_rng(2), (2, 3, 4, 4), torch.float64)
    x_t = schedule.add_noise(x0, 500, eps)
    assert torch.max(torch.abs(schedule.ddim_step(x_t, eps, 500, 0) - x0)) < 1.e-10
    with pytest.raises(ValueError):
        schedule.ddim_step(x_t, eps, 100, 200)

    # per batch item timesteps
    t = torch.tensor([10, 900])
    noised = schedule.add_noise(x0, t, eps)
    assert torch.max(torch.abs(noised[1] - schedule.add_noise(x0[1:], 900, eps[1:])[0])) < EPS

    restored = NoiseSchedule.from_metadata(schedule.to_metadata())
    assert torch.equal(restored.alpha_bar, schedule.alpha_bar)
    assert restored.n_inference_steps == 50
    assert torch.equal(make_schedule(1000, 1.e-4, 0.02, 50).alpha_bar, schedule.alpha_bar)


def test_NoiseSchedule_inversion_roundtrip():
    """DDIM inversion followed by DDIM sampling returns the input for an x independent predictor"""
    schedule = NoiseSchedule(1000, n_inference_steps=50)
    x0 = gaussian(make_rng(4), (1, 3, 8, 8), torch.float64)
    offsets = gaussian(make_rng(5), (1, 3, 8, 8), torch.float64)

    def eps_fn(x, t):
        return offsets * np.cos(t / 300.)

    trajectory = schedule.ddim_invert(x0, eps_fn)
    assert len(trajectory) == 50
    z = trajectory[-1]
    for k, t, t_prev in schedule.step_pairs():
        z = schedule.ddim_step(z, eps_fn(z, t), t, t_prev)
    assert torch.max(torch.abs(z - x0)) < 1.e-6


def test_class_RemovalMask():
    """tests to ensure the behaviour class RemovalMask"""
    assert torch.equal(flatten_mask(torch.zeros(8, 8), 4), torch.zeros(1, 16))
    assert torch.equal(flatten_mask(torch.tensor([[1., 0.], [0., 0.]]), 1), torch.ones(1, 1))
    single = torch.zeros(4, 4)
    single[2, 3] = 1.
    assert torch.equal(flatten_mask(single, 2), torch.tensor([[0., 0., 0., 1.]]))
    with pytest.raises(DimensionError):
        flatten_mask(single, 3)

    mask = RemovalMask(single, [4, 2])
    assert torch.equal(mask.flat(2), torch.tensor([[0., 0., 0., 1.]]))
    assert mask.latent(2, 2).shape == (1, 1, 2, 2)
    assert np.abs(mask.coverage() - 1. / 16.) < EPS
    assert not mask.is_empty()
    assert RemovalMask(torch.zeros(4, 4)).is_empty()
    with pytest.raises(DegenerateMaskError):
        RemovalMask(torch.ones(4, 4), [2])
    with pytest.raises(ValueError):
        RemovalMask(torch.full((4, 4), 0.5))


def attention_layer(channels=4, seed=0):
    torch.manual_seed(seed)
    return SelfAttention(channels, layer_id='test').double()


def test_standard_attention():
    """tests to ensure the behaviour of standard_attention"""
    layer = attention_layer()
    z1 = gaussian(make_rng(1), (1, 4), torch.float64)
    out, rec = standard_attention(layer, z1)
    assert torch.equal(rec.attention, torch.ones(1, 1, dtype=torch.float64))
    with torch.no_grad():
        assert torch.max(torch.abs(out - layer.to_out(layer.to_v(z1)))) < EPS

    z3 = gaussian(make_rng(2), (3, 4), torch.float64)
    out, rec = standard_attention(layer, z3)
    with torch.no_grad():
        q, k, v = layer.to_q(z3), layer.to_k(z3), layer.to_v(z3)
        a = torch.softmax(q @ k.T / 2., dim=-1)
        assert torch.max(torch.abs(rec.attention - a)) < 1.e-6
        assert torch.max(torch.abs(out - layer.to_out(a @ v))) < 1.e-6

    with torch.no_grad():
        layer.to_k.weight.zero_()
    z4 = gaussian(make_rng(3), (4, 4), torch.float64)
    _, rec = standard_attention(layer, z4)
    assert torch.max(torch.abs(rec.attention - 0.25)) < EPS

    with pytest.raises(DimensionError):
        standard_attention(layer, torch.ones(4, 5, dtype=torch.float64))


def test_aas_attention():
    """tests to ensure the behaviour of aas_attention"""
    layer = attention_layer()
    z = gaussian(make_rng(4), (4, 4), torch.float64)
    out_std, _ = standard_attention(layer, z)
    out_aas, _ = aas_attention(layer, z, torch.zeros(1, 4))
    assert torch.max(torch.abs(out_std - out_aas)) < EPS

    _, rec = aas_attention(layer, z[:2], torch.tensor([[1., 0.]]))
    assert torch.equal(rec.attention, torch.tensor([[0., 1.], [0., 1.]], dtype=torch.float64))

    mask = torch.tensor([[0., 1., 0., 1.]])
    _, rec = aas_attention(layer, z, mask)
    restricted = torch.softmax(rec.similarity[:, [0, 2]], dim=-1)
    assert torch.all(rec.attention[:, [1, 3]] == 0.)
    assert torch.max(torch.abs(rec.attention[:, [0, 2]] - restricted)) < EPS

    with pytest.raises(DegenerateMaskError):
        aas_attention(layer, z, torch.ones(1, 4))


def test_ss_attention():
    """tests to ensure the behaviour of ss_attention"""
    layer = attention_layer()
    z = gaussian(make_rng(5), (4, 4), torch.float64)
    mask = torch.tensor([[1., 0., 0., 1.]])
    out_aas, _ = aas_attention(layer, z, mask)

    out_one, _, _ = ss_attention(layer, z, mask, 1.)
    assert torch.equal(out_one, out_aas)

    out_zero, rec_obj, rec_bg = ss_attention(layer, z, mask, 0.)
    for row in [0, 3]:
        assert torch.max(torch.abs(rec_obj.attention[row, [1, 2]] - 0.5)) < EPS
    # background rows come from the aas branch
    assert torch.equal(out_zero[[1, 2]], out_aas[[1, 2]])

    suppression = 0.3
    out, rec_obj, rec_bg = ss_attention(layer, z, mask, suppression)
    columns = mask.reshape(-1) > 0.5
    obj_branch = masked_row_softmax(suppression * rec_bg.similarity, columns)
    bg_branch = masked_row_softmax(rec_bg.similarity, columns)
    assert torch.max(torch.abs(rec_obj.attention - obj_branch)) < EPS
    assert torch.max(torch.abs(rec_bg.attention - bg_branch)) < EPS
    with torch.no_grad():
        v = layer.to_v(z)
        expected = torch.where(columns[:, None], obj_branch @ v, bg_branch @ v)
        assert torch.max(torch.abs(out - layer.to_out(expected))) < 1.e-10

    for bad in [-0.1, 1.5]:
        with pytest.raises(ConfigError):
            ss_attention(layer, z, mask, bad)


def test_class_AttentionMode():
    """tests to ensure the behaviour class AttentionMode"""
    assert AttentionMode.standard().is_standard()
    assert AttentionMode.aas_ss(0.3) == AttentionMode('ss', 0.3)
    assert AttentionMode.aas() != AttentionMode.aas_ss(1.)
    assert str(AttentionMode.aas_ss(0.3)) == 'ss(0.3)'
    with pytest.raises(ConfigError):
        AttentionMode.aas_ss(2.)
    with pytest.raises(ConfigError):
        AttentionMode('other')


def test_class_DenoiserConfig():
    """tests to ensure the behaviour class DenoiserConfig"""
    config = DenoiserConfig()
    config.validate()
    assert config.resolutions() == [64, 32, 16, 8]
    assert DenoiserConfig.from_metadata(config.to_metadata()) == config
    for changes in [dict(attention_resolutions=(5,)), dict(attention_placements=('encoder',)),
                    dict(image_size=60), dict(aas_placements=('middle',)), dict(n_heads=3)]:
        with pytest.raises(ConfigError):
            DenoiserConfig(**changes).validate()


def test_class_Denoiser():
    """tests to ensure the behaviour class Denoiser"""
    model = Denoiser(micro_config())
    z = gaussian(make_rng(1), (2, 3, 8, 8))
    eps, records = predict(model, z, 50)
    assert eps.shape == z.shape
    assert records == []
    again, _ = predict(model, z, 50)
    assert torch.equal(eps, again)
    assert torch.equal(Denoiser(micro_config()).stem.weight, model.stem.weight)

    empty = RemovalMask(torch.zeros(8, 8))
    eps_aas, _ = predict(model, z, 50, AttentionMode.aas(), empty)
    assert torch.max(torch.abs(eps_aas - eps)) < 1.e-6

    mask = block_mask()
    eps_aas, records = predict(model, z, 50, AttentionMode.aas(), mask, record=True)
    eps_ss, _ = predict(model, z, 50, AttentionMode.aas_ss(1.), mask)
    assert torch.equal(eps_aas, eps_ss)
    assert len(records) == len(model.attention_layers())
    for rec in records:
        assert rec.timestep == 50
        assert rec.mode == ('aas' if rec.layer_id.startswith('decoder') else 'standard')

    with pytest.raises(ValueError):
        predict(model, z, 50, AttentionMode.aas())
    with pytest.raises(ValueError):
        predict(model, z, 50, STANDARD, mask)
    with pytest.raises(DimensionError):
        predict(model, torch.zeros(1, 3, 16, 16), 50)


def test_class_Trainer():
    """tests to ensure the behaviour class Trainer"""
    config = micro_config(channels=1, base_width=4)
    schedule = NoiseSchedule(100, n_inference_steps=10)
    image = sample_image(channels=1)[None]

    model = Denoiser(config)
    before = {key: value.clone() for key, value in model.state_dict().items()}
    Trainer(model, schedule, make_rng(0), lr=0., batch_size=1).train(image, 3)
    for key, value in model.state_dict().items():
        assert torch.equal(value, before[key])

    model = Denoiser(config)
    losses = Trainer(model, NoiseSchedule(1000), make_rng(0), lr=1.e-3, batch_size=16).train(image, 200)
    assert len(losses) == 200
    assert np.mean(losses[-20:]) < 0.5 * np.mean(losses[:5])

    model = Denoiser(config)
    before = {key: value.clone() for key, value in model.state_dict().items()}
    broken = image.clone()
    broken[0, 0, 0, 0] = float('inf')
    with pytest.raises(TrainingError) as info:
        Trainer(model, schedule, make_rng(0), batch_size=1).train(broken, 1)
    assert info.value.step == 1
    for key, value in model.state_dict().items():
        assert torch.equal(value, before[key])

    model = Denoiser(config)
    before = {key: value.clone() for key, value in model.state_dict().items()}
    trainer = Trainer(model, schedule, make_rng(0), batch_size=1)
    update = trainer.optimizer.step

    def overflowing_step():
        update()
        with torch.no_grad():
            model.out_conv.weight[0, 0, 0, 0] = float('inf')

    trainer.optimizer.step = overflowing_step
    with pytest.raises(TrainingError) as info:
        trainer.train(image, 1)
    assert info.value.step == 1
    assert len(trainer.losses) == 0
    for key, value in model.state_dict().items():
        assert torch.equal(value, before[key])
        assert torch.equal(info.value.last_good_state[key], before[key])

    with pytest.raises(ConfigError):
        Trainer(model, schedule, make_rng(0), lr=-1.)


def test_Trainer_gradient_check():
    """analytic gradients of the training loss agree with central differences"""
    config = DenoiserConfig(image_size=4, channels=1, base_width=2, channel_mults=(1, 2),
                            attention_resolutions=(4, 2), seed=3)
    model = Denoiser(config).double()
    assert model.n_parameters() < 5000
    schedule = NoiseSchedule(100, n_inference_steps=10)
    x0 = gaussian(make_rng(1), (2, 1, 4, 4), torch.float64)
    eps = gaussian(make_rng(2), (2, 1, 4, 4), torch.float64)
    t = torch.tensor([30, 80])

    model.zero_grad()
    diffusion_loss(model, schedule, x0, t, eps).backward()
    step = 1.e-6
    for name, parameter in model.named_parameters():
        flat = parameter.data.view(-1)
        analytic = parameter.grad.view(-1)
        for index in sorted(set([0, flat.numel() // 2, flat.numel() - 1])):
            saved = float(flat[index])
            with torch.no_grad():
                flat[index] = saved + step
                up = float(diffusion_loss(model, schedule, x0, t, eps))
                flat[index] = saved - step
                down = float(diffusion_loss(model, schedule, x0, t, eps))
                flat[index] = saved
            numeric = (up - down) / (2. * step)
            scale = max(abs(numeric), abs(float(analytic[index])))
            assert abs(numeric - float(analytic[index])) <= 1.e-3 * scale + 1.e-7, name


def test_class_TensorArchive():
    """tests to ensure the behaviour class TensorArchive"""
    archive = TensorArchive(metadata={'kind': 'trace'})
    archive.add('values', torch.arange(6, dtype=torch.float32).reshape(2, 3))
    notes = {'path': 'C:\\runs\rA', 'separator': 'a\u2028b', 'feed': 'x\x0cy', 'tab': 'p\x0bq\x1cr\x85s\u2029',
             'empty': '', 'equals': 'a=b=c'}
    for key, value in notes.items():
        archive.set_meta(key, value)
    restored = TensorArchive.from_bytes(archive.to_bytes())
    assert restored.metadata == archive.metadata
    assert torch.equal(restored['values'], archive['values'])
    assert restored.to_bytes() == archive.to_bytes()

    for key, value in [('bad\nkey', 'v'), ('k', 'two\nlines'), ('a=b', 'v')]:
        with pytest.raises(ValueError):
            archive.set_meta(key, value)


def test_class_Checkpoint(tmp_path):
    """tests to ensure the behaviour class Checkpoint"""
    checkpoint = micro_checkpoint(seed=4)
    path = checkpoint.save_file(tmp_path / 'micro')
    assert path.suffix == '.atte'
    restored = Checkpoint.open_file(path)
    assert restored.config == checkpoint.config
    assert restored.schedule.n_inference_steps == 10
    assert isinstance(restored.codec, IdentityCodec)
    z = gaussian(make_rng(1), (1, 3, 8, 8))
    assert torch.equal(predict(restored.model, z, 40)[0], predict(checkpoint.model, z, 40)[0])

    data = path.read_bytes()
    truncated = tmp_path / 'truncated.atte'
    truncated.write_bytes(data[:-10])
    with pytest.raises(ArchiveError):
        Checkpoint.open_file(truncated)
    versioned = tmp_path / 'versioned.atte'
    versioned.write_bytes(data[:4] + struct.pack('<H', 99) + data[6:])
    with pytest.raises(ArchiveVersionError):
        Checkpoint.open_file(versioned)
    other = TensorArchive(metadata={'kind': 'trace'}).save_file(tmp_path / 'other')
    with pytest.raises(ArchiveError):
        Checkpoint.open_file(other)

    model, schedule, config = load_checkpoint(save_checkpoint(checkpoint.model, checkpoint.schedule,
                                                              checkpoint.config, tmp_path / 'helper.atte'))
    assert config == checkpoint.config and schedule.n_train_steps == 100
    assert torch.equal(predict(model, z, 40)[0], predict(checkpoint.model, z, 40)[0])
    with pytest.raises(ValueError):
        save_checkpoint(checkpoint.model, checkpoint.schedule, micro_config(base_width=4), tmp_path / 'bad')


def test_class_Codec(tmp_path):
    """tests to ensure the behaviour of the codecs"""
    image = sample_image()[None]
    identity = IdentityCodec()
    assert torch.equal(identity.decode(identity.encode(image)), image)

    codec = AutoencoderCodec(3, hidden=8, seed=2)
    assert codec.encode(image).shape == (1, 3, 4, 4)
    assert codec.decode(codec.encode(image)).shape == image.shape
    losses = codec.fit(image.repeat(4, 1, 1, 1), make_rng(0), steps=5, batch_size=2)
    assert len(losses) == 5

    checkpoint = Checkpoint(Denoiser(micro_config(image_size=4, attention_resolutions=(4, 2))),
                            NoiseSchedule(100, n_inference_steps=10), codec)
    restored = Checkpoint.open_file(checkpoint.save_file(tmp_path / 'coded'))
    assert torch.equal(restored.codec.encode(image), codec.encode(image))

    # an 8x8 latent does not fit a 4x4 checkpoint
    config = RemovalConfig('sip', steps=4, ss_cutoff=2, codec='autoencoder')
    wide = Checkpoint(Denoiser(micro_config(image_size=4, attention_resolutions=(4, 2))),
                      NoiseSchedule(100, n_inference_steps=10), AutoencoderCodec(3, hidden=8))
    with pytest.raises(DimensionError):
        sip_remove(wide, sample_image(size=16), RemovalMask(torch.zeros(16, 16)), config)


def test_sarg_epsilon():
    """tests to ensure the behaviour of sarg_epsilon"""
    plain = gaussian(make_rng(1), (1, 3, 4, 4), torch.float64)
    aas = gaussian(make_rng(2), (1, 3, 4, 4), torch.float64)
    assert torch.equal(sarg_epsilon(plain, aas, 0.), plain)
    assert torch.equal(sarg_epsilon(plain, aas, 1.), aas)
    assert torch.max(torch.abs(sarg_epsilon(torch.zeros_like(aas), aas, 9.) - 9. * aas)) < EPS
    with pytest.raises(DimensionError):
        sarg_epsilon(plain, aas[:, :2], 1.)
    with pytest.raises(ConfigError):
        sarg_epsilon(plain, aas, -1.)


def test_guided_predict():
    """tests to ensure the behaviour of guided_predict"""
    model = Denoiser(micro_config())
    z = gaussian(make_rng(3), (1, 3, 8, 8))
    mask = block_mask()
    standard, _ = predict(model, z, 60)

    config = RemovalConfig('sip', steps=10, ss_cutoff=6, scale=0.)
    assert torch.equal(guided_predict(model, z, 60, mask, config, 8)[0], standard)
    config = RemovalConfig('sip', steps=10, ss_cutoff=6, scale=9.)
    assert torch.equal(guided_predict(model, z, 60, RemovalMask(torch.zeros(8, 8)), config, 8)[0], standard)

    config = RemovalConfig('sip', steps=10, ss_cutoff=6, scale=9., suppression=0.3)
    inside, _ = guided_predict(model, z, 60, mask, config, 8)
    expected = sarg_epsilon(standard, predict(model, z, 60, AttentionMode.aas_ss(0.3), mask)[0], 9.)
    assert torch.equal(inside, expected)
    at_cutoff, _ = guided_predict(model, z, 60, mask, config, 6)
    assert torch.equal(at_cutoff, expected)
    _, records = guided_predict(model, z, 60, mask, config, 5, record=True)
    assert [rec.mode for rec in records].count('standard') == len(model.attention_layers())
    assert sorted(rec.layer_id for rec in records if rec.mode == 'aas') == ['decoder.4', 'decoder.8']
    outside, _ = guided_predict(model, z, 60, mask, config, 5)
    expected = sarg_epsilon(standard, predict(model, z, 60, AttentionMode.aas(), mask)[0], 9.)
    assert torch.equal(outside, expected)

    config = RemovalConfig('sip', steps=10, ss_cutoff=6, suppression=1.)
    assert torch.equal(guided_predict(model, z, 60, mask, config, 8)[0], outside)

    config = RemovalConfig('sip', steps=10, ss_cutoff=6, guidance='aas-only')
    only, records = guided_predict(model, z, 60, mask, config, 3, record=True)
    assert torch.equal(only, predict(model, z, 60, AttentionMode.aas(), mask)[0])
    assert len(records) == len(model.attention_layers())


def test_class_RemovalConfig(tmp_path):
    """tests to ensure the behaviour class RemovalConfig"""
    sip = RemovalConfig.defaults('sip')
    assert (sip.steps, sip.ss_cutoff, sip.scale, sip.suppression, sip.seed) == (40, 30, 9., 0.3, 123)
    dip = RemovalConfig.defaults('dip')
    assert (dip.steps, dip.ss_cutoff, dip.scale, dip.suppression) == (50, 40, 9., 0.3)
    assert sip.codec == 'identity' and sip.guidance == 'sarg'
    assert sip.in_ss_window(30) and sip.in_ss_window(40) and not sip.in_ss_window(29)

    for changes in [dict(ss_cutoff=41), dict(ss_cutoff=0), dict(scale=-1.), dict(suppression=1.5),
                    dict(other=1), dict(pipeline='dip')]:
        with pytest.raises(ConfigError):
            RemovalConfig('sip', **changes)
    with pytest.raises(ConfigError):
        RemovalConfig('other')

    copy = sip.copy(s='3')
    assert copy.scale == 3. and copy.steps == 40 and sip.scale == 9.

    path = tmp_path / 'removal.cfg'
    path.write_text('# settings\npipeline=dip\nsteps=20\nss-cutoff=10\nlambda=0.5\n')
    config = RemovalConfig.from_file(path)
    assert (config.pipeline, config.steps, config.ss_cutoff, config.suppression) == ('dip', 20, 10, 0.5)
    assert RemovalConfig.from_file(config.save_file(tmp_path / 'saved.cfg')) == config


def test_blend_latents():
    """tests to ensure the behaviour of blend_latents"""
    z = gaussian(make_rng(1), (1, 2, 4, 4))
    x = gaussian(make_rng(2), (1, 2, 4, 4))
    assert torch.equal(blend_latents(z, x, torch.zeros(1, 1, 4, 4)), x)
    assert torch.equal(blend_latents(z, x, torch.ones(1, 1, 4, 4)), z)
    checker = ((torch.arange(4)[:, None] + torch.arange(4)[None, :]) % 2).to(torch.float32)[None, None]
    blended = blend_latents(z, x, checker)
    for c in range(2):
        for i in range(4):
            for j in range(4):
                assert blended[0, c, i, j] == (z if (i + j) % 2 == 1 else x)[0, c, i, j]
    with pytest.raises(DimensionError):
        blend_latents(z, x[:, :1], checker)
    with pytest.raises(ValueError):
        blend_latents(z, x, 0.5 * checker)


def test_sip_remove(tmp_path):
    """tests to ensure the behaviour of sip_remove"""
    checkpoint = micro_checkpoint()
    image = sample_image()
    mask = block_mask()
    outside = mask.base == 0
    for scale in [0., 9.]:
        config = RemovalConfig('sip', steps=10, ss_cutoff=6, scale=scale)
        result, trace = sip_remove(checkpoint, image, mask, config)
        assert trace is None
        assert result.shape == image.shape
        assert torch.max(torch.abs(result[:, outside] - image[:, outside])) <= 1.e-5

    config = RemovalConfig('sip', steps=10, ss_cutoff=6)
    result, _ = sip_remove(checkpoint, image, RemovalMask(torch.zeros(8, 8)), config)
    assert torch.max(torch.abs(result - image)) <= 1.e-5

    result, trace = sip_remove(checkpoint, image, mask, config, trace=True)
    assert len(trace.latents) == 10
    layers = checkpoint.model.attention_layers()
    rewritten = [layer for layer in layers if layer.placement in checkpoint.config.aas_placements]
    assert len(trace.records) == 10 * (len(layers) + len(rewritten))
    keys = [(rec.layer_id, rec.timestep, rec.mode) for rec in trace.records]
    assert len(set(keys)) == len(keys)
    restored = RemovalTrace.open_file(trace.save_file(tmp_path / 'trace'))
    assert len(restored.records) == len(trace.records)
    assert torch.equal(restored.records[-1].attention, trace.records[-1].attention)
    assert restored.records[-1].timestep == trace.records[-1].timestep
    assert restored.metadata['config.scale'] == '9.0'

    with pytest.raises(ConfigError):
        sip_remove(checkpoint, image, mask, RemovalConfig('dip', steps=10, ss_cutoff=6))
    with pytest.raises(DimensionError):
        sip_remove(checkpoint, sample_image(size=16), RemovalMask(torch.zeros(16, 16)), config)
    with pytest.raises(DegenerateMaskError):
        sip_remove(checkpoint, image, RemovalMask(torch.ones(8, 8)), config)


def test_dip_remove():
    """tests to ensure the behaviour of dip_remove"""
    checkpoint = micro_checkpoint()
    image = sample_image()
    mask = block_mask()
    config = RemovalConfig('dip', steps=10, ss_cutoff=8)

    result, _ = dip_remove(checkpoint, image, RemovalMask(torch.zeros(8, 8)), config)
    assert torch.max(torch.abs(result - image)) <= 1.e-5

    first, _ = dip_remove(checkpoint, image, mask, config)
    second, _ = dip_remove(checkpoint, image, mask, config)
    assert torch.equal(first, second)
    outside = mask.base == 0
    assert torch.max(torch.abs(first[:, outside] - image[:, outside])) <= 1.e-5


def test_invert_roundtrip():
    """inversion round trip is exact when the noise prediction does not depend on the input"""
    checkpoint = micro_checkpoint()
    with torch.no_grad():
        checkpoint.model.out_conv.weight.zero_()
        checkpoint.model.out_conv.bias.fill_(0.1)
    image = sample_image()
    result, error = invert_roundtrip(checkpoint, image, 10)
    assert error <= 1.e-5
    assert torch.max(torch.abs(result - image)) <= 1.e-5


def test_invert_roundtrip_image_size():
    """inversion round trip at image size with a near-zero output layer whose noise prediction depends on the input"""
    config = DenoiserConfig(image_size=64, channels=3, base_width=8, channel_mults=(1, 2, 2),
                            attention_resolutions=(16,))
    checkpoint = Checkpoint(Denoiser(config), NoiseSchedule(1000, n_inference_steps=50))
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(4)
        nn.init.xavier_uniform_(checkpoint.model.out_conv.weight, gain=1.e-5)
        nn.init.zeros_(checkpoint.model.out_conv.bias)

    first = predict(checkpoint.model, gaussian(make_rng(1), (1, 3, 64, 64)), 500)[0]
    second = predict(checkpoint.model, gaussian(make_rng(2), (1, 3, 64, 64)), 500)[0]
    assert float((first - second).abs().max()) > 0.

    image = sample_image(size=64)
    result, error = invert_roundtrip(checkpoint, image, 50)
    assert result.shape == image.shape
    assert error <= 1.e-2
    assert torch.max(torch.abs(result - image)) <= 1.e-2
