#!/usr/bin/env python

"""Property checks of the numerical core of `attneraser` over many random instances."""

import math

import numpy as np
import torch

from attneraser import Checkpoint, Denoiser, DenoiserConfig, NoiseSchedule, RemovalConfig, RemovalMask, \
    SelfAttention, TensorArchive, make_rng
from attneraser.Attention import AttentionMode, AttentionRecord, aas_attention, ss_attention
from attneraser.Denoiser import predict
from attneraser.Guidance import sarg_epsilon
from attneraser.Pipeline import dip_remove, sip_remove
from attneraser.Trainer import train
from attneraser.numerics import gaussian, inertia, kmeans, masked_row_softmax, matmul, pca_top, svd_top1

# instances per token count of the attention property suite (10000 in total)
SUITE = {4: 6000, 16: 3000, 64: 900, 256: 100}


def random_instances(n_tokens, n_instances, seed):
    rng = make_rng(seed, n_tokens)
    similarity = gaussian(rng, (n_instances, n_tokens, n_tokens), torch.float64)
    columns = torch.from_numpy(rng.random((n_instances, 1, n_tokens)) < 0.3)
    # every instance keeps one background and one object column
    columns[:, :, 0] = False
    columns[:, :, 1] = True
    return similarity, columns


def test_matmul_identity():
    """I X == X == X I elementwise"""
    x = gaussian(make_rng(1), (5, 3), torch.float64)
    assert torch.equal(matmul(torch.eye(5, dtype=torch.float64), x), x)
    assert torch.equal(matmul(x, torch.eye(3, dtype=torch.float64)), x)


def test_masked_row_softmax_values():
    """tests to ensure the behaviour of masked_row_softmax on small rows"""
    assert torch.equal(masked_row_softmax(torch.zeros(1, 2, dtype=torch.float64)),
                       torch.tensor([[0.5, 0.5]], dtype=torch.float64))
    for a, b in [(0., 0.), (-3., 7.), (50., -50.)]:
        row = torch.tensor([[a, b]], dtype=torch.float64)
        assert torch.equal(masked_row_softmax(row, torch.tensor([[True, False]])),
                           torch.tensor([[0., 1.]], dtype=torch.float64))
    row = torch.tensor([[1., 2., 3.]], dtype=torch.float64)
    a = masked_row_softmax(row, torch.tensor([[False, True, False]]))
    expected = 1. / (1. + math.exp(2.))
    assert np.abs(float(a[0, 0]) - expected) < 1.e-12
    assert float(a[0, 1]) == 0.
    assert np.abs(float(a[0, 2]) - (1. - expected)) < 1.e-12


def test_masked_row_softmax_row_shift():
    """adding a constant to the unmasked logits of a row leaves the row unchanged"""
    s, columns = random_instances(16, 200, 1)
    shift = gaussian(make_rng(2), (200, 16, 1), torch.float64) * 10.
    a = masked_row_softmax(s, columns)
    b = masked_row_softmax(s + shift, columns)
    assert torch.max(torch.abs(a - b)) < 1.e-12


def test_pca_top_oracle():
    """pca_top agrees with the eigenvectors of the covariance matrix"""
    x = gaussian(make_rng(3), (10, 4), torch.float64)
    data = x.numpy()
    centred = data - data.mean(axis=0, keepdims=True)
    values, vectors = np.linalg.eigh(centred.T @ centred)
    order = np.argsort(values)[::-1]
    projected = pca_top(x, 4).numpy()
    for i, index in enumerate(order):
        oracle = centred @ vectors[:, index]
        # directions are defined up to sign
        assert min(np.abs(projected[:, i] - oracle).max(), np.abs(projected[:, i] + oracle).max()) < 1.e-6

    captured = [float((pca_top(x, k) ** 2).sum()) for k in range(1, 5)]
    assert all(later >= earlier - 1.e-12 for earlier, later in zip(captured, captured[1:]))
    assert np.abs(captured[-1] - float((centred ** 2).sum())) < 1.e-9

    identical = torch.ones(6, 3, dtype=torch.float64)
    assert torch.equal(pca_top(identical, 2), torch.zeros(6, 2, dtype=torch.float64))


def test_svd_top1_oracle():
    """residual of the rank one approximation matches a power iteration"""
    m = gaussian(make_rng(4), (8, 8), torch.float64)
    u, sigma, v = svd_top1(m)
    residual = float(torch.linalg.norm(m - sigma * torch.outer(u, v)))

    data = m.numpy()
    vector = np.ones(8) / math.sqrt(8.)
    for _ in range(2000):
        vector = data.T @ (data @ vector)
        vector /= np.linalg.norm(vector)
    sigma_oracle = np.linalg.norm(data @ vector)
    residual_oracle = np.linalg.norm(data - np.outer(data @ vector, vector))
    assert np.abs(sigma - sigma_oracle) < 1.e-6
    assert np.abs(residual - residual_oracle) < 1.e-6

    _, sigma, _ = svd_top1(torch.zeros(3, 4, dtype=torch.float64))
    assert sigma == 0.


def test_kmeans_degenerate_cases():
    """k = n gives singletons, identical points give zero inertia"""
    points = gaussian(make_rng(5), (6, 2), torch.float64)
    labels = kmeans(points, 6, make_rng(6))
    assert len(set(labels.tolist())) == 6
    assert inertia(points, labels) == 0.

    same = torch.ones(5, 3, dtype=torch.float64)
    labels = kmeans(same, 2, make_rng(7))
    assert labels.shape == (5,)
    assert inertia(same, labels) == 0.


def test_schedule_closed_forms():
    """alpha_bar and the forward and reverse steps against their scalar formulas"""
    b = 0.01
    assert np.abs(float(NoiseSchedule(1, b, b, 1).alpha_bar[0]) - (1. - b)) < 1.e-15
    b1, b2 = 0.01, 0.03
    two = NoiseSchedule(2, b1, b2, 1)
    assert np.abs(float(two.alpha_bar[0]) - (1. - b1)) < 1.e-15
    assert np.abs(float(two.alpha_bar[1]) - (1. - b1) * (1. - b2)) < 1.e-15
    constant = NoiseSchedule(10, 0.05, 0.05, 2)
    for t in range(1, 11):
        assert np.abs(constant.get_alpha_bar(t) - 0.95 ** t) < 1.e-12

    for beta_start, beta_end in [(1.e-4, 0.02), (0.001, 0.001), (0.1, 0.5)]:
        schedule = NoiseSchedule(200, beta_start, beta_end, 20)
        assert bool(torch.all(schedule.alpha_bar[1:] < schedule.alpha_bar[:-1]))
        assert bool(torch.all(schedule.alpha_bar > 0.)) and bool(torch.all(schedule.alpha_bar <= 1.))
        steps = schedule.inference_steps
        assert all(a > b for a, b in zip(steps, steps[1:]))
        assert steps[-1] >= 1 and steps[0] <= 200

    schedule = NoiseSchedule(1000)
    x0 = gaussian(make_rng(8), (1, 3, 4, 4), torch.float64)
    eps = gaussian(make_rng(9), (1, 3, 4, 4), torch.float64)
    assert torch.max(torch.abs(schedule.add_noise(x0, 300, torch.zeros_like(x0)) -
                               math.sqrt(schedule.get_alpha_bar(300)) * x0)) < 1.e-12
    assert torch.max(torch.abs(NoiseSchedule(1000, 1.e-8, 1.e-8).add_noise(x0, 1, eps) - x0)) < 1.e-3
    a = schedule.get_alpha_bar(640)
    oracle = math.sqrt(a) * float(x0[0, 1, 2, 3]) + math.sqrt(1. - a) * float(eps[0, 1, 2, 3])
    assert np.abs(float(schedule.add_noise(x0, 640, eps)[0, 1, 2, 3]) - oracle) < 1.e-6

    z = gaussian(make_rng(10), (1, 3, 4, 4), torch.float64)
    a_t, a_prev = schedule.get_alpha_bar(500), schedule.get_alpha_bar(480)
    assert torch.max(torch.abs(schedule.ddim_step(z, torch.zeros_like(z), 500, 480) -
                               math.sqrt(a_prev / a_t) * z)) < 1.e-12
    oracle = (math.sqrt(a_prev) * (float(z[0, 0, 1, 1]) - math.sqrt(1. - a_t) * float(eps[0, 0, 1, 1])) /
              math.sqrt(a_t) + math.sqrt(1. - a_prev) * float(eps[0, 0, 1, 1]))
    assert np.abs(float(schedule.ddim_step(z, eps, 500, 480)[0, 0, 1, 1]) - oracle) < 1.e-6


def test_schedule_reconstruction_identity():
    """ddim_step(add_noise(x0, t, eps), eps, t, t_prev) == add_noise(x0, t_prev, eps)"""
    schedule = NoiseSchedule(1000)
    rng = make_rng(11)
    for _ in range(1000):
        t = int(rng.integers(1, 1001))
        t_prev = int(rng.integers(0, t))
        x0 = gaussian(rng, (1, 3, 4, 4), torch.float64)
        eps = gaussian(rng, (1, 3, 4, 4), torch.float64)
        stepped = schedule.ddim_step(schedule.add_noise(x0, t, eps), eps, t, t_prev)
        assert torch.max(torch.abs(stepped - schedule.add_noise(x0, t_prev, eps))) < 1.e-6


def test_ddim_inversion_properties():
    """closed forms of the inversion and shrinking round trip error with more steps"""
    x0 = gaussian(make_rng(12), (1, 3, 8, 8), torch.float64)
    schedule = NoiseSchedule(1000, n_inference_steps=10)
    trajectory = schedule.ddim_invert(x0, lambda x, t: torch.zeros_like(x))
    for k in range(1, 11):
        expected = math.sqrt(schedule.get_alpha_bar(schedule.timestep(k))) * x0
        assert torch.max(torch.abs(trajectory[k - 1] - expected)) < 1.e-10

    single = NoiseSchedule(1000, n_inference_steps=1)
    c = 0.7
    x_t = single.ddim_invert(x0, lambda x, t: torch.full_like(x, c))[0]
    a = single.get_alpha_bar(1000)
    assert torch.max(torch.abs(x_t - (math.sqrt(a) * x0 + math.sqrt(1. - a) * c))) < 1.e-10

    def eps_fn(x, t):
        return 0.2 * x

    errors = []
    for n_steps in [10, 25, 50]:
        schedule = NoiseSchedule(1000, n_inference_steps=n_steps)
        z = schedule.ddim_invert(x0, eps_fn)[-1]
        for k, t, t_prev in schedule.step_pairs():
            z = schedule.ddim_step(z, eps_fn(z, t), t, t_prev)
        errors.append(float(torch.max(torch.abs(z - x0))))
    assert errors[0] > errors[1] > errors[2]


def test_attention_column_kill_and_activation():
    """masked columns get no weight, the rest of each row renormalizes and can only grow"""
    for n_tokens, n_instances in SUITE.items():
        s, columns = random_instances(n_tokens, n_instances, 13)
        standard = masked_row_softmax(s)
        aas = masked_row_softmax(s, columns)
        obj = columns.expand_as(s)
        assert bool((aas[obj] == 0.).all())
        assert torch.max(torch.abs(aas.sum(dim=-1) - 1.)) < 1.e-6
        assert torch.max(torch.abs(torch.where(obj, 0., aas).sum(dim=-1) - 1.)) < 1.e-6
        assert bool((aas[~obj] >= standard[~obj] * (1. - 1.e-12)).all())


def test_attention_variance_suppression():
    """object rows flatten as the suppression factor decreases"""
    for n_tokens, n_instances in SUITE.items():
        s, columns = random_instances(n_tokens, n_instances, 14)
        background = ~columns.expand_as(s)
        counts = background.sum(dim=-1).to(torch.float64)
        means = []
        for suppression in [1., 0.7, 0.3, 0.]:
            a = masked_row_softmax(suppression * s, columns)
            centred = torch.where(background, a - 1. / counts[..., None], torch.zeros_like(a))
            variance = (centred ** 2).sum(dim=-1) / counts
            obj_rows = columns.reshape(n_instances, n_tokens)
            means.append(float(variance[obj_rows].mean()))
            if suppression == 0.:
                assert float(variance[obj_rows].abs().max()) < 1.e-30
        assert all(later <= earlier for earlier, later in zip(means, means[1:]))


def test_ss_without_suppression_is_aas():
    """ss with factor 1 reproduces the aas output of every instance and the recorded aas attention"""
    torch.manual_seed(0)
    layer = SelfAttention(8, n_heads=2, layer_id='decoder').double()
    rng = make_rng(21)
    for n_tokens, n_instances in SUITE.items():
        for _ in range(n_instances // 100):
            tokens = gaussian(rng, (100, n_tokens, 8), torch.float64)
            mask = torch.from_numpy(rng.random((1, n_tokens)) < 0.3).to(torch.float64)
            mask[0, 0] = 0.
            mask[0, 1] = 1.
            aas, rec_aas = aas_attention(layer, tokens, mask)
            ss, rec_obj, rec_bg = ss_attention(layer, tokens, mask, 1.)
            assert torch.max(torch.abs(ss - aas)) <= 1.e-7
            for rec in [rec_obj, rec_bg]:
                assert torch.max(torch.abs(rec.attention - rec_aas.attention)) <= 1.e-7


def test_attention_record_archive():
    """records go through the tensor archive bit-exactly"""
    torch.manual_seed(0)
    layer = SelfAttention(8, n_heads=2, layer_id='decoder.4')
    tokens = gaussian(make_rng(15), (16, 8))
    mask = torch.zeros(1, 16)
    mask[0, 5:9] = 1.
    _, rec = aas_attention(layer, tokens, mask)
    rec.timestep = 400
    archive = TensorArchive(metadata={'kind': 'trace'})
    rec.to_archive(archive, 'record/0')
    restored = AttentionRecord.from_archive(TensorArchive.from_bytes(archive.to_bytes()), 'record/0')
    assert (restored.layer_id, restored.timestep, restored.mode) == ('decoder.4', 400, 'aas')
    for name in ['similarity', 'attention', 'output']:
        assert torch.equal(getattr(restored, name), getattr(rec, name))
    assert bool((rec.attention[:, 5:9] == 0.).all())
    assert torch.max(torch.abs(rec.attention.sum(dim=-1) - 1.)) < 1.e-6


def micro_checkpoint():
    config = DenoiserConfig(image_size=8, channels=3, base_width=8, channel_mults=(1, 2),
                            attention_resolutions=(8, 4), seed=2)
    return Checkpoint(Denoiser(config), NoiseSchedule(100, n_inference_steps=10))


def block_mask():
    base = torch.zeros(8, 8)
    base[1:4, 4:7] = 1.
    return RemovalMask(base)


def test_sarg_affine():
    """sarg_epsilon(s) == eps_plain + s (eps_aas - eps_plain)"""
    plain = gaussian(make_rng(16), (2, 3, 4, 4), torch.float64)
    aas = gaussian(make_rng(17), (2, 3, 4, 4), torch.float64)
    for s in [0., 0.5, 1., 9.]:
        assert torch.max(torch.abs(sarg_epsilon(plain, aas, s) - (plain + s * (aas - plain)))) < 1.e-12


def test_mode_locality():
    """the attention mode reaches the output only through the decoder attention layers"""
    model = micro_checkpoint().model
    z = gaussian(make_rng(18), (1, 3, 8, 8))
    mask = block_mask()
    standard, _ = predict(model, z, 30)
    aas, _ = predict(model, z, 30, AttentionMode.aas(), mask)
    assert not torch.equal(standard, aas)

    with torch.no_grad():
        for layer in model.attention_layers():
            if layer.placement == 'decoder':
                layer.to_out.weight.zero_()
                layer.to_out.bias.zero_()
    standard, _ = predict(model, z, 30)
    for mode in [AttentionMode.aas(), AttentionMode.aas_ss(0.3)]:
        assert torch.equal(predict(model, z, 30, mode, mask)[0], standard)


def test_training_determinism():
    """equal seeds give identical weights after training"""
    config = DenoiserConfig(image_size=8, channels=1, base_width=4, channel_mults=(1, 2),
                            attention_resolutions=(8, 4), seed=5)
    data = gaussian(make_rng(19), (6, 1, 8, 8))
    states = [train(config, data, NoiseSchedule(100), make_rng(20), 2, 1.e-3, batch_size=4).state_dict()
              for _ in range(2)]
    for key in states[0]:
        assert torch.equal(states[0][key], states[1][key])


def test_background_preservation():
    """outside the mask both pipelines return the input for every guidance scale"""
    checkpoint = micro_checkpoint()
    image = torch.from_numpy(make_rng(21).uniform(-1., 1., (3, 8, 8))).to(torch.float32)
    mask = block_mask()
    outside = mask.latent(8, 8)[0, 0] == 0
    for pipeline, remove in [('sip', sip_remove), ('dip', dip_remove)]:
        for scale in [0., 3., 9.]:
            config = RemovalConfig(pipeline, steps=6, ss_cutoff=4, scale=scale)
            result, _ = remove(checkpoint, image, mask, config)
            assert torch.max(torch.abs(result[:, outside] - image[:, outside])) <= 1.e-5


def test_sip_seed_and_stream():
    """the noise seed and stream only change the masked content"""
    checkpoint = micro_checkpoint()
    image = torch.from_numpy(make_rng(22).uniform(-1., 1., (3, 8, 8))).to(torch.float32)
    mask = block_mask()
    inside = mask.base == 1
    config = RemovalConfig('sip', steps=6, ss_cutoff=4)

    first, _ = sip_remove(checkpoint, image, mask, config)
    assert torch.equal(first, sip_remove(checkpoint, image, mask, config)[0])
    for other, _ in [sip_remove(checkpoint, image, mask, config.copy(seed=7)),
                     sip_remove(checkpoint, image, mask, config, stream=1)]:
        assert torch.equal(other[:, ~inside], first[:, ~inside])
        assert not torch.equal(other[:, inside], first[:, inside])
