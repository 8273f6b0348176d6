# -*- coding: utf-8 -*-
"""
Command line interface:

    attneraser gen-data   synthetic corpus
    attneraser train      train a denoiser checkpoint on a corpus
    attneraser remove     remove the masked object from one image (sip or dip)
    attneraser invert     DDIM inversion round trip of one image
    attneraser analyze    heatmap and cluster figures of a removal trace
    attneraser eval       removal report of one or more configs over a corpus

Every option can also be given in a flat key=value file passed with --config
(keys are the long option names, '-' or '_'); options on the command line
override the file. Each run writes run_manifest.txt next to its outputs with
the effective settings.

Exit codes: 0 success, 2 usage error, 3 invalid input or settings,
4 runtime failure (I/O, training divergence).

@author: attneraser developers
"""
import argparse
import logging
import os
import sys
import time
from pathlib import Path

import torch

from attneraser.Checkpoint import Checkpoint
from attneraser.Codec import AutoencoderCodec, make_codec
from attneraser.Corpus import gen_corpus, read_corpus, stack_images, write_corpus
from attneraser.Denoiser import Denoiser, DenoiserConfig
from attneraser.NoiseSchedule import NoiseSchedule
from attneraser.Pipeline import RemovalTrace, invert_roundtrip, remove
from attneraser.RemovalConfig import RemovalConfig
from attneraser.RemovalMask import RemovalMask
from attneraser.Scene import SceneSpec
from attneraser.Trainer import Trainer
from attneraser.analysis.AttentionMaps import export_trace_figures
from attneraser.analysis.Evaluator import removal_report, ss_efficacy_probe
from attneraser.numerics import make_rng
from attneraser.tools.imageio import read_image, read_mask, write_image
from attneraser.tools.manifest import write_manifest
from attneraser.tools.table import parameter_table

logger = logging.getLogger('attneraser')

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_RUNTIME = 4

REMOVAL_KEYS = ['pipeline', 'steps', 'ss_cutoff', 'scale', 'suppression', 'seed', 'codec', 'guidance']


class UsageError(Exception):
    """Missing or conflicting options"""


def _removal_options(parser):
    parser.add_argument('--pipeline', choices=['sip', 'dip'], help='removal pipeline (default sip)')
    parser.add_argument('--steps', type=int, help='inference steps T_I (sip 40, dip 50)')
    parser.add_argument('--ss-cutoff', type=int, dest='ss_cutoff', help='similarity suppression cutoff T_SS')
    parser.add_argument('--s', '--scale', type=float, dest='scale', help='removal guidance scale (9)')
    parser.add_argument('--lambda', '--suppression', type=float, dest='suppression',
                        help='suppression factor (0.3)')
    parser.add_argument('--seed', type=int, help='noise seed (123)')
    parser.add_argument('--guidance', choices=['sarg', 'aas-only'], help='guidance rule (sarg)')


def build_parser():
    parser = argparse.ArgumentParser(prog='attneraser',
                                     description='Object removal by self-attention redirection guidance')
    parser.add_argument('--verbose', action='store_true', help='debug logging')
    sub = parser.add_subparsers(dest='command')

    gen = sub.add_parser('gen-data', help='generate a synthetic corpus')
    gen.add_argument('--config', help='key=value option file')
    gen.add_argument('-o', '--out', help='corpus directory')
    gen.add_argument('--n', type=int, help='number of scenes (100)')
    gen.add_argument('--seed', type=int, help='seed of the first scene (0)')
    gen.add_argument('--size', type=int, help='image side (64)')
    gen.add_argument('--channels', type=int, help='1 or 3 (3)')
    gen.add_argument('--kinds', help='comma separated shape kinds')
    gen.add_argument('--families', help='comma separated background families')
    gen.add_argument('--twin', action='store_const', const='true', help='add a twin of the shape to the background')
    gen.add_argument('--jobs', type=int)

    train = sub.add_parser('train', help='train a denoiser')
    train.add_argument('--config', help='key=value option file')
    train.add_argument('--data', help='corpus directory')
    train.add_argument('-o', '--out', help='checkpoint file')
    train.add_argument('--epochs', type=int, help='passes over the data (20)')
    train.add_argument('--lr', type=float, help='learning rate (2e-4)')
    train.add_argument('--batch-size', type=int, dest='batch_size', help='(32)')
    train.add_argument('--seed', type=int, help='seed of weights, batches and noise (0)')
    train.add_argument('--base-width', type=int, dest='base_width', help='(32)')
    train.add_argument('--heads', type=int, help='attention heads (1)')
    train.add_argument('--aas-placements', dest='aas_placements', help='comma separated (decoder)')
    train.add_argument('--train-steps', type=int, dest='train_steps', help='diffusion steps T (1000)')
    train.add_argument('--codec', choices=['identity', 'autoencoder'])
    train.add_argument('--limit', type=int, help='use the first n scenes only')

    rem = sub.add_parser('remove', help='remove the masked object from an image')
    rem.add_argument('--config', help='key=value option file')
    rem.add_argument('--image', help='input PNG')
    rem.add_argument('--mask', help='mask PNG, values > 127 are the object')
    rem.add_argument('--ckpt', help='checkpoint file')
    rem.add_argument('-o', '--out', help='output directory')
    rem.add_argument('--trace', action='store_const', const='true', help='also write trace.atte')
    _removal_options(rem)

    inv = sub.add_parser('invert', help='DDIM inversion round trip')
    inv.add_argument('--config', help='key=value option file')
    inv.add_argument('--image', help='input PNG')
    inv.add_argument('--ckpt', help='checkpoint file')
    inv.add_argument('-o', '--out', help='output directory')
    inv.add_argument('--steps', type=int, help='inference steps (50)')

    ana = sub.add_parser('analyze', help='figures of a removal trace')
    ana.add_argument('--config', help='key=value option file')
    ana.add_argument('--trace', help='trace archive written by remove --trace')
    ana.add_argument('-o', '--out', help='figure directory')
    ana.add_argument('--run', help='run name (trace file stem)')
    ana.add_argument('--k', type=int, help='clusters (5)')
    ana.add_argument('--seed', type=int, help='k-means seed (0)')

    ev = sub.add_parser('eval', help='removal report over a corpus')
    ev.add_argument('--config', help='key=value option file')
    ev.add_argument('--data', help='corpus directory')
    ev.add_argument('--ckpt', help='checkpoint file')
    ev.add_argument('-o', '--out', help='report directory')
    ev.add_argument('--sweep', action='append', help='key=v1,v2,... one row per value (repeatable)')
    ev.add_argument('--baseline', action='store_const', const='true', help='add an s=0 row')
    ev.add_argument('--limit', type=int, help='use the first n scenes only')
    ev.add_argument('--ss-probe', action='store_const', const='true', dest='ss_probe',
                    help='twin attention mass at lambda vs 1 (twin corpora)')
    ev.add_argument('--jobs', type=int)
    _removal_options(ev)
    return parser


def _options(args, keys):
    """File values overridden by the flags that were given"""
    values = {}
    if getattr(args, 'config', None) is not None:
        values.update(RemovalConfig.read_values(args.config))
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            values[key] = value
    return values


def _require(values, keys, command):
    missing = [key for key in keys if key not in values]
    if len(missing) > 0:
        raise UsageError(command + ': missing ' + ', '.join('--' + key.replace('_', '-') for key in missing))


def _flag(values, key):
    return str(values.get(key, 'false')).lower() in ['true', 'yes', '1', 'on']


def _log_level(args):
    """DEBUG if --verbose is given or the option file sets verbose=true"""
    verbose = args.verbose
    if not verbose and getattr(args, 'config', None) is not None:
        try:
            verbose = _flag(RemovalConfig.read_values(args.config), 'verbose')
        except (OSError, ValueError):
            # reported by the command itself
            verbose = False
    return logging.DEBUG if verbose else logging.INFO


def _removal_config(values, codec_kind=None):
    removal = {key: values[key] for key in REMOVAL_KEYS if key in values}
    if codec_kind is not None:
        removal.setdefault('codec', codec_kind)
    config = RemovalConfig(removal.pop('pipeline', 'sip'))
    if 'steps' in removal and 'ss_cutoff' not in removal:
        # keep the default distance between T_I and T_SS
        removal['ss_cutoff'] = max(1, int(removal['steps']) - (config.steps - config.ss_cutoff))
    return config.update(removal)


def cmd_gen_data(args):
    values = _options(args, ['out', 'n', 'seed', 'size', 'channels', 'kinds', 'families', 'twin', 'jobs'])
    _require(values, ['out'], 'gen-data')
    spec = SceneSpec(image_size=int(values.get('size', 64)), channels=int(values.get('channels', 3)),
                     twin=_flag(values, 'twin'))
    if 'kinds' in values:
        spec.kinds = tuple(item.strip() for item in str(values['kinds']).split(','))
    if 'families' in values:
        spec.families = tuple(item.strip() for item in str(values['families']).split(','))
    spec.validate()
    n_scenes = int(values.get('n', 100))
    seed = int(values.get('seed', 0))
    scenes = gen_corpus(n_scenes, seed, spec, int(values.get('jobs', os.cpu_count() or 1)))
    path = write_corpus(scenes, values['out'], spec)
    manifest = {'command': 'gen-data', 'scenes': n_scenes, 'seed': seed}
    manifest.update(spec.to_metadata())
    write_manifest(path, manifest)
    print('wrote ' + str(n_scenes) + ' scenes to ' + str(path))


def cmd_train(args):
    values = _options(args, ['data', 'out', 'epochs', 'lr', 'batch_size', 'seed', 'base_width', 'heads',
                             'aas_placements', 'train_steps', 'codec', 'limit'])
    _require(values, ['data', 'out'], 'train')
    scenes = read_corpus(values['data'])
    if 'limit' in values:
        scenes = scenes[:int(values['limit'])]
    images = torch.cat([stack_images(scenes), stack_images(scenes, target=True)])
    seed = int(values.get('seed', 0))
    rng = make_rng(seed)

    codec = make_codec(values.get('codec', 'identity'), images.shape[1], seed)
    if isinstance(codec, AutoencoderCodec):
        codec.fit(images, rng, progress=True)
    latents = codec.encode(images)

    placements = tuple(item.strip() for item in str(values.get('aas_placements', 'decoder')).split(','))
    config = DenoiserConfig(image_size=latents.shape[2], channels=latents.shape[1],
                            base_width=int(values.get('base_width', 32)), n_heads=int(values.get('heads', 1)),
                            aas_placements=placements, seed=seed)
    schedule = NoiseSchedule(int(values.get('train_steps', 1000)))
    model = Denoiser(config)
    logger.info('training %d parameters on %d images', model.n_parameters(), latents.shape[0])

    start = time.perf_counter()
    trainer = Trainer(model, schedule, rng, lr=float(values.get('lr', 2.e-4)),
                      batch_size=int(values.get('batch_size', 32)), progress=True)
    losses = trainer.train(latents, int(values.get('epochs', 20)))
    path = Checkpoint(model, schedule, codec).save_file(values['out'])

    manifest = {'command': 'train', 'data': str(Path(values['data']).resolve()), 'scenes': len(scenes),
                'epochs': values.get('epochs', 20), 'lr': values.get('lr', 2.e-4),
                'batch_size': values.get('batch_size', 32), 'seed': seed, 'steps': len(losses),
                'final_loss': losses[-1] if len(losses) > 0 else 'none',
                'seconds': '{:.1f}'.format(time.perf_counter() - start), 'codec': codec.kind}
    manifest.update(config.to_metadata())
    manifest.update(schedule.to_metadata())
    write_manifest(path.parent, manifest, path.stem + '_manifest.txt')
    print('wrote checkpoint ' + str(path))


def cmd_remove(args):
    values = _options(args, REMOVAL_KEYS + ['image', 'mask', 'ckpt', 'out', 'trace'])
    _require(values, ['image', 'mask', 'ckpt', 'out'], 'remove')
    checkpoint = Checkpoint.open_file(values['ckpt'])
    config = _removal_config(values, checkpoint.codec.kind)
    image = read_image(values['image'], checkpoint.config.channels)
    mask = RemovalMask(read_mask(values['mask']).to(torch.float32))

    start = time.perf_counter()
    result, trace = remove(checkpoint, image, mask, config, trace=_flag(values, 'trace'))
    out = Path(values['out']).resolve()
    out.mkdir(parents=True, exist_ok=True)
    write_image(result, out / 'result.png')
    manifest = {'command': 'remove', 'image': str(Path(values['image']).resolve()),
                'mask': str(Path(values['mask']).resolve()), 'ckpt': str(Path(values['ckpt']).resolve()),
                'seconds': '{:.2f}'.format(time.perf_counter() - start)}
    manifest.update({'config.' + key: value for key, value in config.as_dict().items()})
    if trace is not None:
        manifest['trace'] = str(trace.save_file(out / 'trace'))
    write_manifest(out, manifest)
    print(parameter_table(config))
    print('wrote ' + str(out / 'result.png'))


def cmd_invert(args):
    values = _options(args, ['image', 'ckpt', 'out', 'steps'])
    _require(values, ['image', 'ckpt', 'out'], 'invert')
    checkpoint = Checkpoint.open_file(values['ckpt'])
    steps = int(values.get('steps', 50))
    image = read_image(values['image'], checkpoint.config.channels)
    result, error = invert_roundtrip(checkpoint, image, steps)
    out = Path(values['out']).resolve()
    out.mkdir(parents=True, exist_ok=True)
    write_image(result, out / 'reconstruction.png')
    write_manifest(out, {'command': 'invert', 'image': str(Path(values['image']).resolve()),
                         'ckpt': str(Path(values['ckpt']).resolve()), 'steps': steps,
                         'max_abs_error': repr(error)})
    print('inversion round trip over ' + str(steps) + ' steps: max abs error ' + '{:.3e}'.format(error))


def cmd_analyze(args):
    values = _options(args, ['trace', 'out', 'run', 'k', 'seed'])
    _require(values, ['trace', 'out'], 'analyze')
    trace = RemovalTrace.open_file(values['trace'])
    if len(trace.records) == 0:
        raise ValueError('Error in analyze: trace ' + values['trace'] + ' holds no attention records')
    run = values.get('run', Path(values['trace']).stem)
    written = export_trace_figures(trace.records, values['out'], run, int(values.get('k', 5)),
                                   rng=make_rng(int(values.get('seed', 0))))
    write_manifest(Path(values['out']).resolve() / run, {'command': 'analyze', 'trace': values['trace'],
                                                          'figures': len(written), 'k': values.get('k', 5)})
    print('wrote ' + str(len(written)) + ' figures under ' + str(Path(values['out']) / run))


def _sweep_configs(base, sweeps, baseline):
    configs = [base]
    for sweep in sweeps:
        key, _, listed = sweep.partition('=')
        if listed == '':
            raise UsageError('eval: --sweep needs key=v1,v2,...')
        configs = [config.copy(**{key.strip(): value.strip()}) for config in configs
                   for value in listed.split(',')]
    if baseline and all(config.scale != 0. for config in configs):
        configs.insert(0, base.copy(scale=0.))
    return configs


def cmd_eval(args):
    values = _options(args, REMOVAL_KEYS + ['data', 'ckpt', 'out', 'sweep', 'baseline', 'limit', 'ss_probe',
                                            'jobs'])
    _require(values, ['data', 'ckpt', 'out'], 'eval')
    checkpoint = Checkpoint.open_file(values['ckpt'])
    base = _removal_config(values, checkpoint.codec.kind)
    sweeps = values.get('sweep', [])
    if isinstance(sweeps, str):
        sweeps = [item for item in sweeps.split(';') if item != '']
    configs = _sweep_configs(base, sweeps, _flag(values, 'baseline'))
    scenes = read_corpus(values['data'])
    if 'limit' in values:
        scenes = scenes[:int(values['limit'])]
    jobs = int(values.get('jobs', os.cpu_count() or 1))

    start = time.perf_counter()
    report = removal_report(scenes, checkpoint, configs, jobs=jobs, progress=True)
    text_path, csv_path = report.save(values['out'])
    manifest = {'command': 'eval', 'data': str(Path(values['data']).resolve()),
                'ckpt': str(Path(values['ckpt']).resolve()), 'scenes': len(scenes), 'jobs': jobs,
                'seconds': '{:.1f}'.format(time.perf_counter() - start)}
    for i, config in enumerate(configs):
        manifest.update({'config.' + str(i) + '.' + key: value for key, value in config.as_dict().items()})
    if _flag(values, 'ss_probe'):
        probe = ss_efficacy_probe(scenes, checkpoint, base, low=base.suppression, high=1.)
        manifest.update({'probe.' + key: value for key, value in probe.items()})
    write_manifest(text_path.parent, manifest)
    print(report.text())
    print('wrote ' + str(text_path) + ' and ' + str(csv_path))


COMMANDS = {'gen-data': cmd_gen_data, 'train': cmd_train, 'remove': cmd_remove, 'invert': cmd_invert,
            'analyze': cmd_analyze, 'eval': cmd_eval}


def main(argv=None):
    """Run the command line; returns the exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit:
        return EXIT_OK if exit.code == 0 else EXIT_USAGE
    level = _log_level(args)
    logging.basicConfig(level=level, format='%(asctime)s %(name)s %(levelname)s: %(message)s')
    logging.getLogger('attneraser').setLevel(level)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        COMMANDS[args.command](args)
    except UsageError as error:
        parser.print_usage(sys.stderr)
        print('attneraser ' + str(error), file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, TypeError) as error:
        logger.error('%s', error)
        return EXIT_INVALID
    except (RuntimeError, OSError) as error:
        logger.error('%s', error)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
