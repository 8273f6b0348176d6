from sys import version_info

if version_info.major >= 3:
    from attneraser.numerics import make_rng
    from attneraser.Archive import TensorArchive
    from attneraser.NoiseSchedule import NoiseSchedule
    from attneraser.RemovalMask import RemovalMask
    from attneraser.Attention import AttentionMode, AttentionRecord, SelfAttention
    from attneraser.Denoiser import Denoiser, DenoiserConfig
    from attneraser.Trainer import Trainer
    from attneraser.Checkpoint import Checkpoint
    from attneraser.Parameter import Parameter
    from attneraser.RemovalConfig import RemovalConfig
    from attneraser.Pipeline import RemovalTrace
    from attneraser.Scene import Scene, SceneSpec
else:
    raise NotImplementedError('attneraser requires Python 3 or higher. Please upgrade!')

__version__ = '0.1.0'
