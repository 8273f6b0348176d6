# -*- coding: utf-8 -*-
"""
Checkpoint: a trained denoiser with its noise schedule and codec, stored as a
tensor archive. Weights are named 'weights/<parameter name>'; the denoiser
layout, the schedule and the codec are kept in the metadata block.

@author: attneraser developers
"""
import logging

from attneraser.Archive import TensorArchive
from attneraser.Codec import IdentityCodec, codec_from_archive
from attneraser.Denoiser import Denoiser, DenoiserConfig
from attneraser.NoiseSchedule import NoiseSchedule
from attneraser.errors import ArchiveError

logger = logging.getLogger(__name__)

KIND = 'checkpoint'


class Checkpoint:
    """
    Trained model bundle:
        - model: Denoiser
        - schedule: NoiseSchedule used in training
        - codec: Codec whose latent space the model was trained in
    """

    def __init__(self, model, schedule, codec=None):
        self.model = model
        self.schedule = schedule
        self.codec = IdentityCodec() if codec is None else codec

    @property
    def config(self):
        return self.model.config

    def to_archive(self):
        archive = TensorArchive(metadata={'kind': KIND})
        for key, value in self.config.to_metadata().items():
            archive.set_meta(key, value)
        for key, value in self.schedule.to_metadata().items():
            archive.set_meta(key, value)
        self.codec.to_archive(archive)
        for name, value in self.model.state_dict().items():
            archive.add('weights/' + name, value)
        return archive

    def save_file(self, filename):
        """Save to a tensor archive; returns the path written"""
        path = self.to_archive().save_file(filename)
        logger.info('checkpoint saved: %s (%d parameters)', path, self.model.n_parameters())
        return path

    @classmethod
    def from_archive(cls, archive):
        if archive.metadata.get('kind') != KIND:
            raise ArchiveError('Error in Checkpoint: archive is not a checkpoint')
        config = DenoiserConfig.from_metadata(archive.metadata)
        schedule = NoiseSchedule.from_metadata(archive.metadata)
        model = Denoiser(config)
        state = {name[len('weights/'):]: archive[name] for name in archive.tensors
                 if name.startswith('weights/')}
        try:
            model.load_state_dict(state)
        except RuntimeError as error:
            raise ArchiveError('Error in Checkpoint: weights do not match the stored layout: ' + str(error))
        model.eval()
        return cls(model, schedule, codec_from_archive(archive))

    @classmethod
    def open_file(cls, filepath):
        """Restore a checkpoint written by save_file"""
        return cls.from_archive(TensorArchive.open_file(filepath))


def save_checkpoint(model, schedule, config, path, codec=None):
    if config is not model.config and config != model.config:
        raise ValueError('Error in save_checkpoint: config does not describe the model')
    return Checkpoint(model, schedule, codec).save_file(path)


def load_checkpoint(path):
    """Returns (model, schedule, config)"""
    checkpoint = Checkpoint.open_file(path)
    return checkpoint.model, checkpoint.schedule, checkpoint.config
