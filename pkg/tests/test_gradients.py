"""Finite-difference checks of the full training objective on a micro model."""
import time

import numpy as np
import pytest
import torch

from emodist.calibration import CorrectnessTracker
from emodist.config import TrainConfig
from emodist.data import SynthConfig, collate, synthesize
from emodist.distribution import ContrastQueue, to_vector
from emodist.losses import compute_losses
from emodist.model import EmotionDistributionNet

from conftest import MICRO

DIMS = {"v": 5, "a": 4, "t": 6}


def _setup(**overrides):
    cfg = TrainConfig.from_flat({**MICRO, "fusion.detach_gate": False, **overrides})
    _, samples = synthesize(SynthConfig(n=5, q=3, dims=DIMS, seed=4,
                                        seq_lens={"v": (2, 4), "a": (2, 5), "t": (1, 3)}))
    samples[0].labels[:] = [1, 1, 0]
    samples[1].labels[:] = [1, 0, 1]
    batch = collate(samples, list(range(5)), cfg.data_max_len, torch.float64)
    torch.manual_seed(0)
    net = EmotionDistributionNet(3, DIMS, cfg).double()
    # queue entries share clusters with the batch so both positives and negatives come from it
    g = torch.Generator().manual_seed(1)
    d = cfg.emotion_space_d_h
    qmu, qsig = torch.randn(12, d // 2, generator=g), torch.rand(12, d // 2, generator=g) + .1
    queue = ContrastQueue(cfg.scl_queue_size, d, torch.float64)
    queue.push(to_vector(qmu, qsig).double(), torch.arange(12) % 9, torch.arange(12) % 2 == 0)
    tracker = CorrectnessTracker(5)
    tracker.count[:] = 4
    tracker.correct[:] = [4, 1, 3, 2, 0]

    def loss_fn():
        out = net(batch.features, batch.masks, labels=batch.labels)
        return compute_losses(out, batch.labels, batch.indices, cfg, queue, tracker).total

    return net, loss_fn


def test_every_group_matches_finite_differences():
    from emodist.gradcheck import group_relative_errors

    net, loss_fn = _setup()
    start = time.perf_counter()
    errors = group_relative_errors(loss_fn, net.parameter_groups(), eps=1e-6)
    elapsed = time.perf_counter() - start
    assert set(errors) == set(net.parameter_groups())
    bad = {k: v for k, v in errors.items() if not v <= 1e-4}
    assert not bad, bad
    assert elapsed < 120


def test_loss_terms_all_active_in_check():
    net, loss_fn = _setup()
    cfg = net.config
    assert cfg.ocl_active and cfg.scl_active and cfg.loss_gamma > 0


def _grads(net, loss_fn):
    net.zero_grad(set_to_none=True)
    loss_fn().backward()
    return {k: sum(float(p.grad.abs().sum()) for _, p in v if p.grad is not None)
            for k, v in net.parameter_groups().items()}


def test_drop_sigma_leaves_sigma_classifier_untouched():
    net, loss_fn = _setup(**{"cls.drop_sigma": True})
    assert _grads(net, loss_fn)["fusion.sigma"] == 0.0


def test_drop_mu_leaves_mu_classifier_untouched():
    net, loss_fn = _setup(**{"cls.drop_mu": True})
    assert _grads(net, loss_fn)["fusion.mu"] == 0.0


def test_detached_gate_cuts_classification_path_to_info_classifier():
    # only L_dir and the D term of the ordinal loss reach the info classifier then
    net, loss_fn = _setup(**{"fusion.detach_gate": True, "loss.gamma": 0.0,
                             "loss.lambda": 0.0})
    assert _grads(net, loss_fn)["info_classifier"] == 0.0
