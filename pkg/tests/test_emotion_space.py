import math

import numpy as np
import pytest
import torch

from emodist.emotion_space import (EmotionSpace, InfoClassifier, bce, bce_with_logits,
                                   info_classify, loss_dir, masked_softmax)
from emodist.gradcheck import group_relative_errors


def test_equal_logits_give_uniform_weights():
    a = masked_softmax(torch.zeros(1, 2, 4), torch.ones(1, 4, dtype=torch.bool))
    assert torch.allclose(a, torch.full_like(a, 0.25), atol=0, rtol=0)


def test_saturated_logit():
    logits = torch.zeros(1, 1, 4, dtype=torch.float64)
    logits[0, 0, 2] = 50.0
    a = masked_softmax(logits, torch.ones(1, 4, dtype=torch.bool))
    assert a[0, 0, 2] >= 1 - 1e-20


def test_all_masked_raises():
    mask = torch.tensor([[True, True], [False, False]])
    with pytest.raises(ValueError, match="no valid frames"):
        masked_softmax(torch.zeros(2, 3, 2), mask)


def _space(q=3, width=6, label_queries=True):
    torch.manual_seed(0)
    return EmotionSpace(q, width, d_h=4, proj_dim=5, use_label_queries=label_queries).double()


@pytest.mark.parametrize("label_queries", [True, False])
def test_rows_stochastic_over_valid_frames(label_queries):
    space = _space(label_queries=label_queries)
    frames = torch.randn(4, 7, 6, dtype=torch.float64)
    mask = torch.arange(7)[None, :] < torch.tensor([7, 3, 1, 5])[:, None]
    z, a = space.attend("audio", frames, mask)
    assert z.shape == (4, 3, 4)
    np.testing.assert_allclose(a.sum(-1).detach().numpy(), 1.0, atol=1e-6)
    assert torch.all(a.masked_select(~mask[:, None, :].expand_as(a)) == 0)


def test_masked_frame_perturbation_bitwise():
    space = _space()
    frames = torch.randn(2, 5, 6, dtype=torch.float64)
    mask = torch.tensor([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=torch.bool)
    z1, _ = space.attend("text", frames, mask)
    frames2 = frames.clone()
    frames2[0, 3:] = 1e3
    z2, _ = space.attend("text", frames2, mask)
    assert torch.equal(z1, z2)


def test_info_classifier_zero_weights_is_half():
    clf = InfoClassifier(q=3, d_h=4, hidden=5)
    for p in clf.parameters():
        torch.nn.init.zeros_(p)
    feats = {m: torch.randn(2, 3, 4) for m in ("visual", "audio", "text")}
    assert torch.equal(info_classify(feats, clf), torch.full((2, 3), 0.5))


def test_info_classifier_range_and_sensitivity():
    torch.manual_seed(1)
    clf = InfoClassifier(q=3, d_h=4, hidden=5).double()
    feats = {m: torch.randn(6, 3, 4, dtype=torch.float64) * 20 for m in ("visual", "audio", "text")}
    p = info_classify(feats, clf)
    assert torch.all((p > 0) & (p < 1))
    before = info_classify({m: f / 20 for m, f in feats.items()}, clf)
    with torch.no_grad():
        clf.net[0].weight[0] *= 2
    after = info_classify({m: f / 20 for m, f in feats.items()}, clf)
    assert not torch.equal(before, after)


def test_bce_hand_values():
    y = torch.tensor([[1.0, 0.0, 1.0]], dtype=torch.float64)
    assert loss_dir(y.clone(), y).item() <= 1e-6
    assert loss_dir(torch.full_like(y, 0.5), y).item() == pytest.approx(math.log(2), abs=1e-12)
    val = loss_dir(torch.tensor([[0.8, 0.2]], dtype=torch.float64),
                   torch.tensor([[1.0, 0.0]], dtype=torch.float64))
    assert val.item() == pytest.approx(-(math.log(0.8) + math.log(0.8)) / 2, abs=1e-12)
    assert val.item() == pytest.approx(0.2231435513, abs=1e-6)


def test_bce_logits_agrees_with_probabilities():
    torch.manual_seed(3)
    logits = torch.randn(5, 4, dtype=torch.float64)
    y = (torch.rand(5, 4) > 0.5).double()
    assert bce_with_logits(logits, y).item() == pytest.approx(bce(torch.sigmoid(logits), y).item(),
                                                              abs=1e-10)


def test_bce_rejects_non_binary_labels():
    with pytest.raises(ValueError):
        loss_dir(torch.full((1, 2), 0.5), torch.tensor([[0.5, 1.0]]))


def test_label_embeddings_get_gradient_and_match_fd():
    space = _space()
    clf = InfoClassifier(3, 4, hidden=6).double()
    frames = {m: torch.randn(3, 4, 6, dtype=torch.float64) for m in ("visual", "audio", "text")}
    masks = {m: torch.tensor([[1, 1, 1, 1], [1, 1, 0, 0], [1, 0, 0, 0]], dtype=torch.bool)
             for m in frames}
    y = torch.tensor([[1, 0, 1], [0, 0, 1], [1, 1, 0]], dtype=torch.float64)

    def loss():
        feats, _ = space(frames, masks)
        return bce_with_logits(clf(feats), y)

    loss().backward()
    assert space.labels.grad.abs().sum() > 0
    err = group_relative_errors(loss, {"labels": [("L", space.labels)]})
    assert err["labels"] < 1e-4
