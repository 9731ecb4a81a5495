import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from emodist.distribution import (ContrastQueue, Decoupler, flatten_distributions, queue_push,
                                  similarity, supcon_loss, to_vector)
from emodist.gradcheck import group_relative_errors

MODS = ("visual", "audio", "text")


def test_sigma_positive_and_shapes():
    torch.manual_seed(0)
    dec = Decoupler(128)
    feats = {m: torch.randn(2, 6, 128) * 50 for m in MODS}
    latent = dec(feats)
    for m in MODS:
        assert latent.mu[m].shape == (2, 6, 64)
        assert latent.sigma[m].shape == (2, 6, 64)
        assert latent.sigma[m].min() > 0
    latent.validate()


def test_sigma_head_is_separate_from_mu():
    torch.manual_seed(0)
    dec = Decoupler(8)
    feats = {m: torch.randn(3, 2, 8) for m in MODS}
    before = dec(feats)
    with torch.no_grad():
        for m in MODS:
            dec.heads[m].sigma.weight.add_(1.0)
    after = dec(feats)
    for m in MODS:
        assert torch.equal(before.mu[m], after.mu[m])
        assert not torch.equal(before.sigma[m], after.sigma[m])


def test_non_finite_input_rejected():
    dec = Decoupler(4)
    feats = {m: torch.zeros(1, 2, 4) for m in MODS}
    feats["audio"][0, 0, 0] = float("nan")
    with pytest.raises(ValueError):
        dec(feats)


def test_to_vector_arithmetic():
    e = to_vector(torch.tensor([3.0, 4.0], dtype=torch.float64),
                  torch.tensor([1.0, 1.0], dtype=torch.float64))
    np.testing.assert_allclose(e.numpy(), [0.6, 0.8, 1 / math.sqrt(2), 1 / math.sqrt(2)],
                               atol=1e-12)


def test_to_vector_scale_invariance():
    mu = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64)
    sigma = torch.tensor([0.5, 0.1, 0.9], dtype=torch.float64)
    assert torch.allclose(to_vector(mu, sigma)[:3], to_vector(10 * mu, sigma)[:3], atol=1e-15)


def test_zero_mu_strict():
    with pytest.raises(ValueError):
        to_vector(torch.zeros(3), torch.ones(3), strict=True)
    assert torch.isfinite(to_vector(torch.zeros(3), torch.ones(3))).all()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 16))
def test_unit_halves_and_similarity_range(seed, half):
    g = torch.Generator().manual_seed(seed)
    mu = torch.randn(5, half, generator=g, dtype=torch.float64) * 10
    sigma = torch.rand(5, half, generator=g, dtype=torch.float64) + 1e-3
    e = to_vector(mu, sigma)
    np.testing.assert_allclose((e * e).sum(-1).numpy(), 2.0, atol=1e-6)
    z = similarity(e, e)
    assert z.max() <= 2 + 1e-9 and z.min() >= -2 - 1e-9


def test_supcon_single_anchor_hand_value():
    # anchor a, positive p with a.p = 2, negative n with a.n = 0
    s = 1 / math.sqrt(2)
    a = torch.tensor([1.0, 0.0, s, s], dtype=torch.float64)
    n = torch.tensor([0.0, 1.0, s, -s], dtype=torch.float64)
    vectors = torch.stack([a, a.clone(), n])
    assert (vectors[0] @ vectors[1]).item() == pytest.approx(2.0)
    assert (vectors[0] @ vectors[2]).item() == pytest.approx(0.0, abs=1e-15)
    # only the first entry is an anchor; p sits in the queue with the same cluster
    loss = supcon_loss(vectors[[0, 2]], torch.tensor([0, 1]), torch.tensor([True, False]),
                       vectors[[1]], torch.tensor([0]), torch.tensor([True]), tau=1.0)
    expected = -math.log(math.exp(2) / (math.exp(2) + math.exp(0)))
    assert loss.item() == pytest.approx(expected, abs=1e-12)
    assert loss.item() == pytest.approx(0.12693, abs=1e-5)


def _brute_supcon(vectors, cluster, positive, qv, qc, qp, tau):
    cand = list(zip(vectors, cluster.tolist(), positive.tolist())) + \
        list(zip(qv, qc.tolist(), qp.tolist()))
    total = 0.0
    for i in range(len(vectors)):
        if not positive[i]:
            continue
        others = [c for k, c in enumerate(cand) if k != i]
        pos = [c for c in others if c[1] == cluster[i].item() and c[2]]
        if not pos:
            continue
        denom = sum(math.exp(float(vectors[i] @ c[0]) / tau) for c in others)
        total += -sum(math.log(math.exp(float(vectors[i] @ p[0]) / tau) / denom)
                      for p in pos) / len(pos)
    return total


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_supcon_matches_brute_force(seed):
    g = torch.Generator().manual_seed(seed)
    n, nq = 9, 5
    vectors = torch.nn.functional.normalize(torch.randn(n, 4, generator=g, dtype=torch.float64), dim=1)
    qv = torch.nn.functional.normalize(torch.randn(nq, 4, generator=g, dtype=torch.float64), dim=1)
    cluster = torch.randint(0, 3, (n,), generator=g)
    qc = torch.randint(0, 3, (nq,), generator=g)
    positive = torch.rand(n, generator=g) > 0.4
    qp = torch.rand(nq, generator=g) > 0.4
    got = supcon_loss(vectors, cluster, positive, qv, qc, qp, tau=0.5).item()
    assert got == pytest.approx(_brute_supcon(vectors, cluster, positive, qv, qc, qp, 0.5),
                                rel=1e-10, abs=1e-12)


def test_supcon_skips_anchor_without_positives():
    v = torch.randn(1, 4, dtype=torch.float64, requires_grad=True)
    loss = supcon_loss(v, torch.tensor([0]), torch.tensor([True]), tau=0.1)
    assert loss.item() == 0.0
    loss.backward()


def test_supcon_terms_nonnegative():
    torch.manual_seed(2)
    v = torch.nn.functional.normalize(torch.randn(20, 6, dtype=torch.float64), dim=1)
    cluster = torch.arange(20) % 2
    for i in range(20):
        positive = torch.zeros(20, dtype=torch.bool)
        positive[i] = True
        positive[(i + 2) % 20] = True
        assert supcon_loss(v, cluster, positive, tau=0.2).item() >= 0


def test_supcon_rejects_bad_tau():
    with pytest.raises(ValueError):
        supcon_loss(torch.randn(2, 2), torch.tensor([0, 0]), torch.tensor([True, True]), tau=0)


def test_supcon_gradient_check_and_queue_gets_none():
    torch.manual_seed(5)
    raw = torch.randn(8, 6, dtype=torch.float64, requires_grad=True)
    qv = torch.nn.functional.normalize(torch.randn(6, 6, dtype=torch.float64), dim=1)
    qv.requires_grad_(True)
    cluster = torch.tensor([0, 1, 0, 1, 2, 2, 0, 1])
    positive = torch.tensor([1, 1, 1, 0, 1, 1, 1, 1], dtype=torch.bool)
    qc, qp = torch.tensor([0, 1, 2, 0, 1, 2]), torch.ones(6, dtype=torch.bool)

    def loss():
        v = torch.nn.functional.normalize(raw, dim=1)
        return supcon_loss(v, cluster, positive, qv, qc, qp, tau=0.3)

    loss().backward()
    assert qv.grad is None or torch.all(qv.grad == 0)
    err = group_relative_errors(loss, {"batch": [("raw", raw)]})
    assert err["batch"] < 1e-4


def test_queue_fifo_and_capacity():
    q = ContrastQueue(3, 2)
    for i in (1, 2, 3, 4):
        queue_push(q, torch.full((1, 2), float(i)), torch.tensor([0]), torch.tensor([True]),
                   torch.tensor([i]))
    assert q.sample.tolist() == [2, 3, 4]
    assert q.vectors[:, 0].tolist() == [2.0, 3.0, 4.0]
    assert len(q) == 3


def test_queue_partial_fill_keeps_order():
    q = ContrastQueue(10, 2)
    q.push(torch.randn(4, 2), torch.arange(4), torch.ones(4, dtype=torch.bool), torch.arange(4))
    assert q.sample.tolist() == [0, 1, 2, 3]


def test_queue_entries_immutable():
    q = ContrastQueue(5, 2)
    v = torch.ones(2, 2)
    q.push(v, torch.tensor([0, 1]), torch.tensor([True, False]))
    v.add_(7)
    assert torch.equal(q.vectors, torch.ones(2, 2))


def test_flatten_ordering_and_flags():
    mu = {m: torch.randn(2, 3, 2) for m in MODS}
    sigma = {m: torch.rand(2, 3, 2) + 0.1 for m in MODS}
    from emodist.distribution import LatentDistributionSet
    labels = torch.tensor([[1, 0, 1], [0, 1, 0]])
    vec, cluster, positive, sample = flatten_distributions(LatentDistributionSet(mu, sigma), labels)
    assert vec.shape == (18, 4)
    assert cluster[:9].tolist() == [0, 1, 2, 3, 4, 5, 6, 7, 8]
    assert positive[:3].tolist() == [True, False, True]
    assert sample.tolist() == [0] * 9 + [1] * 9
    assert torch.allclose(vec[4], to_vector(mu["audio"][0, 1], sigma["audio"][0, 1]))
