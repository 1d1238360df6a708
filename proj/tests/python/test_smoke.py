"""Smoke tests for the compiled extension: every exposed operation runs and
returns sane values on tiny inputs."""

import math

import pytest

import poseface


def test_adaptive_ratio_clamps():
    assert poseface.adaptive_ratio(0.0) == 0.0
    assert poseface.adaptive_ratio(45.0) == pytest.approx(0.5)
    assert poseface.adaptive_ratio(-90.0) == 1.0
    assert poseface.adaptive_ratio(135.0) == 1.0


def test_pose_basis_is_harmonic():
    b = poseface.pose_basis(30.0)
    assert len(b) == 8
    assert b[0] == pytest.approx(math.sin(math.radians(30.0)))
    assert b[1] == pytest.approx(math.cos(math.radians(30.0)))
    assert b[6] == pytest.approx(math.sin(4 * math.radians(30.0)))


def test_margin_logits_shape_and_margin_direction():
    emb = [[0.6, 0.8], [0.0, 2.0]]
    weights = [[1.0, 0.0], [0.0, 1.0]]
    logits = poseface.margin_logits(emb, weights, [0, 1], [0.5, 0.5], 64.0)
    assert len(logits) == 2 and len(logits[0]) == 2
    # The margin pulls the target logit below the plain scaled cosine; the
    # off-target column stays a plain scaled cosine.
    assert logits[0][0] == pytest.approx(64.0 * math.cos(math.acos(0.6) + 0.5))
    assert logits[0][1] == pytest.approx(64.0 * 0.8)


def test_paa_reduces_to_arcface_without_extra_margin():
    emb = [[0.6, 0.8, 0.0], [0.0, 0.6, 0.8]]
    weights = [[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]]
    classes = [0, 1]
    paa = poseface.paa_loss(emb, weights, classes, [0.4, 0.9], 16.0, 0.3, 0.0)
    arc = poseface.arcface_loss(emb, weights, classes, 16.0, 0.3)
    assert paa == arc


def test_pose_loss_matches_hand_value():
    value = poseface.pose_loss([[1.0, 0.0]], [[0.0, 0.0]])
    assert value == pytest.approx(1.0)
    squared = poseface.pose_loss([[3.0, 4.0]], [[0.0, 0.0]], squared=True)
    assert squared == pytest.approx(25.0)


def test_orth_penalty_orthogonal_and_parallel():
    e1 = [[1.0], [0.0], [0.0]]
    e3 = [[0.0], [0.0], [1.0]]
    assert poseface.orth_penalty(e1, e3) == pytest.approx(0.0, abs=1e-12)
    assert poseface.orth_penalty(e1, e1) == pytest.approx(1.0)


def test_verification_metrics_on_separable_scores():
    scores = [0.9, 0.8, 0.7, 0.2, 0.1, 0.0]
    genuine = [True, True, True, False, False, False]
    assert poseface.eer(scores, genuine) == pytest.approx(0.0)
    assert poseface.auc(scores, genuine) == pytest.approx(1.0)
    point = poseface.tar_at_far(scores, genuine, 0.5)
    assert point["tar"] == pytest.approx(1.0)
    folds = poseface.kfold_accuracy(scores * 2, genuine * 2, 2)
    assert folds["mean"] == pytest.approx(1.0)
    assert folds["sd"] == pytest.approx(0.0)


def test_rank1_buckets():
    gallery = [[1.0, 0.0], [0.0, 1.0]]
    probes = [[0.9, 0.1], [0.1, 0.9], [0.8, -0.2]]
    result = poseface.rank1(gallery, [0, 1], probes, [0, 1, 0], [5.0, 70.0, -20.0])
    assert result["overall"] == pytest.approx(1.0)
    assert result["total"] == 3
    assert result["profile_accuracy"] == pytest.approx(1.0)
    edges = [b["upper_edge_deg"] for b in result["buckets"]]
    assert edges == [15, 30, 75]


def test_generate_dataset_is_deterministic_and_split():
    a = poseface.generate_dataset(n_identities=6, samples_per_identity=10, d_in=16, seed=3)
    b = poseface.generate_dataset(n_identities=6, samples_per_identity=10, d_in=16, seed=3)
    assert a["observations"] == b["observations"]
    assert a["train_classes"] > 0
    n = len(a["observations"])
    assert n == 60
    used = set(a["train_indices"]) | set(a["ident_test_indices"]) | set(a["verif_test_indices"])
    assert used == set(range(n))
    train_ids = {a["identities"][i] for i in a["train_indices"]}
    verif_ids = {a["identities"][i] for i in a["verif_test_indices"]}
    assert train_ids.isdisjoint(verif_ids)


def test_errors_surface_as_python_exceptions():
    with pytest.raises(poseface.PoseFaceError):
        poseface.orth_penalty([[0.0], [0.0]], [[1.0], [0.0]])
