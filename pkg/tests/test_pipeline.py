import math

import numpy as np
import pytest

from crlc.config import RunConfig, comparable
from crlc.pipeline import (
    ABLATION_AXES,
    ablation_sweep,
    mine_neighbors,
    train_end_to_end,
    train_semi,
    train_two_stage,
)

TINY = dict(
    dataset={"kind": "mixture", "C": 3, "D": 6, "n_per_class": 40, "separation": 5.0, "seed": 0},
    backbone=[16], feature_dim=8, rl_hidden=16, head_hidden=16, n_subheads=2,
    batch_size=30, epochs=3, stage1_epochs=2, n_neighbors=5, eval_every=1, labeled_batch=3,
)


def tiny(**kw):
    return RunConfig(**{**TINY, **kw})


def same_reports(a, b):
    return comparable(a.to_dict()) == comparable(b.to_dict())


def test_zero_epochs_reports_initial_state():
    rep = train_end_to_end(tiny(epochs=0))
    assert rep.per_epoch == []
    assert set(rep.final_metrics) == {"acc", "nmi", "ari"}
    assert 1 / 3 - 1e-12 <= rep.final_metrics["acc"] <= 1.0


def test_end_to_end_records_and_bounds():
    rep = train_end_to_end(tiny())
    assert [r["epoch"] for r in rep.per_epoch] == [1, 2, 3]
    for r in rep.per_epoch:
        assert r["loss_pc"] >= 0 and r["loss_fc"] >= 0
        assert r["infonce_pc"] <= math.log(30) + 1e-12
        assert r["infonce_fc"] <= math.log(30) + 1e-12
        assert 0 <= r["entropy"] <= math.log(3) + 1e-12
    assert rep.per_epoch[0]["lr"] == pytest.approx(0.1)


def test_deterministic_and_seed_sensitive():
    a, b = train_end_to_end(tiny()), train_end_to_end(tiny())
    assert same_reports(a, b)
    c = train_end_to_end(tiny(seed=1))
    assert not same_reports(a, c)


@pytest.mark.parametrize("critic", ["Dot", "NegL2", "NegJS"])
def test_other_critics_train(critic):
    rep = train_end_to_end(tiny(critic=critic, epochs=1))
    assert np.isfinite(rep.per_epoch[0]["loss_total"])


def test_memory_bank_backend():
    rep = train_end_to_end(tiny(pc_backend="MemoryBank", bank_negatives=8))
    for r in rep.per_epoch:
        assert r["infonce_pc"] <= math.log(8) + 1e-12


def test_batch_larger_than_dataset():
    with pytest.raises(ValueError):
        train_end_to_end(tiny(batch_size=500))


def test_semi_without_ce_matches_end_to_end_losses():
    semi = train_semi(tiny(lambda3=0.0))
    e2e = train_end_to_end(tiny())
    for a, b in zip(semi.per_epoch, e2e.per_epoch):
        for key in ("loss_pc", "loss_fc", "entropy"):
            assert a[key] == b[key]


def test_semi_labeled_indices():
    rep = train_semi(tiny(labels_per_class=2))
    assert len(rep.extra["labeled_indices"]) == 6
    assert all(r["loss_ce"] >= 0 for r in rep.per_epoch)
    rep = train_semi(tiny(), labeled=[0, 50, 100])
    assert rep.extra["labeled_indices"] == [0, 50, 100]
    with pytest.raises(ValueError):
        train_semi(tiny(), labeled=[])


def test_two_stage_frozen_backbone_unchanged():
    rep = train_two_stage(tiny(stage2_mode="FreezeBackbone"))
    ex = rep.extra
    assert ex["backbone_checksum_stage2_start"] == ex["backbone_checksum_stage2_end"]
    assert 0.0 <= ex["neighbor_purity"] <= 1.0
    stages = [r["stage"] for r in rep.per_epoch]
    assert stages == [1, 1, 2, 2, 2]


def test_two_stage_trainable_backbone_moves():
    ex = train_two_stage(tiny()).extra
    assert ex["backbone_checksum_stage2_start"] != ex["backbone_checksum_stage2_end"]


class TestMineNeighbors:
    @staticmethod
    def unit(deg):
        r = math.radians(deg)
        return [math.cos(r), math.sin(r)]

    def test_angles(self):
        F = np.array([self.unit(0), self.unit(10), self.unit(90)])
        np.testing.assert_array_equal(mine_neighbors(F, 1)[:, 0], [1, 0, 1])

    def test_rotation_invariant(self, rng):
        F = rng.normal(size=(30, 5))
        F /= np.linalg.norm(F, axis=1, keepdims=True)
        Q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        np.testing.assert_array_equal(mine_neighbors(F, 4), mine_neighbors(F @ Q, 4))

    def test_all_others(self, rng):
        F = rng.normal(size=(6, 3))
        F /= np.linalg.norm(F, axis=1, keepdims=True)
        nb = mine_neighbors(F, 5)
        for i, row in enumerate(nb):
            assert sorted(row) == [j for j in range(6) if j != i]

    def test_ties_lowest_index(self):
        F = np.array([[1.0, 0.0]] * 4)
        np.testing.assert_array_equal(mine_neighbors(F, 2), [[1, 2], [0, 2], [0, 1], [0, 1]])

    def test_separated_clusters_pure(self, rng):
        centers = np.eye(4)
        labels = np.repeat(np.arange(4), 25)
        F = centers[labels] + 0.05 * rng.normal(size=(100, 4))
        F /= np.linalg.norm(F, axis=1, keepdims=True)
        nb = mine_neighbors(F, 10)
        assert np.all(labels[nb] == labels[:, None])

    @pytest.mark.parametrize("K", [0, 6])
    def test_bad_k(self, K):
        with pytest.raises(ValueError):
            mine_neighbors(np.eye(6), K)

    def test_requires_unit_rows(self):
        with pytest.raises(ValueError):
            mine_neighbors(2 * np.eye(3), 1)


def test_ablation_cardinality():
    reps = ablation_sweep(tiny(epochs=1), "Critic", ["LogDot", "Dot"])
    assert [r.config["critic"] for r in reps] == ["LogDot", "Dot"]
    reps = ablation_sweep(tiny(epochs=1), "Momentum", [0.0, 0.9])
    assert [r.config["alpha"] for r in reps] == [0.0, 0.9]
    assert all(r.config["pc_backend"] == "MemoryBank" for r in reps)


def test_ablation_rejects():
    with pytest.raises(ValueError):
        ablation_sweep(tiny(), "Tau", [0.1])
    with pytest.raises(ValueError):
        ablation_sweep(tiny(), "Critic", ["LogDot", "Bogus"])
    assert set(ABLATION_AXES) == {"Critic", "Lambda2", "PcBackend", "Momentum", "NumNegatives"}


def test_curves_csv():
    rep = train_end_to_end(tiny(epochs=2))
    lines = rep.curves_csv().strip().splitlines()
    assert lines[0].startswith("stage,epoch,lr")
    assert len(lines) == 3
