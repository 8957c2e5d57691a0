import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfedssl.augment import AugmentationPolicy
from cfedssl.config import FederationConfig, RunConfig
from cfedssl.dataset import ClientShard, DatasetSplit
from cfedssl.errors import ConfigError
from cfedssl.federation import (VARIANTS, RoundRecord, client_update,
                                ema_update, fedavg, run_training,
                                server_finetune)
from cfedssl.losses import ContrastiveConfig
from cfedssl.model import ArchitectureSpec, ParameterSet, build

TINY_ARCH = ArchitectureSpec(input_dim=10, conv_channels=(2,),
                             embedding_dim=8, projection_hidden=8,
                             projection_dim=4, dropout_rate=0.2,
                             num_classes=3, param_budget=10_000)


def pset(value, shape=(2, 2)):
    return ParameterSet({
        "encoder.w": np.full(shape, value, dtype=np.float32),
        "classifier.b": np.full(3, value, dtype=np.float32),
    })


def tiny_split(seed=0, n_clients=3, shard_size=40, server=60, test=30):
    rng = np.random.default_rng(seed)
    centers = rng.random((3, 10))

    def sample(n):
        y = rng.integers(0, 3, size=n)
        X = np.clip(centers[y] + 0.1 * rng.standard_normal((n, 10)),
                    0, 1).astype(np.float32)
        return X, y

    server_X, server_y = sample(server)
    test_X, test_y = sample(test)
    shards = [ClientShard(k + 1, sample(shard_size)[0])
              for k in range(n_clients)]
    return DatasetSplit(server_X=server_X, server_y=server_y, shards=shards,
                        test_X=test_X, test_y=test_y,
                        server_idx=np.arange(server),
                        client_idx=[np.arange(shard_size)] * n_clients)


def tiny_rc(**overrides) -> RunConfig:
    fed = FederationConfig(num_clients=3, rounds=2, client_epochs=1,
                           client_batch=16, server_batch=16,
                           ema_weight=0.5, server_epochs_per_round=1,
                           learning_rate=0.01, seed=5)
    fed = dataclasses.replace(fed, **overrides)
    return RunConfig(federation=fed, arch=TINY_ARCH,
                     augment=AugmentationPolicy(), seeds=[5], workers=1)


class TestFedavg:
    def test_identical_inputs_fixed_point(self):
        out = fedavg([pset(2.0), pset(2.0)], [3, 5])
        assert out.allclose(pset(2.0))

    def test_equal_counts_midpoint(self):
        out = fedavg([pset(0.0), pset(2.0)], [4, 4])
        assert out.allclose(pset(1.0))

    def test_weighted_mean(self):
        out = fedavg([pset(0.0), pset(4.0)], [1, 3])
        assert out.allclose(pset(3.0))

    def test_permutation_equivariance(self):
        sets = [pset(0.0), pset(1.0), pset(5.0)]
        counts = [1, 2, 7]
        a = fedavg(sets, counts)
        b = fedavg(sets[::-1], counts[::-1])
        assert a.allclose(b, atol=1e-7)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            fedavg([], [])

    def test_shape_mismatch_rejected(self):
        other = ParameterSet({"encoder.w": np.zeros((3, 3), dtype=np.float32),
                              "classifier.b": np.zeros(3, dtype=np.float32)})
        with pytest.raises(ConfigError):
            fedavg([pset(1.0), other], [1, 1])

    def test_nonpositive_count_rejected(self):
        with pytest.raises(ConfigError):
            fedavg([pset(1.0)], [0])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2 ** 31 - 1))
def test_fedavg_convex_hull_property(k, seed):
    rng = np.random.default_rng(seed)
    sets = [ParameterSet({"encoder.w": rng.normal(size=(3, 2)).astype(np.float32)})
            for _ in range(k)]
    counts = [int(c) for c in rng.integers(1, 50, size=k)]
    out = fedavg(sets, counts)
    stack = np.stack([s.data["encoder.w"] for s in sets])
    assert np.all(out.data["encoder.w"] >= stack.min(axis=0) - 1e-6)
    assert np.all(out.data["encoder.w"] <= stack.max(axis=0) + 1e-6)


class TestEMA:
    def test_xi_one_keeps_previous(self):
        assert ema_update(pset(1.0), pset(9.0), 1.0).allclose(pset(1.0))

    def test_xi_zero_takes_aggregate(self):
        assert ema_update(pset(1.0), pset(9.0), 0.0).allclose(pset(9.0))

    def test_halfway(self):
        assert ema_update(pset(1.0), pset(0.0), 0.5).allclose(pset(0.5))

    def test_monotone_in_xi(self):
        values = [ema_update(pset(0.0), pset(1.0), xi).data["encoder.w"][0, 0]
                  for xi in (0.0, 0.25, 0.5, 0.75, 1.0)]
        assert values == sorted(values, reverse=True)

    def test_xi_out_of_range(self):
        with pytest.raises(ConfigError):
            ema_update(pset(0.0), pset(1.0), 1.5)


class TestClientUpdate:
    def test_zero_epochs_is_identity(self):
        rc = tiny_rc(client_epochs=0)
        split = tiny_split()
        params = build(TINY_ARCH, 0)
        out, trace = client_update(params, split.shards[0], rc.federation,
                                   ContrastiveConfig(), rc.augment, TINY_ARCH,
                                   round_index=1)
        assert out.allclose(params.subset(("encoder", "projector")))
        assert trace == []

    def test_seed_reproducible(self):
        rc = tiny_rc()
        split = tiny_split()
        params = build(TINY_ARCH, 0)
        args = (params, split.shards[0], rc.federation, ContrastiveConfig(),
                rc.augment, TINY_ARCH)
        out1, t1 = client_update(*args, round_index=1)
        out2, t2 = client_update(*args, round_index=1)
        assert out1.checksum() == out2.checksum()
        assert t1 == t2

    def test_classifier_untouched(self):
        rc = tiny_rc()
        split = tiny_split()
        params = build(TINY_ARCH, 0)
        out, _ = client_update(params, split.shards[0], rc.federation,
                               ContrastiveConfig(), rc.augment, TINY_ARCH,
                               round_index=1)
        assert not any(n.startswith("classifier.") for n in out.names())

    def test_batch_clamped_with_warning(self, caplog):
        rc = tiny_rc(client_batch=4096)
        split = tiny_split()
        params = build(TINY_ARCH, 0)
        with caplog.at_level("WARNING"):
            client_update(params, split.shards[0], rc.federation,
                          ContrastiveConfig(), rc.augment, TINY_ARCH,
                          round_index=1)
        assert any("clamped" in m for m in caplog.messages)


class TestServerFinetune:
    def test_zero_epochs_identity(self):
        rc = tiny_rc()
        split = tiny_split()
        params = build(TINY_ARCH, 0)
        out, trace = server_finetune(params, split.server_X, split.server_y,
                                     rc.federation, TINY_ARCH, round_index=1,
                                     epochs=0)
        assert out.allclose(params.subset(("encoder", "classifier")))
        assert trace == []

    def test_loss_decreases_on_toy_set(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 3, size=100)
        centers = np.eye(3, 10) * 0.9 + 0.05
        X = np.clip(centers[y] + 0.05 * rng.standard_normal((100, 10)),
                    0, 1).astype(np.float32)
        rc = tiny_rc()
        params = build(TINY_ARCH, 1)
        _, trace = server_finetune(params, X, y, rc.federation, TINY_ARCH,
                                   round_index=1, epochs=8)
        values = [v for _, _, v in trace]
        assert values[-1] < values[0]


class TestRunTraining:
    def test_round_count_and_shape_congruence(self, tmp_path):
        rc = tiny_rc()
        split = tiny_split()
        params, records = run_training(split, rc, run_dir=tmp_path / "run")
        assert len(records) == rc.federation.rounds
        assert params.shape_congruent(build(TINY_ARCH, 0))
        assert (tmp_path / "run" / "checkpoints" / "round_02").exists()
        assert (tmp_path / "run" / "config.ini").exists()
        assert all(r.aggregated_checksum for r in records)

    def test_determinism_across_runs(self, tmp_path):
        rc = tiny_rc()
        split = tiny_split()
        p1, r1 = run_training(split, rc, run_dir=tmp_path / "a")
        p2, r2 = run_training(split, rc, run_dir=tmp_path / "b")
        assert p1.checksum() == p2.checksum()
        assert [r.aggregated_checksum for r in r1] == \
            [r.aggregated_checksum for r in r2]
        assert [r.metrics for r in r1] == [r.metrics for r in r2]

    def test_worker_count_does_not_change_result(self):
        split = tiny_split()
        p1, _ = run_training(split, tiny_rc())
        rc2 = dataclasses.replace(tiny_rc(), workers=3)
        p2, _ = run_training(split, rc2)
        assert p1.checksum() == p2.checksum()

    def test_single_client_no_ema_degenerates(self):
        split = tiny_split(n_clients=1)
        rc = tiny_rc(num_clients=1, ema_weight=0.0)
        params, records = run_training(split, rc)
        assert len(records) == 2

    def test_no_contrastive_variant_skips_clients(self):
        split = tiny_split()
        params, records = run_training(split, tiny_rc(),
                                       variant=VARIANTS["no_contrastive"])
        assert all(r.client_final_losses == {} for r in records)
        assert all(r.aggregated_checksum == "" for r in records)

    def test_resume_matches_straight_run(self, tmp_path):
        split = tiny_split()
        rc4 = tiny_rc(rounds=4)
        straight, _ = run_training(split, rc4, run_dir=tmp_path / "straight")

        rc2 = tiny_rc(rounds=2)
        run_training(split, rc2, run_dir=tmp_path / "resumable")
        resumed, records = run_training(split, rc4,
                                        run_dir=tmp_path / "resumable",
                                        resume=True)
        assert resumed.checksum() == straight.checksum()
        assert [r.round_index for r in records] == [1, 2, 3, 4]

    def test_round_records_serialization(self, tmp_path):
        split = tiny_split()
        run_training(split, tiny_rc(), run_dir=tmp_path / "run")
        lines = (tmp_path / "run" / "round_records.jsonl").read_text().splitlines()
        parsed = [RoundRecord.from_json(json.loads(line)) for line in lines]
        assert [r.round_index for r in parsed] == [1, 2]
        assert set(parsed[0].client_final_losses) == {1, 2, 3}

    def test_metrics_log_rows(self, tmp_path):
        split = tiny_split()
        run_training(split, tiny_rc(), run_dir=tmp_path / "run")
        header, *rows = (tmp_path / "run" / "metrics_log.csv").read_text().splitlines()
        assert header == "round,client,epoch,step,loss_name,value"
        assert any(",server," in r for r in rows)
        assert any(",client_1," in r for r in rows)
