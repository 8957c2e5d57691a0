import dataclasses

import numpy as np
import pytest

from cfedssl import baselines as bl
from cfedssl.errors import ConfigError
from cfedssl.evaluation import predict
from cfedssl.federation import VARIANTS, run_training

from test_federation import tiny_rc, tiny_split


@pytest.fixture
def split():
    return tiny_split(seed=1, n_clients=3, shard_size=48, server=90, test=60)


@pytest.fixture
def pool():
    s = tiny_split(seed=2, server=240)
    return s.server_X, s.server_y


class TestSpecs:
    def test_unknown_name_rejected(self):
        with pytest.raises(ConfigError):
            bl.BaselineSpec(name="FedMagic")

    def test_make_spec_wires_prox(self):
        rc = tiny_rc()
        assert bl.make_spec("SFedProx_AD", rc).fedprox_mu == rc.fedprox_mu
        assert bl.make_spec("SFedAvg_AD", rc).fedprox_mu == 0.0

    def test_all_names_covered(self):
        assert len(bl.BASELINE_NAMES) == 10
        assert "CFedSSL_NID" in bl.BASELINE_NAMES


class TestRegimes:
    def test_all_data_specs_require_pool(self, split):
        rc = tiny_rc()
        with pytest.raises(ConfigError, match="train_pool"):
            bl.run_baseline(bl.make_spec("SFedAvg_AD", rc), split, rc)

    def test_csl_sd_equals_no_contrastive_ablation(self, split):
        rc = tiny_rc()
        params_csl, _ = None, None
        params_csl, report = bl.run_baseline(bl.make_spec("CSL_SD", rc),
                                             split, rc)
        params_abl, _ = run_training(split, rc,
                                     variant=VARIANTS["no_contrastive"])
        # identical code path -> identical parameters, not merely close
        assert params_csl.subset(("encoder", "classifier")).checksum() == \
            params_abl.subset(("encoder", "classifier")).checksum()

    @pytest.mark.parametrize("name", ["SFedAvg_AD", "SFedProx_AD"])
    def test_supervised_federated_runs(self, name, split, pool):
        rc = tiny_rc()
        params, report = bl.run_baseline(bl.make_spec(name, rc), split, rc,
                                         train_pool=pool)
        assert 0.0 <= report.accuracy <= 100.0
        assert report.sample_count == split.test_X.shape[0]

    @pytest.mark.parametrize("name", ["FedAvg+CR", "FedProx+CR", "FedUDA",
                                      "FedAvg+Fixmatch", "FedProx+Fixmatch"])
    def test_ssl_baselines_run(self, name, split):
        rc = tiny_rc()
        params, report = bl.run_baseline(bl.make_spec(name, rc), split, rc)
        assert np.isfinite(report.accuracy)
        preds = predict(rc.arch, params, split.test_X)
        assert preds.shape == split.test_y.shape

    def test_cfedssl_row_uses_full_protocol(self, split):
        rc = tiny_rc()
        params_row, _ = bl.run_baseline(bl.make_spec("CFedSSL_NID", rc),
                                        split, rc)
        params_direct, _ = run_training(split, rc)
        assert params_row.checksum() == params_direct.checksum()


class TestSuite:
    def test_single_spec_single_row(self, split):
        rc = tiny_rc()
        rows = bl.run_suite([bl.make_spec("CSL_SD", rc)], split, rc,
                            seeds=[5])
        assert len(rows) == 1
        assert rows[0].multi is not None and rows[0].binary is not None
        table = bl.format_suite_table(rows, "multi")
        assert "CSL_SD" in table

    def test_seed_metadata_recorded(self, split):
        rc = tiny_rc()
        rows = bl.run_suite([bl.make_spec("CSL_SD", rc)], split, rc,
                            seeds=[5, 6])
        assert rows[0].multi.seeds == [5, 6]

    def test_failures_recorded_and_suite_continues(self, split):
        rc = tiny_rc()
        specs = [bl.make_spec("SFedAvg_AD", rc),   # fails: pool withheld
                 bl.make_spec("CSL_SD", rc)]
        rows = bl.run_suite(specs, split, rc, seeds=[5])
        assert rows[0].multi is None and rows[0].error
        assert rows[1].multi is not None
        assert "FAILED" in bl.format_suite_table(rows, "multi").splitlines()[1]

    def test_csv_emission(self, split, tmp_path):
        rc = tiny_rc()
        rows = bl.run_suite([bl.make_spec("CSL_SD", rc)], split, rc, seeds=[5])
        out = tmp_path / "table.csv"
        bl.suite_to_csv(rows, out, "binary")
        header, row = out.read_text().splitlines()
        assert header.startswith("framework,acc")
        assert row.startswith("CSL_SD,")


class TestAblations:
    def test_four_rows_and_labels(self, split):
        rc = dataclasses.replace(tiny_rc(), seeds=[5])
        reports = bl.run_ablations(split, rc, seeds=[5])
        assert set(reports) == {"full", "no_augment", "no_contrastive",
                                "no_ema"}
        table = bl.format_ablation_table(reports)
        assert "w/o Latent Contrastive" in table
        assert "CFedSSL-NID" in table
