import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cfedssl import dataset as ds
from cfedssl import synth


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("corpus")
    synth.generate(out, seed=0)
    return out


@pytest.fixture(scope="session")
def corpus_records(corpus_dir):
    return ds.load_nslkdd(corpus_dir / "KDDTrain+.txt",
                          corpus_dir / "KDDTest+.txt")


TINY_INI = """\
[dataset]
data_root = {data_root}
artifact_dir = {artifact}
server_labeled_count = 400
client_unlabeled_total = 600

[federation]
num_clients = 3
rounds = 1
client_epochs = 1
client_batch = 128
server_batch = 64
server_epochs_per_round = 1
seed = 5

[model]
conv_channels = 2
embedding_dim = 8
projection_hidden = 8
projection_dim = 4
num_classes = 5

[run]
output_dir = {out}
seeds = 5
"""


@pytest.fixture(scope="session")
def tiny_setup(corpus_dir, tmp_path_factory):
    """A prepared artifact plus a small-protocol config, shared per session."""
    from cfedssl.cli import main

    root = tmp_path_factory.mktemp("tiny")
    artifact = root / "artifact"
    out = root / "runs"
    config = root / "config.ini"
    config.write_text(TINY_INI.format(data_root=corpus_dir, artifact=artifact,
                                      out=out))
    assert main(["prepare", "--config", str(config)]) == 0
    return {"config": config, "artifact": artifact, "out": out,
            "corpus": corpus_dir}
