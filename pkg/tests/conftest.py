"""Session-wide fixtures shared by the module suites and the acceptance run.

The expensive pieces live here so one pytest invocation pays for them once:
a trained codec is reused by every federated test, and the full federation
run feeds both the mechanics checks and the acceptance comparison.
"""

from dataclasses import replace

import numpy as np
import pytest

from qv2x import codec, dataio, fed


@pytest.fixture(scope="session")
def digits():
    return dataio.load_digits(dataio.bundled_path())


@pytest.fixture(scope="session")
def fed_corpus(digits):
    """Whitened 32-wide encoder features for the federated experiments.

    One moderate fit (50 epochs) is shared by both federation arms, so the
    compressed pipeline and its dense twin start from the same frozen
    encoder and differ only in how the classifier weights travel.
    """
    ds = digits
    model = codec.init_codec(0)
    codec.fit(
        model,
        ds.images[ds.split.train],
        ds.labels[ds.split.train],
        ds.images[ds.split.val],
        ds.labels[ds.split.val],
        50,
        codec.TrainConfig(),
        seed=1,
    )
    train_f = codec.encode_batch(ds.images[ds.split.train], model)
    test_f = codec.encode_batch(ds.images[ds.split.test], model)
    mu = train_f.mean(axis=0)
    sd = train_f.std(axis=0) + 1e-12
    return {
        "train_features": (train_f - mu) / sd,
        "train_labels": ds.labels[ds.split.train],
        "test_features": (test_f - mu) / sd,
        "test_labels": ds.labels[ds.split.test],
        "decoder_w": model.dec_w.copy(),
        "codec": model,
    }


@pytest.fixture(scope="session")
def fed_e2e(fed_corpus):
    """20 rounds of 4-client IID federation plus its dense reference twin.

    Both arms share the init, the client partition, and the two-phase
    schedule (15 rounds at lr 0.5, then 5 at 0.1 to settle); only the
    transport differs: truncated factors under masks versus raw matrices.
    """
    feats = fed_corpus["train_features"]
    labels = fed_corpus["train_labels"]
    perm = np.random.default_rng(7).permutation(feats.shape[0])
    clients = [
        fed.ClientState(c, feats[perm[c::4]], labels[perm[c::4]])
        for c in range(4)
    ]
    head0 = np.random.default_rng(0).uniform(-1.0, 1.0, (10, 32))
    cfg = fed.FedConfig()
    cloud = fed.LowRankModel(
        (
            fed.decompose(head0, cfg.tau, 9),
            fed.decompose(fed_corpus["decoder_w"], cfg.tau, 8),
        )
    )
    test_f = fed_corpus["test_features"]
    test_y = fed_corpus["test_labels"]
    cloud, rows = fed.run_federation(cloud, clients, 15, cfg, test_f, test_y)
    cloud, tail = fed.run_federation(
        cloud, clients, 5, replace(cfg, lr=0.1), test_f, test_y
    )
    rows += tail

    dense = [head0.copy(), fed_corpus["decoder_w"].copy()]
    dense = fed.run_dense_fedavg(dense, clients, 15, cfg.steps, cfg.lr)
    dense = fed.run_dense_fedavg(dense, clients, 5, cfg.steps, 0.1)
    return {
        "cloud": cloud,
        "rows": rows,
        "final_accuracy": rows[-1]["accuracy"],
        "dense_accuracy": fed.dense_accuracy(dense, test_f, test_y),
        "dense_params_per_client": 10 * 32 + 64 * 32,
        "max_upload_per_client": max(r["params_uploaded"] for r in rows) / 4,
    }
