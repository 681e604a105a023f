import json
from collections import Counter

import pytest
import torch

from bytexformer import training as T
from bytexformer.errors import (LabelRequired, MissingPretrainedParams, OddBatchSize,
                                SingleClassDataset)
from bytexformer.model import ModelConfig
from bytexformer.objectives import LossBalanceSpec


def _scalar(x):
    return {"w": torch.tensor([x], dtype=torch.float64)}


def test_sgd_vanilla():
    p = _scalar(1.0)
    T.sgd_step(p, _scalar(0.5), T.OptimizerConfig(kind="SGD", learning_rate=0.1), {})
    assert p["w"].item() == pytest.approx(0.95, abs=1e-12)


def test_sgd_momentum_two_steps():
    cfg = T.OptimizerConfig(kind="SGD", learning_rate=0.1, momentum=0.9)
    p, state = _scalar(0.0), {}
    T.sgd_step(p, _scalar(1.0), cfg, state)
    assert p["w"].item() == pytest.approx(-0.1, abs=1e-12)
    T.sgd_step(p, _scalar(1.0), cfg, state)
    assert p["w"].item() == pytest.approx(-0.29, abs=1e-12)


def test_sgd_weight_decay_hand_iteration():
    cfg = T.OptimizerConfig(kind="SGD", learning_rate=0.1, momentum=0.5, weight_decay=0.01)
    p, state = _scalar(2.0), {}
    theta, v = 2.0, 0.0
    for g in (1.0, -0.5, 0.25):
        v = 0.5 * v + g + 0.01 * theta
        theta -= 0.1 * v
        T.sgd_step(p, _scalar(g), cfg, state)
        assert p["w"].item() == pytest.approx(theta, abs=1e-12)


def test_zero_gradient_keeps_parameters():
    for cfg in (T.OptimizerConfig(kind="SGD", learning_rate=0.1, momentum=0.9), T.OptimizerConfig()):
        p, state = _scalar(1.5), {}
        for _ in range(5):
            T.optimizer_step(p, _scalar(0.0), cfg, state)
        assert p["w"].item() == 1.5


def test_adam_first_step():
    cfg = T.OptimizerConfig()
    for g in (3.0, -0.02):
        p = _scalar(1.0)
        T.adam_step(p, _scalar(g), cfg, {})
        step = 1.0 - p["w"].item()
        # m_hat = g, v_hat = g^2  ->  lr * g / (|g| + eps)
        assert step == pytest.approx(1e-3 * g / (abs(g) + 1e-8), abs=1e-12)
        assert step * g > 0


def test_adam_hand_iteration():
    cfg = T.OptimizerConfig(learning_rate=0.01, betas=[0.8, 0.9], eps=1e-6)
    p, state = _scalar(0.5), {}
    theta, m, v = 0.5, 0.0, 0.0
    for t, g in enumerate((0.3, -0.1, 0.7), start=1):
        m = 0.8 * m + 0.2 * g
        v = 0.9 * v + 0.1 * g * g
        theta -= 0.01 * (m / (1 - 0.8 ** t)) / ((v / (1 - 0.9 ** t)) ** 0.5 + 1e-6)
        T.adam_step(p, _scalar(g), cfg, state)
        assert p["w"].item() == pytest.approx(theta, abs=1e-12)


def test_balanced_batches_counts():
    labels = [1] * 100 + [0] * 300
    batches = list(T.balanced_batches(labels, 32, seed=0))
    assert batches
    for b in batches:
        c = Counter(labels[i] for i in b)
        assert c[1] == 16 and c[0] == 16


def test_balanced_batches_recycle_minority():
    labels = [1] * 10 + [0] * 1000
    batches = list(T.balanced_batches(labels, 4, seed=1))
    assert len(batches) == 500
    assert all(Counter(labels[i] for i in b) == {1: 2, 0: 2} for b in batches)
    neg = [i for b in batches for i in b if labels[i] == 0]
    assert len(neg) == len(set(neg)) == 1000


def test_balanced_batches_deterministic_and_errors():
    labels = [1, 0] * 20
    assert list(T.balanced_batches(labels, 8, 5)) == list(T.balanced_batches(labels, 8, 5))
    assert list(T.balanced_batches(labels, 8, 5)) != list(T.balanced_batches(labels, 8, 6))
    with pytest.raises(OddBatchSize):
        next(T.balanced_batches(labels, 7, 0))
    with pytest.raises(SingleClassDataset):
        next(T.balanced_batches([1, 1, 1], 2, 0))


def test_generate_synthetic():
    recs = T.generate_synthetic(1000, 0.2, 7)
    assert sum(r.label for r in recs) == 200
    assert recs == T.generate_synthetic(1000, 0.2, 7)
    for r in recs:
        assert 0 < len(r.text) <= 255 and max(r.text) < 128
        assert b"://" in r.text


def test_dataset_roundtrip(tmp_path):
    recs = [T.LabeledRecord(b"http://a.b/\x00\xff\x80", 1), T.LabeledRecord(b"plain", 0),
            T.LabeledRecord(b"unlabelled")]
    T.write_jsonl(recs, tmp_path / "d.jsonl")
    assert T.read_dataset(tmp_path / "d.jsonl") == recs
    T.write_raw(recs, tmp_path / "d.bin")
    assert T.read_dataset(tmp_path / "d.bin") == recs
    first = json.loads((tmp_path / "d.jsonl").read_text().splitlines()[0])
    assert first == {"text": "http://a.b/\u0000ÿ\u0080", "label": 1}


def test_encode_records_targets():
    ids, lengths, targets = T.encode_records([T.LabeledRecord(b"abc", 0)], 6)
    assert ids.tolist() == [[97, 98, 99, 256, 257, 257]]
    assert targets.tolist() == [[98, 99, 256, -100, -100, -100]]
    assert lengths.tolist() == [3]


TINY = ModelConfig(n_layers=3, context_n=48, d_model=16, d_ff=32, n_heads=2, dropout_p=0.1)


@pytest.fixture(scope="module")
def data():
    return T.generate_synthetic(96, 0.5, 3)


def _run(data, regime, pretrain_corpus=None, initial_model=None, metrics_path=None, **kw):
    cfg = T.RegimeConfig(regime=regime, epochs=kw.pop("epochs", 1), batch_size=16, seed=4, **kw)
    return T.run_regime(data, cfg, TINY, pretrain_corpus=pretrain_corpus,
                        initial_model=initial_model, metrics_path=metrics_path)


def test_decode_to_label_logs(data):
    res = _run(data, "DecodeToLabel")
    iters = [m for m in res.metrics if "iter" in m]
    epochs = [m for m in res.metrics if "val_auc" in m]
    assert len(epochs) == 1 and 0.0 <= epochs[0]["val_auc"] <= 1.0
    assert all(m["total"] == m["loss_cls"] for m in iters)


def test_mixed_objective_log_identity(data):
    res = _run(data, "MixedObjective")
    for m in (m for m in res.metrics if "iter" in m):
        assert m["alpha"] * m["loss_cls"] / m["total"] == pytest.approx(0.5, abs=1e-6)
        assert m["beta"] * m["loss_next"] / m["total"] == pytest.approx(0.5, abs=1e-6)


def test_mixed_degenerate_spec_matches_decode_to_label(data):
    dtl = _run(data, "DecodeToLabel")
    mixed = _run(data, "MixedObjective", balance_spec=LossBalanceSpec([1.0, 0.0]))
    first_dtl = next(m for m in dtl.metrics if "iter" in m)
    first_mix = next(m for m in mixed.metrics if "iter" in m)
    assert first_mix["loss_cls"] == first_dtl["loss_cls"]
    assert first_mix["beta"] == 0.0
    for m in (m for m in mixed.metrics if "iter" in m):
        assert m["total"] == pytest.approx(m["loss_cls"] + m["loss_next"], rel=1e-6)


def test_pretrain_ignores_labels(data):
    corpus = [T.LabeledRecord(r.text) for r in data]
    res = _run(data, "PretrainNextChar", pretrain_corpus=corpus)
    assert all(m["loss_cls"] is None for m in res.metrics if "iter" in m)


def test_label_required(data):
    with pytest.raises(LabelRequired):
        _run([T.LabeledRecord(r.text) for r in data], "DecodeToLabel")


def test_finetune_needs_pretrained(data):
    with pytest.raises(MissingPretrainedParams):
        _run(data, "FineTune")


def test_finetune_freezes_layers(data):
    pre = _run(data, "PretrainNextChar")
    before = {n: p.detach().clone() for n, p in pre.model.named_parameters()}
    ft = _run(data, "FineTune", freeze_layers=2, initial_model=pre.model,
              optimizer=T.OptimizerConfig(kind="SGD", learning_rate=0.05, momentum=0.9, weight_decay=1e-3))
    after = dict(ft.model.named_parameters())
    for name, p in after.items():
        if name.startswith(("layers.0.", "layers.1.")):
            assert torch.equal(p, before[name]), name
    assert not torch.equal(after["layers.2.ff1.weight"], before["layers.2.ff1.weight"])


def test_balanced_training_with_byte_model(data):
    cfg = ModelConfig.byte_default(n_layers=2, context_n=48)
    rc = T.RegimeConfig(regime="DecodeToLabel", epochs=1, batch_size=8, balanced_batches=True,
                        optimizer=T.OptimizerConfig.byte_sgd(), seed=1)
    res = T.run_regime(data, rc, cfg)
    assert all(torch.isfinite(torch.tensor(m["total"])) for m in res.metrics if "iter" in m)


def test_run_is_deterministic(data, tmp_path):
    a = _run(data, "MixedObjective", metrics_path=tmp_path / "a.jsonl")
    b = _run(data, "MixedObjective", metrics_path=tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    for (n, p), (_, q) in zip(a.model.named_parameters(), b.model.named_parameters()):
        assert torch.equal(p, q), n


def test_keep_best_val_restores_best_epoch(data):
    res = _run(data, "DecodeToLabel", epochs=3, keep_best_val=True)
    aucs = [m["val_auc"] for m in res.metrics if "val_auc" in m]
    assert res.best_epoch == aucs.index(max(aucs))
    # runs are deterministic, so a run stopped at the best epoch has the same weights
    short = _run(data, "DecodeToLabel", epochs=res.best_epoch + 1)
    for (n, a), (_, b) in zip(res.model.named_parameters(), short.model.named_parameters()):
        assert torch.equal(a, b), n
