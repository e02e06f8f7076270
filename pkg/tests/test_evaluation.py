import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cardiofuse import evaluation as E
from cardiofuse.errors import (
    CapabilityError,
    ContractError,
    SingleClassLabelError,
    UndefinedMetricError,
)
from cardiofuse.models import default_bundle_config, encode_signal, init_bundle, predict_labs
from cardiofuse.pipeline import load_checkpoint, save_checkpoint
from cardiofuse.tensor import Tensor, sigmoid

from helpers import pairwise_auroc


class TestAurocBinary:
    def test_perfect_ranking(self):
        assert E.auroc_binary([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0]) == 1.0

    def test_inverted_ranking(self):
        assert E.auroc_binary([0.3, 0.7], [1, 0]) == 0.0

    def test_midrank_tie(self):
        assert E.auroc_binary([0.5, 0.5], [1, 0]) == 0.5

    def test_against_pairwise_oracle_with_ties(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            n = int(rng.integers(5, 60))
            scores = np.round(rng.normal(size=n), 1)  # rounding injects ties
            labels = (rng.uniform(size=n) > 0.4).astype(float)
            if labels.sum() in (0, n):
                labels[0] = 1.0 - labels[0]
            assert abs(E.auroc_binary(scores, labels) - pairwise_auroc(scores, labels)) < 1e-12

    def test_single_class_raises_skip_signal(self):
        with pytest.raises(SingleClassLabelError):
            E.auroc_binary([0.1, 0.2], [1, 1])

    def test_too_few_samples(self):
        with pytest.raises(ContractError):
            E.auroc_binary([0.5], [1])

    @given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 5.0), shift=st.floats(-3, 3))
    @settings(max_examples=25, deadline=None)
    def test_invariant_under_increasing_transforms(self, seed, scale, shift):
        rng = np.random.default_rng(seed)
        scores = rng.normal(size=30)
        labels = (rng.uniform(size=30) > 0.5).astype(float)
        if labels.sum() in (0, 30):
            labels[0] = 1.0 - labels[0]
        base = E.auroc_binary(scores, labels)
        assert E.auroc_binary(scale * scores + shift, labels) == pytest.approx(base, abs=1e-12)
        assert E.auroc_binary(np.exp(np.clip(scores, -20, 20)), labels) == pytest.approx(
            base, abs=1e-12
        )

    def test_complement_identity_without_ties(self):
        rng = np.random.default_rng(1)
        scores = rng.permutation(40) / 40.0  # distinct scores
        labels = (rng.uniform(size=40) > 0.5).astype(float)
        labels[0], labels[1] = 1.0, 0.0
        total = E.auroc_binary(scores, labels) + E.auroc_binary(scores, 1.0 - labels)
        assert abs(total - 1.0) < 1e-12


class TestMacroAuroc:
    def test_mean_of_extremes(self):
        scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.2, 0.8], [0.1, 0.9]])
        labels = np.array([[1, 1], [1, 1], [0, 0], [0, 0]], dtype=float)
        macro, per_label, skipped = E.macro_auroc(scores, labels)
        assert per_label == [1.0, 0.0]
        assert macro == 0.5
        assert skipped == []

    def test_skip_rule(self):
        scores = np.array([[0.9, 0.3], [0.2, 0.4], [0.7, 0.5]])
        labels = np.array([[1, 1], [0, 1], [1, 1]], dtype=float)
        macro, per_label, skipped = E.macro_auroc(scores, labels)
        assert skipped == [1]
        assert per_label[1] is None
        assert macro == per_label[0]

    def test_matches_per_label_oracle(self):
        rng = np.random.default_rng(2)
        scores = rng.normal(size=(40, 5))
        labels = (rng.uniform(size=(40, 5)) > 0.5).astype(float)
        labels[0] = 1.0
        labels[1] = 0.0
        macro, per_label, skipped = E.macro_auroc(scores, labels)
        expected = [pairwise_auroc(scores[:, t], labels[:, t]) for t in range(5)]
        assert np.allclose([p for p in per_label if p is not None], expected, atol=1e-12)
        assert macro == pytest.approx(np.mean(expected), abs=1e-12)

    def test_label_order_permutation_invariance(self):
        rng = np.random.default_rng(3)
        scores = rng.normal(size=(30, 4))
        labels = (rng.uniform(size=(30, 4)) > 0.5).astype(float)
        labels[0] = 1.0
        labels[1] = 0.0
        macro, _, _ = E.macro_auroc(scores, labels)
        perm = rng.permutation(4)
        macro_p, _, _ = E.macro_auroc(scores[:, perm], labels[:, perm])
        assert macro == pytest.approx(macro_p, abs=1e-12)

    def test_all_single_class_undefined(self):
        scores = np.zeros((4, 2))
        labels = np.ones((4, 2))
        with pytest.raises(UndefinedMetricError):
            E.macro_auroc(scores, labels)


def _save_model(tmp_path, dataset, nets_subset, kind, name="m.ckpt", seed=0):
    gen = dataset.config
    bundle = init_bundle(
        default_bundle_config(
            lead_count=gen.lead_count,
            seq_len=gen.seq_len,
            routine_dim=gen.routine_dim,
            n_diagnoses=gen.n_diagnoses,
            n_labs=gen.n_labs,
        ),
        seed,
    )
    nets = {name: getattr(bundle, name) for name in nets_subset}
    meta = {
        "kind": kind,
        "stage": "test",
        "seed": seed,
        "bundle_config": bundle.cfg.to_dict(),
        "train_config": {},
        "dataset_config": gen.to_dict(),
    }
    path = tmp_path / name
    save_checkpoint(path, nets, meta)
    return path, bundle


class TestEvaluate:
    def test_signal_only_has_no_lab_block(self, tmp_path, small_dataset):
        path, _ = _save_model(
            tmp_path, small_dataset, ("signal_encoder", "diagnosis_head"), "signal_only"
        )
        report = E.evaluate(path, small_dataset, "val")
        assert report.labs is None
        assert report.diagnoses is not None
        assert "labs" not in report.to_dict()

    def test_evaluate_twice_identical(self, tmp_path, small_dataset):
        path, _ = _save_model(
            tmp_path,
            small_dataset,
            ("signal_encoder", "diagnosis_head", "lab_head"),
            "joint",
        )
        r1 = E.evaluate(path, small_dataset, "test").to_dict()
        r2 = E.evaluate(path, small_dataset, "test").to_dict()
        assert E.to_json(r1) == E.to_json(r2)

    def test_no_heads_is_capability_error(self, tmp_path, small_dataset):
        path, _ = _save_model(tmp_path, small_dataset, ("signal_encoder",), "joint")
        with pytest.raises(CapabilityError):
            E.evaluate(path, small_dataset, "val")


class TestExplain:
    def test_full_list_descending_and_exact_probabilities(self, tmp_path, small_dataset):
        path, bundle = _save_model(
            tmp_path,
            small_dataset,
            ("signal_encoder", "diagnosis_head", "lab_head"),
            "joint",
        )
        enc = small_dataset.test[0]
        n_labs = small_dataset.config.n_labs
        entry = E.explain(path, enc, top_k=n_labs)
        probs = [item["probability"] for item in entry["top_labs"]]
        assert probs == sorted(probs, reverse=True)
        assert len(probs) == n_labs
        # Probabilities must equal sigmoid of the lab logits from the same
        # features, bit for bit.
        h = encode_signal(bundle, Tensor(enc.signal))
        expected = sigmoid(predict_labs(bundle, h)).data
        by_index = {
            int(item["lab"].split("_")[1]): item["probability"]
            for item in entry["top_labs"]
        }
        for p in range(n_labs):
            assert by_index[p] == expected[p]

    def test_ties_break_by_lab_index(self, tmp_path, small_dataset):
        path, bundle = _save_model(
            tmp_path,
            small_dataset,
            ("signal_encoder", "diagnosis_head", "lab_head"),
            "joint",
        )
        loaded = load_checkpoint(path)
        # Zero lab head: all logits identical, ranking must fall back to index.
        for _, param in loaded.nets["lab_head"].named_parameters("lab_head").items():
            param.data[...] = 0.0
        entry = E.explain(loaded, small_dataset.test[1], top_k=3)
        assert [item["lab"] for item in entry["top_labs"]] == ["lab_0", "lab_1", "lab_2"]

    def test_missing_lab_head_capability_error(self, tmp_path, small_dataset):
        path, _ = _save_model(
            tmp_path, small_dataset, ("signal_encoder", "diagnosis_head"), "signal_only"
        )
        with pytest.raises(CapabilityError):
            E.explain(path, small_dataset.test[0], top_k=1)

    def test_top_k_range(self, tmp_path, small_dataset):
        path, _ = _save_model(
            tmp_path,
            small_dataset,
            ("signal_encoder", "diagnosis_head", "lab_head"),
            "joint",
        )
        with pytest.raises(ContractError):
            E.explain(path, small_dataset.test[0], top_k=0)


class TestReportJson:
    def test_seventeen_significant_digits(self):
        text = E.to_json({"x": 0.1, "y": 1.0 / 3.0})
        assert "0.10000000000000001" in text
        assert "0.33333333333333331" in text

    def test_roundtrip_exact(self):
        import json

        values = [0.1, 2.0 / 3.0, 1e-17, 123456.789]
        parsed = json.loads(E.to_json({"v": values}))
        assert parsed["v"] == values

    def test_null_and_ints_and_bools(self):
        assert E.to_json({"a": None, "b": 3, "c": True}) == '{"a":null,"b":3,"c":true}'
