import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sdcluster import ModelConfig, head_probabilities, init_model
from sdcluster.errors import ConfigurationError, NumericError, ShapeError
from sdcluster.models import l2_normalize

from conftest import tiny_model_config

finite_logits = st.lists(
    st.floats(min_value=-30, max_value=30, allow_nan=False), min_size=2, max_size=8
)


class TestInit:
    def test_same_seed_bit_identical(self):
        a = init_model(tiny_model_config(), seed=3)
        b = init_model(tiny_model_config(), seed=3)
        for (na, pa), (nb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert na == nb
            assert torch.equal(pa, pb)

    def test_bank_shape_and_unit_rows(self):
        model = init_model(ModelConfig(backbone="resnet18"), seed=0)
        for bank in model.banks:
            assert tuple(bank.weight.shape) == (60, 128)
            norms = bank.weight.norm(dim=1)
            assert torch.allclose(norms, torch.ones_like(norms), atol=1e-5)

    def test_tiny_mlp_head_count(self):
        model = init_model(tiny_model_config(), seed=0)
        assert model.num_heads == 2  # one student + the teacher

    def test_unsupported_backbone(self):
        with pytest.raises(ConfigurationError, match="backbone"):
            ModelConfig(backbone="vgg")

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(backbone="tiny_mlp", num_student_exits=2)
        with pytest.raises(ConfigurationError):
            ModelConfig(num_prototypes=1)
        with pytest.raises(ConfigurationError):
            ModelConfig(temperature=0.0)


class TestForward:
    def test_embeddings_unit_norm(self):
        model = init_model(tiny_model_config(), seed=0)
        x = torch.randn(7, 16)
        out = model(x)
        for z in out.all_embeddings:
            assert torch.allclose(z.norm(dim=1), torch.ones(7), atol=1e-5)

    def test_student_count_and_shapes(self):
        model = init_model(tiny_model_config(), seed=0)
        out = model(torch.randn(4, 16))
        assert len(out.student_features) == 1
        assert out.student_features[0].shape == out.teacher_features.shape

    def test_resnet_shapes(self):
        model = init_model(ModelConfig(backbone="resnet18", num_prototypes=8, feature_dim=16), seed=0)
        out = model(torch.randn(2, 3, 32, 32))
        assert out.teacher_features.shape == (2, 512, 4, 4)
        assert len(out.student_features) == 3
        for f in out.student_features:
            assert f.shape == (2, 512, 4, 4)
        assert out.teacher_pooled.shape == (2, 512)
        for q in out.all_logits:
            assert q.shape == (2, 8)

    def test_prototype_match_gives_logit_two(self):
        model = init_model(tiny_model_config(), seed=0)
        bank = model.banks[0]
        z = torch.zeros(1, 16)
        z[0] = bank.weight[3].detach()
        logits = bank(z)
        assert logits[0, 3].item() == pytest.approx(2.0, abs=1e-5)
        assert logits.argmax().item() == 3

    def test_normalize_scale_invariance(self):
        v = torch.randn(5, 16, dtype=torch.float64)
        assert torch.allclose(l2_normalize(2.0 * v), l2_normalize(v), atol=1e-12)

    def test_input_shape_error(self):
        model = init_model(tiny_model_config(), seed=0)
        with pytest.raises(ShapeError, match="tiny_mlp"):
            model(torch.randn(2, 5))

    def test_teacher_ignores_student_branch(self):
        model = init_model(tiny_model_config(), seed=0)
        x = torch.randn(5, 16)
        before = model(x).teacher_logits.detach().clone()
        with torch.no_grad():
            for p in model.heads[0].parameters():
                p.zero_()
            model.banks[0].weight.zero_()
        after = model(x).teacher_logits.detach()
        assert torch.equal(before, after)


class TestHeadProbabilities:
    def test_uniform(self):
        probs = head_probabilities(np.zeros(60))
        assert np.allclose(probs, 1 / 60)
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_two_term_oracle(self):
        probs = head_probabilities(np.array([2.0, 0.0]))
        assert probs[0] == pytest.approx(0.8807970779778823, abs=1e-6)
        assert probs[1] == pytest.approx(0.11920292202211755, abs=1e-6)

    @settings(max_examples=60, deadline=None)
    @given(logits=finite_logits, shift=st.floats(-50, 50, allow_nan=False))
    def test_shift_invariance(self, logits, shift):
        base = head_probabilities(np.array(logits))
        shifted = head_probabilities(np.array(logits) + shift)
        assert np.allclose(base, shifted, atol=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(logits=finite_logits)
    def test_valid_distribution(self, logits):
        probs = head_probabilities(np.array(logits))
        assert (probs > 0).all() and (probs < 1).all() or len(logits) == 1
        assert probs.sum() == pytest.approx(1.0, abs=1e-9)

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            head_probabilities(np.array([1.0, np.nan]))
        with pytest.raises(NumericError):
            head_probabilities(torch.tensor([1.0, float("inf")]))

    def test_torch_matches_numpy(self):
        logits = np.array([0.3, -1.2, 2.5])
        a = head_probabilities(logits)
        b = head_probabilities(torch.tensor(logits)).numpy()
        assert np.allclose(a, b, atol=1e-12)
