"""Tests for declarative model construction."""

import numpy as np
import pytest

from disent_toolkit.autodiff import Tensor, check_gradients
from disent_toolkit.errors import ConfigError, ShapeError
from disent_toolkit.models.schemas import LayerSpec, ModelSpec
from disent_toolkit.nn import Stack, build_model, check_shapes, mlp_layers, model_profile


def dense(units: int, activation: str = "none") -> LayerSpec:
    return LayerSpec(kind="dense", units=units, activation=activation)


class TestShapeChecking:
    """Shape inference over layer programs."""

    @pytest.mark.parametrize("name", ["shapes5_conv", "shapes5_dense", "paper_conv64"])
    def test_profiles_are_consistent(self, name):
        encoder, decoder = check_shapes(model_profile(name, 6))
        assert encoder[-1] == (12,)
        assert decoder[-1] == tuple(model_profile(name, 6).image_shape)

    def test_paper_conv64_geometry(self):
        encoder, decoder = check_shapes(model_profile("paper_conv64", 20))
        assert encoder[5] == (256, 2, 2)
        assert decoder[2] == (256, 1, 1)
        assert decoder[-1] == (3, 64, 64)

    def test_conditional_profile_widens_inputs(self):
        encoder, decoder = check_shapes(model_profile("shapes5_conv", 4, condition_dim=3))
        assert encoder[0] == (4, 32, 32)
        assert decoder[0] == (7,)

    def test_dense_after_conv_names_layer(self):
        spec = ModelSpec(
            encoder_layers=[LayerSpec(kind="conv", out_channels=4, kernel=4, stride=2, padding=1), dense(4)],
            decoder_layers=[dense(1024, "sigmoid"), LayerSpec(kind="reshape", shape=[1, 32, 32])],
            latent_dim=2,
            image_shape=(1, 32, 32),
        )
        with pytest.raises(ShapeError, match=r"encoder\.1 \(dense\)"):
            check_shapes(spec)

    def test_wrong_decoder_output_names_last_layer(self):
        spec = ModelSpec(
            encoder_layers=[LayerSpec(kind="flatten"), dense(4)],
            decoder_layers=[dense(512, "sigmoid"), LayerSpec(kind="reshape", shape=[2, 16, 16])],
            latent_dim=2,
            image_shape=(1, 32, 32),
        )
        with pytest.raises(ShapeError, match=r"decoder\.1 \(reshape\)"):
            check_shapes(spec)

    def test_encoder_head_must_be_twice_latent(self):
        spec = ModelSpec(
            encoder_layers=[LayerSpec(kind="flatten"), dense(3)],
            decoder_layers=[dense(1024), LayerSpec(kind="reshape", shape=[1, 32, 32])],
            latent_dim=2,
            image_shape=(1, 32, 32),
        )
        with pytest.raises(ShapeError, match="mean and log-variance"):
            check_shapes(spec)

    def test_unknown_profile(self):
        with pytest.raises(ConfigError, match="unknown model profile"):
            model_profile("resnet", 4)


class TestStack:
    """Parameter naming and gradients through every layer kind."""

    def make_stack(self, rng: np.random.Generator) -> Stack:
        layers = [
            LayerSpec(kind="conv", out_channels=2, kernel=3, stride=1, padding=1, activation="tanh"),
            LayerSpec(kind="deconv", out_channels=1, kernel=4, stride=2, padding=1, activation="sigmoid"),
            LayerSpec(kind="flatten"),
            dense(5, "tanh"),
            LayerSpec(kind="reshape", shape=[5, 1, 1]),
        ]
        return Stack("block", layers, (1, 4, 4), rng)

    def test_parameter_names(self, rng):
        stack = self.make_stack(rng)
        assert sorted(stack.params) == [
            "block.0.bias",
            "block.0.weight",
            "block.1.bias",
            "block.1.weight",
            "block.3.bias",
            "block.3.weight",
        ]
        assert stack.params["block.1.weight"].shape == (2, 1, 4, 4)
        assert stack.out_shape == (5, 1, 1)
        assert stack.last_layer_path() == "block.3"

    def test_gradients_through_all_layer_kinds(self, rng):
        stack = self.make_stack(rng)
        x = Tensor(rng.normal(size=(3, 1, 4, 4)), requires_grad=True)
        weights = rng.normal(size=(3, 5, 1, 1))
        params = [x, *stack.parameters().values()]
        error = check_gradients(lambda: (stack(x) * weights).sum(), params, samples=40)
        assert error < 1e-5

    def test_wrong_input_shape(self, rng):
        stack = self.make_stack(rng)
        with pytest.raises(ShapeError, match="block"):
            stack(Tensor(np.zeros((1, 1, 5, 5))))

    @pytest.mark.parametrize("slope", [0.0, 0.5])
    def test_leaky_relu_slope_is_applied(self, rng, slope):
        layers = mlp_layers([3], 1, "leaky_relu", negative_slope=slope)
        assert layers[0].negative_slope == slope
        stack = Stack("mlp", layers, (1,), rng)
        stack.params["mlp.0.weight"].data[...] = -1.0
        stack.params["mlp.1.weight"].data[...] = 1.0
        assert stack(Tensor([[2.0]])).item() == pytest.approx(-6.0 * slope)


class TestNetwork:
    """Encoder/decoder pairs."""

    def test_encode_decode_shapes(self, dataset):
        network = build_model(model_profile("shapes5_dense", 3), seed=0)
        images = dataset.images[:4]
        posterior = network.encode(images)
        assert posterior.mu.shape == (4, 3)
        assert posterior.logvar.shape == (4, 3)
        recon = network.decode(posterior.mu)
        assert recon.shape == (4, 1, 32, 32)
        assert np.all((recon.data > 0) & (recon.data < 1))

    def test_same_seed_same_weights(self):
        first = build_model(model_profile("shapes5_dense", 3), seed=7)
        second = build_model(model_profile("shapes5_dense", 3), seed=7)
        other = build_model(model_profile("shapes5_dense", 3), seed=8)
        for name, tensor in first.parameters().items():
            np.testing.assert_array_equal(tensor.data, second.parameters()[name].data)
        assert not np.array_equal(first.parameters()["encoder.1.weight"].data, other.parameters()["encoder.1.weight"].data)

    def test_posterior_mean_is_chunked_consistently(self, dataset):
        network = build_model(model_profile("shapes5_dense", 2), seed=0)
        images = dataset.images[:10]
        np.testing.assert_allclose(
            network.posterior_mean(images, batch_size=3),
            network.posterior_mean(images, batch_size=10),
        )

    def test_conditional_network_requires_condition(self, dataset):
        network = build_model(model_profile("shapes5_dense", 2, condition_dim=3), seed=0)
        with pytest.raises(ConfigError, match="needs a condition"):
            network.encode(dataset.images[:2])
        condition = dataset.one_hot(dataset.all_factors()[:2], ["shape"])
        assert network.encode(dataset.images[:2], condition).mu.shape == (2, 2)
        assert network.decode(np.zeros((2, 2)), condition).shape == (2, 1, 32, 32)

    def test_decode_rejects_wrong_width(self):
        network = build_model(model_profile("shapes5_dense", 2), seed=0)
        with pytest.raises(ShapeError, match="decode"):
            network.decode(np.zeros((2, 3)))
