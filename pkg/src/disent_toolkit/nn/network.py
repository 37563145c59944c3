"""Declarative encoder/decoder construction from a ModelSpec."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence

import numpy as np

from disent_toolkit.autodiff import Tensor, as_tensor, concat, conv2d, conv_transpose2d, no_grad
from disent_toolkit.autodiff.conv import conv_output_extent, deconv_output_extent
from disent_toolkit.errors import ConfigError, ShapeError
from disent_toolkit.models.schemas import LayerSpec, ModelSpec
from disent_toolkit.nn.prob_ops import LatentPosterior, clamp_logvar

logger = logging.getLogger(__name__)

Shape = tuple[int, ...]

LEAKY_SLOPE = 0.2


def _layer_label(prefix: str, index: int, layer: LayerSpec) -> str:
    return f"{prefix}.{index} ({layer.kind})"


def infer_layer_shape(layer: LayerSpec, in_shape: Shape, label: str) -> Shape:
    """Per-sample output shape of one layer, or ShapeError naming ``label``."""
    if layer.kind in ("conv", "deconv"):
        if len(in_shape) != 3:
            raise ShapeError(f"{label}: expects a (C, H, W) input, got {in_shape}")
        if layer.out_channels is None:
            raise ShapeError(f"{label}: out_channels is required")
        extent = conv_output_extent if layer.kind == "conv" else deconv_output_extent
        height = extent(in_shape[1], layer.kernel, layer.stride, layer.padding)
        width = extent(in_shape[2], layer.kernel, layer.stride, layer.padding)
        if height < 1 or width < 1:
            raise ShapeError(f"{label}: non-positive output extent {height}x{width} from {in_shape}")
        return (layer.out_channels, height, width)
    if layer.kind == "dense":
        if len(in_shape) != 1:
            raise ShapeError(f"{label}: expects a vector input, got {in_shape}; add a flatten layer")
        if layer.units is None:
            raise ShapeError(f"{label}: units is required")
        return (layer.units,)
    if layer.kind == "flatten":
        return (math.prod(in_shape),)
    if layer.kind == "reshape":
        if not layer.shape:
            raise ShapeError(f"{label}: shape is required")
        if math.prod(layer.shape) != math.prod(in_shape):
            raise ShapeError(f"{label}: cannot reshape {in_shape} into {tuple(layer.shape)}")
        return tuple(layer.shape)
    return in_shape


def infer_shapes(prefix: str, layers: Sequence[LayerSpec], in_shape: Shape) -> list[Shape]:
    """Shapes after each layer, starting with ``in_shape``."""
    shapes = [tuple(in_shape)]
    for index, layer in enumerate(layers):
        shapes.append(infer_layer_shape(layer, shapes[-1], _layer_label(prefix, index, layer)))
    return shapes


def encoder_input_shape(spec: ModelSpec) -> Shape:
    channels, height, width = spec.image_shape
    return (channels + spec.condition_dim, height, width)


def check_shapes(spec: ModelSpec) -> tuple[list[Shape], list[Shape]]:
    """Validate that encoder and decoder compose to the latent heads and the image.

    Raises:
        ShapeError: Naming the first inconsistent layer.
    """
    encoder = infer_shapes("encoder", spec.encoder_layers, encoder_input_shape(spec))
    head = (2 * spec.latent_dim,)
    if encoder[-1] != head:
        last = len(spec.encoder_layers) - 1
        label = _layer_label("encoder", last, spec.encoder_layers[last])
        raise ShapeError(f"{label}: encoder produces {encoder[-1]}, expected {head} (mean and log-variance)")

    decoder = infer_shapes("decoder", spec.decoder_layers, (spec.latent_dim + spec.condition_dim,))
    if decoder[-1] != tuple(spec.image_shape):
        last = len(spec.decoder_layers) - 1
        label = _layer_label("decoder", last, spec.decoder_layers[last])
        raise ShapeError(f"{label}: decoder produces {decoder[-1]}, expected {tuple(spec.image_shape)}")
    return encoder, decoder


def apply_activation(x: Tensor, activation: str, negative_slope: float = LEAKY_SLOPE) -> Tensor:
    if activation == "relu":
        return x.relu()
    if activation == "sigmoid":
        return x.sigmoid()
    if activation == "tanh":
        return x.tanh()
    if activation == "leaky_relu":
        return x.leaky_relu(negative_slope)
    return x


def _kaiming_uniform(rng: np.random.Generator, shape: Shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Stack:
    """A parameterized layer program with parameters named ``prefix.index.weight``."""

    def __init__(
        self,
        prefix: str,
        layers: Sequence[LayerSpec],
        in_shape: Shape,
        rng: np.random.Generator,
    ) -> None:
        self.prefix = prefix
        self.layers = list(layers)
        self.shapes = infer_shapes(prefix, self.layers, in_shape)
        self.params: dict[str, Tensor] = {}
        for index, layer in enumerate(self.layers):
            self._allocate(index, layer, self.shapes[index], rng)

    def _allocate(self, index: int, layer: LayerSpec, in_shape: Shape, rng: np.random.Generator) -> None:
        k = layer.kernel
        if layer.kind == "conv":
            shape = (layer.out_channels, in_shape[0], k, k)
            weight = _kaiming_uniform(rng, shape, in_shape[0] * k * k)
            bias = np.zeros(layer.out_channels)
        elif layer.kind == "deconv":
            shape = (in_shape[0], layer.out_channels, k, k)
            weight = _kaiming_uniform(rng, shape, layer.out_channels * k * k)
            bias = np.zeros(layer.out_channels)
        elif layer.kind == "dense":
            shape = (in_shape[0], layer.units)
            weight = _kaiming_uniform(rng, shape, in_shape[0])
            bias = np.zeros(layer.units)
        else:
            return
        path = f"{self.prefix}.{index}"
        self.params[f"{path}.weight"] = Tensor(weight, requires_grad=True, name=f"{path}.weight")
        self.params[f"{path}.bias"] = Tensor(bias, requires_grad=True, name=f"{path}.bias")

    @property
    def in_shape(self) -> Shape:
        return self.shapes[0]

    @property
    def out_shape(self) -> Shape:
        return self.shapes[-1]

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    def last_layer_path(self) -> str | None:
        """Path of the last parameterized layer, e.g. ``encoder.6``."""
        paths = [name.rsplit(".", 1)[0] for name in self.params]
        return paths[-1] if paths else None

    def __call__(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        if tuple(x.shape[1:]) != self.in_shape:
            raise ShapeError(f"{self.prefix}: expected per-sample shape {self.in_shape}, got {x.shape[1:]}")
        batch = x.shape[0]
        for index, layer in enumerate(self.layers):
            path = f"{self.prefix}.{index}"
            if layer.kind == "conv":
                x = conv2d(
                    x, self.params[f"{path}.weight"], self.params[f"{path}.bias"],
                    stride=layer.stride, padding=layer.padding, name=path,
                )
            elif layer.kind == "deconv":
                x = conv_transpose2d(
                    x, self.params[f"{path}.weight"], self.params[f"{path}.bias"],
                    stride=layer.stride, padding=layer.padding, name=path,
                )
            elif layer.kind == "dense":
                x = x @ self.params[f"{path}.weight"] + self.params[f"{path}.bias"]
            elif layer.kind == "flatten":
                x = x.reshape(batch, -1)
            elif layer.kind == "reshape":
                x = x.reshape((batch, *layer.shape))
            x = apply_activation(x, layer.activation, layer.negative_slope)
        return x


def mlp_layers(
    hidden: Sequence[int], out_units: int, activation: str = "relu", negative_slope: float = LEAKY_SLOPE
) -> list[LayerSpec]:
    """Dense layers ``hidden`` with ``activation`` followed by a linear output."""
    layers = [
        LayerSpec(kind="dense", units=units, activation=activation, negative_slope=negative_slope) for units in hidden
    ]
    layers.append(LayerSpec(kind="dense", units=out_units))
    return layers


class Network:
    """Instantiated encoder/decoder pair."""

    def __init__(self, spec: ModelSpec, encoder: Stack, decoder: Stack) -> None:
        self.spec = spec
        self.encoder = encoder
        self.decoder = decoder

    @property
    def latent_dim(self) -> int:
        return self.spec.latent_dim

    @property
    def conditional(self) -> bool:
        return self.spec.condition_dim > 0

    def parameters(self) -> dict[str, Tensor]:
        return {**self.encoder.parameters(), **self.decoder.parameters()}

    def _condition(self, condition: np.ndarray | Tensor | None, batch: int) -> np.ndarray | None:
        if not self.conditional:
            return None
        if condition is None:
            raise ConfigError(f"conditional network (condition_dim={self.spec.condition_dim}) needs a condition")
        values = condition.data if isinstance(condition, Tensor) else np.asarray(condition, dtype=np.float64)
        if values.shape != (batch, self.spec.condition_dim):
            raise ShapeError(f"condition shape {values.shape} != {(batch, self.spec.condition_dim)}")
        return values

    def encode(self, x: Tensor | np.ndarray, condition: np.ndarray | Tensor | None = None) -> LatentPosterior:
        x = as_tensor(x)
        if tuple(x.shape[1:]) != tuple(self.spec.image_shape):
            raise ShapeError(f"encode: image shape {x.shape[1:]} != {tuple(self.spec.image_shape)}")
        cond = self._condition(condition, x.shape[0])
        if cond is not None:
            planes = np.broadcast_to(cond[:, :, None, None], (x.shape[0], cond.shape[1], *x.shape[2:]))
            x = concat([x, Tensor(planes)], axis=1)
        head = self.encoder(x)
        d = self.spec.latent_dim
        return LatentPosterior(mu=head[:, :d], logvar=clamp_logvar(head[:, d:]))

    def decode(self, z: Tensor | np.ndarray, condition: np.ndarray | Tensor | None = None) -> Tensor:
        z = as_tensor(z)
        if z.ndim != 2 or z.shape[1] != self.spec.latent_dim:
            raise ShapeError(f"decode: expected (B, {self.spec.latent_dim}) codes, got {z.shape}")
        cond = self._condition(condition, z.shape[0])
        if cond is not None:
            z = concat([z, Tensor(cond)], axis=1)
        return self.decoder(z)

    def posterior_mean(
        self,
        images: np.ndarray,
        condition: np.ndarray | None = None,
        batch_size: int = 256,
    ) -> np.ndarray:
        """Posterior means for ``images`` without recording gradients."""
        chunks = []
        with no_grad():
            for start in range(0, len(images), batch_size):
                stop = start + batch_size
                cond = None if condition is None else condition[start:stop]
                chunks.append(self.encode(images[start:stop], cond).mu.data.copy())
        if not chunks:
            return np.zeros((0, self.latent_dim))
        return np.concatenate(chunks, axis=0)


def build_model(spec: ModelSpec, seed: int) -> Network:
    """Shape-check ``spec`` and allocate a deterministically initialized network."""
    encoder_shapes, decoder_shapes = check_shapes(spec)
    rng = np.random.default_rng(seed)
    encoder = Stack("encoder", spec.encoder_layers, encoder_shapes[0], rng)
    decoder = Stack("decoder", spec.decoder_layers, decoder_shapes[0], rng)
    network = Network(spec, encoder, decoder)
    logger.debug(
        "Built model: latent_dim=%d, %d parameter tensors, %d scalars",
        spec.latent_dim,
        len(network.parameters()),
        sum(p.size for p in network.parameters().values()),
    )
    return network


# -- named profiles -------------------------------------------------------------


def _conv(out_channels: int, kernel: int, stride: int, padding: int, activation: str = "relu") -> LayerSpec:
    return LayerSpec(
        kind="conv", out_channels=out_channels, kernel=kernel, stride=stride, padding=padding, activation=activation
    )


def _deconv(out_channels: int, activation: str = "relu") -> LayerSpec:
    return LayerSpec(kind="deconv", out_channels=out_channels, kernel=4, stride=2, padding=1, activation=activation)


def _dense(units: int, activation: str = "none") -> LayerSpec:
    return LayerSpec(kind="dense", units=units, activation=activation)


def shapes5_conv(latent_dim: int, condition_dim: int = 0) -> ModelSpec:
    """Four stride-2 convs down to 2x2 and a mirrored deconv decoder for 1x32x32."""
    return ModelSpec(
        encoder_layers=[
            _conv(32, 4, 2, 1),
            _conv(32, 4, 2, 1),
            _conv(64, 4, 2, 1),
            _conv(64, 4, 2, 1),
            LayerSpec(kind="flatten"),
            _dense(128, "relu"),
            _dense(2 * latent_dim),
        ],
        decoder_layers=[
            _dense(128, "relu"),
            _dense(256, "relu"),
            LayerSpec(kind="reshape", shape=[64, 2, 2]),
            _deconv(64),
            _deconv(32),
            _deconv(32),
            _deconv(1, "sigmoid"),
        ],
        latent_dim=latent_dim,
        image_shape=(1, 32, 32),
        condition_dim=condition_dim,
    )


def shapes5_dense(latent_dim: int, condition_dim: int = 0) -> ModelSpec:
    """Small MLP encoder/decoder for 1x32x32."""
    return ModelSpec(
        encoder_layers=[
            LayerSpec(kind="flatten"),
            _dense(256, "relu"),
            _dense(128, "relu"),
            _dense(2 * latent_dim),
        ],
        decoder_layers=[
            _dense(128, "relu"),
            _dense(256, "relu"),
            _dense(1024, "sigmoid"),
            LayerSpec(kind="reshape", shape=[1, 32, 32]),
        ],
        latent_dim=latent_dim,
        image_shape=(1, 32, 32),
        condition_dim=condition_dim,
    )


def paper_conv64(latent_dim: int = 20, condition_dim: int = 0) -> ModelSpec:
    """Five 3x3 stride-2 convs (32 -> 256) on 3x64x64; 1x1 conv plus six 4x4 deconvs back."""
    return ModelSpec(
        encoder_layers=[
            _conv(32, 3, 2, 1),
            _conv(64, 3, 2, 1),
            _conv(128, 3, 2, 1),
            _conv(256, 3, 2, 1),
            _conv(256, 3, 2, 1),
            LayerSpec(kind="flatten"),
            _dense(2 * latent_dim),
        ],
        decoder_layers=[
            LayerSpec(kind="reshape", shape=[latent_dim + condition_dim, 1, 1]),
            _conv(256, 1, 1, 0),
            _deconv(256),
            _deconv(128),
            _deconv(128),
            _deconv(64),
            _deconv(32),
            _deconv(3, "sigmoid"),
        ],
        latent_dim=latent_dim,
        image_shape=(3, 64, 64),
        condition_dim=condition_dim,
    )


MODEL_PROFILES = {
    "shapes5_conv": shapes5_conv,
    "shapes5_dense": shapes5_dense,
    "paper_conv64": paper_conv64,
}


def model_profile(name: str, latent_dim: int, condition_dim: int = 0) -> ModelSpec:
    """Look up a named architecture profile.

    Raises:
        ConfigError: If the profile is unknown.
    """
    try:
        factory = MODEL_PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown model profile {name!r}; valid profiles: {', '.join(MODEL_PROFILES)}") from None
    return factory(latent_dim, condition_dim)
