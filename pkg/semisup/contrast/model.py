"""
The representation network (an MLP encoder) and the classification head.

The encoder alternates affine and relu layers and ends with an affine layer,
so features span all of R^p. The head is affine followed by a row softmax.
Both exist as graph builders over a `Tape` (for training) and as plain
functions on arrays (for evaluation and export).
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from semisup.contrast.diffcore import Tape
from semisup.contrast.exc import ConfigurationError, ShapeError
from semisup.contrast.numerics import Rng, Tensor, as_tensor

CLASSIFIER_TEMPERATURE = 1.0


@dataclass(frozen=True)
class ModelDims:
    input_dim: int
    feature_dim: int
    classes: int
    hidden: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name, value in (
            ("input_dim", self.input_dim),
            ("feature_dim", self.feature_dim),
            ("classes", self.classes),
        ):
            if value < 1:
                raise ConfigurationError("{} must be >= 1, got {}".format(name, value))
        if any(h < 1 for h in self.hidden):
            raise ConfigurationError("hidden widths must be >= 1, got {}".format(self.hidden))

    @property
    def widths(self) -> Tuple[int, ...]:
        """Encoder layer widths from input to feature."""
        return (self.input_dim,) + self.hidden + (self.feature_dim,)


Affine = Tuple[Tensor, Tensor]


@dataclass(frozen=True)
class ModelParams:
    dims: ModelDims
    encoder_layers: Tuple[Affine, ...]
    head: Affine

    def __post_init__(self):
        widths = self.dims.widths
        if len(self.encoder_layers) != len(widths) - 1:
            raise ShapeError(
                "expected {} encoder layers, got {}".format(
                    len(widths) - 1, len(self.encoder_layers)
                )
            )
        expected = [
            ((d_in, d_out), (d_out,)) for d_in, d_out in zip(widths, widths[1:])
        ] + [((self.dims.feature_dim, self.dims.classes), (self.dims.classes,))]
        for (name, array), shape in zip(
            self.named_arrays(), [s for pair in expected for s in pair]
        ):
            if array.shape != shape:
                raise ShapeError("{} has shape {}, expected {}".format(name, array.shape, shape))

    def named_arrays(self) -> List[Tuple[str, Tensor]]:
        """Every parameter array in declaration order."""
        named = []
        for i, (w, b) in enumerate(self.encoder_layers):
            named.append(("encoder.{}.weight".format(i), w))
            named.append(("encoder.{}.bias".format(i), b))
        named.append(("head.weight", self.head[0]))
        named.append(("head.bias", self.head[1]))
        return named

    def replace(self, arrays: Dict[str, Tensor]) -> "ModelParams":
        """A copy with the named arrays swapped in; other arrays are shared."""
        current = dict(self.named_arrays())
        unknown = set(arrays) - set(current)
        if unknown:
            raise KeyError("unknown parameters: {}".format(sorted(unknown)))
        current.update(arrays)
        return ModelParams.from_named(self.dims, current)

    @classmethod
    def from_named(cls, dims: ModelDims, arrays: Dict[str, Tensor]) -> "ModelParams":
        layers = tuple(
            (
                as_tensor(arrays["encoder.{}.weight".format(i)]),
                as_tensor(arrays["encoder.{}.bias".format(i)]),
            )
            for i in range(len(dims.widths) - 1)
        )
        return cls(
            dims=dims,
            encoder_layers=layers,
            head=(as_tensor(arrays["head.weight"]), as_tensor(arrays["head.bias"])),
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for _, a in self.named_arrays())


def _he_layer(rng: Rng, d_in: int, d_out: int) -> Affine:
    w = rng.generator.normal(0.0, math.sqrt(2.0 / d_in), size=(d_in, d_out))
    return w, np.zeros(d_out)


def init_params(rng: Rng, dims: ModelDims) -> ModelParams:
    """
    He-initialized weights (std sqrt(2 / d_in)) and zero biases. Each layer
    draws from its own derived stream.
    """
    widths = dims.widths
    layers = tuple(
        _he_layer(rng.derive("encoder", i), d_in, d_out)
        for i, (d_in, d_out) in enumerate(zip(widths, widths[1:]))
    )
    head = _he_layer(rng.derive("head"), dims.feature_dim, dims.classes)
    return ModelParams(dims=dims, encoder_layers=layers, head=head)


def flatten_samples(x: Tensor) -> Tensor:
    """n x h x w x ch images (or n x d rows) as n x d rows."""
    x = as_tensor(x)
    return x.reshape(x.shape[0], -1) if x.ndim != 2 else x


@dataclass(frozen=True)
class ParamNodes:
    encoder: Tuple[Tuple[int, int], ...]
    head: Tuple[int, int]
    by_name: Dict[str, int]


def bind(
    tape: Tape,
    params: ModelParams,
    trainable: bool = True,
    recorded: Optional[Dict[str, int]] = None,
) -> ParamNodes:
    """
    Record every parameter array on the tape, as leaves when trainable.

    :param recorded: Nodes already on the tape to use for some parameters
        instead of recording them again.
    """
    recorded = recorded or {}
    record = tape.leaf if trainable else tape.constant
    by_name = {
        name: recorded[name] if name in recorded else record(array, name=name)
        for name, array in params.named_arrays()
    }
    encoder = tuple(
        (by_name["encoder.{}.weight".format(i)], by_name["encoder.{}.bias".format(i)])
        for i in range(len(params.encoder_layers))
    )
    return ParamNodes(
        encoder=encoder, head=(by_name["head.weight"], by_name["head.bias"]), by_name=by_name
    )


def _affine(tape: Tape, x: int, layer: Tuple[int, int]) -> int:
    w, b = layer
    return tape.add(tape.matmul(x, w), b)


def encode_graph(tape: Tape, nodes: ParamNodes, x: int) -> int:
    expected = tape.value(nodes.encoder[0][0]).shape[0]
    width = tape.value(x).shape[1]
    if width != expected:
        raise ShapeError("encode: input width {} does not match {}".format(width, expected))
    h = x
    last = len(nodes.encoder) - 1
    for i, layer in enumerate(nodes.encoder):
        h = _affine(tape, h, layer)
        if i < last:
            h = tape.relu(h)
    return h


def classify_graph(
    tape: Tape, nodes: ParamNodes, z: int, temperature: float = CLASSIFIER_TEMPERATURE
) -> int:
    expected = tape.value(nodes.head[0]).shape[0]
    width = tape.value(z).shape[1]
    if width != expected:
        raise ShapeError("classify: feature width {} does not match {}".format(width, expected))
    return tape.row_softmax(_affine(tape, z, nodes.head), temperature)


def encode(params: ModelParams, x: Tensor) -> Tensor:
    tape = Tape()
    nodes = bind(tape, params, trainable=False)
    return tape.value(encode_graph(tape, nodes, tape.constant(flatten_samples(x))))


def classify(
    params: ModelParams, z: Tensor, temperature: float = CLASSIFIER_TEMPERATURE
) -> Tensor:
    tape = Tape()
    nodes = bind(tape, params, trainable=False)
    return tape.value(classify_graph(tape, nodes, tape.constant(as_tensor(z)), temperature))


def predict(params: ModelParams, x: Tensor) -> np.ndarray:
    """Arg-max class per sample; ties go to the lowest class index."""
    return np.argmax(classify(params, encode(params, x)), axis=1)
