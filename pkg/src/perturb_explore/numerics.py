from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Literal

import numpy as np

from src.perturb_explore.errors import ConfigurationError, NumericalError

Activation = Literal["tanh", "relu"]

CHECKPOINT_MAGIC = b"PXNN"
CHECKPOINT_VERSION = 1
_ACTIVATION_CODES: dict[str, int] = {"tanh": 0, "relu": 1}


@dataclass
class MlpNetwork:
    """
    Dense feed-forward network with an activation on every hidden layer and a
    linear output layer.

    Weights are stored as ``(fan_in, fan_out)`` matrices so a batch of inputs of
    shape ``(batch, fan_in)`` is mapped with ``inputs @ weights + biases``.
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: Activation = "tanh"

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or any(n <= 0 for n in self.layer_sizes):
            raise ConfigurationError(
                "layer_sizes must hold at least two positive sizes, "
                f"got {self.layer_sizes}"
            )
        if self.activation not in _ACTIVATION_CODES:
            raise ConfigurationError(f"Unknown activation {self.activation!r}")
        n_layers = len(self.layer_sizes) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ConfigurationError(
                f"Expected {n_layers} weight and bias arrays "
                f"for sizes {self.layer_sizes}"
            )
        for i, (fan_in, fan_out) in enumerate(
            zip(self.layer_sizes[:-1], self.layer_sizes[1:])
        ):
            if self.weights[i].shape != (fan_in, fan_out):
                raise ConfigurationError(
                    f"Layer {i} weights have shape {self.weights[i].shape}, "
                    f"expected {(fan_in, fan_out)}"
                )
            if self.biases[i].shape != (fan_out,):
                raise ConfigurationError(
                    f"Layer {i} biases have shape {self.biases[i].shape}, "
                    f"expected {(fan_out,)}"
                )

    @classmethod
    def initialize(
        cls,
        layer_sizes: list[int],
        rng: np.random.Generator,
        activation: Activation = "tanh",
    ) -> "MlpNetwork":
        """
        Glorot-uniform weights, zero biases.

        Parameters
        ----------
        layer_sizes : list[int]
            Input size, hidden sizes, output size.
        rng : np.random.Generator
            Source of the initial weights. Same seed, same network.
        activation : {"tanh", "relu"}
            Hidden layer activation.

        Returns
        -------
        MlpNetwork
        """
        sizes = [int(n) for n in layer_sizes]
        weights = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases = [np.zeros(fan_out) for fan_out in sizes[1:]]
        return cls(
            layer_sizes=sizes, weights=weights, biases=biases, activation=activation
        )

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        """The live parameter arrays, ordered ``[W0, b0, W1, b1, ...]``."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def with_parameters(self, params: list[np.ndarray]) -> "MlpNetwork":
        """A new network with the same shape holding ``params`` (copied)."""
        return MlpNetwork(
            layer_sizes=list(self.layer_sizes),
            weights=[np.array(p, dtype=np.float64) for p in params[0::2]],
            biases=[np.array(p, dtype=np.float64) for p in params[1::2]],
            activation=self.activation,
        )

    def copy(self) -> "MlpNetwork":
        return self.with_parameters(self.parameters())

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


@dataclass
class ForwardCache:
    """Everything `backward` needs to reproduce the chain rule of one `forward`."""

    layer_inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    batched: bool


def _activate(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activation_derivative(z: np.ndarray, activation: Activation) -> np.ndarray:
    if activation == "tanh":
        return 1.0 - np.tanh(z) ** 2
    return (z > 0.0).astype(np.float64)


def forward(net: MlpNetwork, inputs: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """
    Evaluate the network on a vector or on a batch of row vectors.

    Parameters
    ----------
    net : MlpNetwork
        The network to evaluate.
    inputs : np.ndarray
        Shape ``(input_size,)`` or ``(batch, input_size)``.

    Returns
    -------
    tuple[np.ndarray, ForwardCache]
        The output (same leading shape as ``inputs``) and the activation record.
    """
    x = np.asarray(inputs, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] != net.input_size:
        raise ConfigurationError(
            f"Input of shape {x.shape} does not match input size {net.input_size}"
        )
    h = np.atleast_2d(x)
    layer_inputs: list[np.ndarray] = []
    pre_activations: list[np.ndarray] = []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        layer_inputs.append(h)
        z = h @ w + b
        if i < last:
            pre_activations.append(z)
            h = _activate(z, net.activation)
        else:
            h = z
    output = h if batched else h[0]
    return output, ForwardCache(layer_inputs, pre_activations, batched)


def backward(
    net: MlpNetwork, cache: ForwardCache, output_gradient: np.ndarray
) -> list[np.ndarray]:
    """
    Back-propagate ``dL/d(output)`` through the network.

    Parameters
    ----------
    net : MlpNetwork
        The network the cache was produced with.
    cache : ForwardCache
        Result of the matching `forward` call.
    output_gradient : np.ndarray
        Gradient of the scalar loss with respect to the forward output; same
        shape as that output.

    Returns
    -------
    list[np.ndarray]
        Gradients ordered like `MlpNetwork.parameters`, summed over the batch.
    """
    g = np.atleast_2d(np.asarray(output_gradient, dtype=np.float64))
    expected = (cache.layer_inputs[0].shape[0], net.output_size)
    if g.shape != expected:
        raise ConfigurationError(
            f"Output gradient of shape {g.shape} does not match output {expected}"
        )
    n_layers = len(net.weights)
    gradients: list[np.ndarray] = [np.empty(0)] * (2 * n_layers)
    for i in reversed(range(n_layers)):
        gradients[2 * i] = cache.layer_inputs[i].T @ g
        gradients[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = (g @ net.weights[i].T) * _activation_derivative(
                cache.pre_activations[i - 1], net.activation
            )
    return gradients


def squared_error(
    net: MlpNetwork, inputs: np.ndarray, targets: np.ndarray
) -> tuple[float, list[np.ndarray]]:
    """``sum ||net(x) - y||^2`` over the batch and its parameter gradients."""
    output, cache = forward(net, inputs)
    residual = output - np.asarray(targets, dtype=np.float64).reshape(output.shape)
    return float((residual**2).sum()), backward(net, cache, 2.0 * residual)


def softmax(logits: np.ndarray) -> np.ndarray:
    """
    Softmax over the last axis, computed on max-shifted logits.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise ConfigurationError("softmax of an empty vector is undefined")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0 or z.shape[-1] == 0:
        raise ConfigurationError("log_softmax of an empty vector is undefined")
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_size: float
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_num: float = 1e-8

    @classmethod
    def for_parameters(cls, params: list[np.ndarray], step_size: float) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p, dtype=np.float64) for p in params],
            second_moment=[np.zeros_like(p, dtype=np.float64) for p in params],
            step_size=step_size,
        )


def adam_step(
    params: list[np.ndarray], gradients: list[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """
    One bias-corrected Adam update.

    Parameters
    ----------
    params : list[np.ndarray]
        Current parameters. Left untouched.
    gradients : list[np.ndarray]
        Loss gradients, same shapes as ``params``.
    state : AdamState
        Moment buffers and hyperparameters. ``state.step_size`` is the
        (possibly annealed) step size used for this update.

    Returns
    -------
    tuple[list[np.ndarray], AdamState]
        New parameters and the new optimizer state.

    Raises
    ------
    NumericalError
        If any gradient is non-finite. Nothing is updated in that case.
    """
    if len(params) != len(gradients) or len(params) != len(state.first_moment):
        raise ConfigurationError(
            f"Got {len(params)} parameters, {len(gradients)} gradients and "
            f"{len(state.first_moment)} moment buffers"
        )
    if state.step_size < 0:
        raise ConfigurationError(f"step_size must be >= 0, got {state.step_size}")
    for i, (p, g) in enumerate(zip(params, gradients)):
        if p.shape != g.shape or p.shape != state.first_moment[i].shape:
            raise ConfigurationError(
                f"Parameter {i} has shape {p.shape} but gradient has {g.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NumericalError(
                f"Non-finite gradient in parameter array {i}; update rejected"
            )

    t = state.step_count + 1
    first, second, updated = [], [], []
    for p, g, m, v in zip(params, gradients, state.first_moment, state.second_moment):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        step = state.step_size * m_hat / (np.sqrt(v_hat) + state.epsilon_num)
        updated.append(p - step)
        first.append(m)
        second.append(v)
    new_state = AdamState(
        first_moment=first,
        second_moment=second,
        step_size=state.step_size,
        step_count=t,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon_num=state.epsilon_num,
    )
    return updated, new_state


def apply_adam(
    net: MlpNetwork, gradients: list[np.ndarray], state: AdamState
) -> tuple[MlpNetwork, AdamState]:
    params, new_state = adam_step(net.parameters(), gradients, state)
    return net.with_parameters(params), new_state


LossFn = Callable[[MlpNetwork, Any], tuple[float, list[np.ndarray]]]


@dataclass
class FiniteDiffReport:
    max_relative_error: float
    worst_parameter: int
    worst_coordinate: int
    n_coordinates: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= self.tolerance


def finite_diff_check(
    net: MlpNetwork,
    loss_fn: LossFn,
    inputs: Any,
    tolerance: float,
    step: float = 1e-5,
    max_coordinates: int | None = None,
    rng: np.random.Generator | None = None,
) -> FiniteDiffReport:
    """
    Compare the analytic gradient of ``loss_fn`` to central differences.

    The error of a coordinate is ``|a - n| / max(1, |a|, |n|)``: relative for
    gradients larger than one and absolute below that, so coordinates whose
    true gradient is zero are not dominated by round-off.

    Parameters
    ----------
    net : MlpNetwork
        Point at which the gradient is checked. Not modified.
    loss_fn : Callable
        ``loss_fn(net, inputs) -> (loss, gradients)`` with gradients ordered
        like `MlpNetwork.parameters`. Must be deterministic.
    inputs : Any
        Passed through to ``loss_fn``.
    tolerance : float
        Largest acceptable error.
    step : float
        Central difference half-width.
    max_coordinates : int, optional
        Check a random subset of this many coordinates instead of all of them.
    rng : np.random.Generator, optional
        Picks the subset. Defaults to a generator seeded with 0.

    Returns
    -------
    FiniteDiffReport
    """
    _, analytic = loss_fn(net, inputs)
    probe = net.copy()
    probe_params = probe.parameters()

    coordinates = [
        (p_idx, flat) for p_idx, p in enumerate(probe_params) for flat in range(p.size)
    ]
    if max_coordinates is not None and max_coordinates < len(coordinates):
        rng = rng if rng is not None else np.random.default_rng(0)
        picks = rng.choice(len(coordinates), size=max_coordinates, replace=False)
        coordinates = [coordinates[i] for i in sorted(picks)]

    worst, worst_at = 0.0, (0, 0)
    for p_idx, flat in coordinates:
        array = probe_params[p_idx].reshape(-1)
        original = array[flat]
        array[flat] = original + step
        loss_plus, _ = loss_fn(probe, inputs)
        array[flat] = original - step
        loss_minus, _ = loss_fn(probe, inputs)
        array[flat] = original

        numeric = (loss_plus - loss_minus) / (2.0 * step)
        exact = float(np.asarray(analytic[p_idx]).reshape(-1)[flat])
        error = abs(exact - numeric) / max(1.0, abs(exact), abs(numeric))
        if error > worst:
            worst, worst_at = error, (p_idx, flat)

    return FiniteDiffReport(
        max_relative_error=worst,
        worst_parameter=worst_at[0],
        worst_coordinate=worst_at[1],
        n_coordinates=len(coordinates),
        tolerance=tolerance,
    )


def save_checkpoint(net: MlpNetwork, path: Path) -> None:
    """
    Write the network in the little-endian ``PXNN`` layout: magic, u32 version,
    u32 activation code, u32 layer count, u32 layer sizes, then for every layer
    the row-major ``(fan_in, fan_out)`` weights followed by the biases as f64.
    """
    header = np.array(
        [
            CHECKPOINT_VERSION,
            _ACTIVATION_CODES[net.activation],
            len(net.layer_sizes),
            *net.layer_sizes,
        ],
        dtype="<u4",
    )
    with Path(path).open("wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(header.tobytes())
        for w, b in zip(net.weights, net.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path: Path) -> MlpNetwork:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"{path} is not a PXNN checkpoint")
    header = np.frombuffer(data, dtype="<u4", count=3, offset=4)
    version, activation_code, n_sizes = header
    if version != CHECKPOINT_VERSION:
        raise ConfigurationError(f"Unsupported checkpoint version {version}")
    offset = 4 + 3 * 4
    sizes = np.frombuffer(data, dtype="<u4", count=int(n_sizes), offset=offset)
    offset += 4 * int(n_sizes)
    layer_sizes = [int(n) for n in sizes]

    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=offset)
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(w.reshape(fan_in, fan_out).astype(np.float64))
        biases.append(b.astype(np.float64))

    activation = {code: name for name, code in _ACTIVATION_CODES.items()}[
        int(activation_code)
    ]
    return MlpNetwork(
        layer_sizes=layer_sizes, weights=weights, biases=biases, activation=activation
    )
