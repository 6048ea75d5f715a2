"""Multilayer perceptrons with analytic gradients and an Adam-style optimizer."""
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from spaars.models.network import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    ForwardCache,
    GaussianHead,
    MlpParams,
    OptimizerState,
    ParamGrads,
)
from spaars.utils.checkpoint import load_payload, save_payload
from spaars.utils.errors import ConfigurationError, NumericError

LossFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]

LOG_2PI = float(np.log(2.0 * np.pi))


def _activate(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(pre)
    if name == "relu":
        return np.maximum(pre, 0.0)
    return pre


def _activation_grad(name: str, out: np.ndarray) -> np.ndarray:
    # derivative expressed through the post-activation value
    if name == "tanh":
        return 1.0 - out * out
    if name == "relu":
        return (out > 0.0).astype(out.dtype)
    return np.ones_like(out)


class NetworkService:
    """Forward/backward passes, initialisation and optimisation of MlpParams."""

    def init_mlp(
        self,
        layer_sizes: Sequence[int],
        rng: np.random.Generator,
        activations: Optional[Sequence[str]] = None,
        output_scale: float = 1.0,
    ) -> MlpParams:
        """
        Create an MLP with Glorot-uniform weights and zero biases.

        Args:
            layer_sizes: Sizes from input to output
            rng: Random generator
            activations: One tag per layer; default tanh hidden, identity output
            output_scale: Multiplier applied to the last layer's weights

        Returns:
            Initialised parameters
        """
        sizes = [int(size) for size in layer_sizes]
        n_layers = len(sizes) - 1
        if activations is None:
            activations = ["tanh"] * (n_layers - 1) + ["identity"]

        weights, biases = [], []
        for i in range(n_layers):
            limit = np.sqrt(6.0 / (sizes[i] + sizes[i + 1]))
            w = rng.uniform(-limit, limit, size=(sizes[i], sizes[i + 1]))
            if i == n_layers - 1:
                w = w * output_scale
            weights.append(w)
            biases.append(np.zeros(sizes[i + 1]))

        return MlpParams(sizes, weights, biases, list(activations))

    def forward(self, params: MlpParams, x: np.ndarray) -> np.ndarray:
        """Evaluate the network on one input vector or a batch of rows."""
        out, _ = self.forward_cached(params, x)
        return out

    def forward_cached(self, params: MlpParams, x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        """Forward pass that records what backward() needs."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.shape[-1] != params.input_dim:
            raise ConfigurationError(
                f"Input has dimension {h.shape[-1]}, network expects {params.input_dim}"
            )

        cache = ForwardCache(squeeze=squeeze)
        for w, b, act in zip(params.weights, params.biases, params.activations):
            cache.inputs.append(h)
            h = _activate(act, h @ w + b)
            cache.outputs.append(h)

        return (h[0] if squeeze else h), cache

    def backward(
        self, params: MlpParams, cache: ForwardCache, grad_output: np.ndarray
    ) -> Tuple[ParamGrads, np.ndarray]:
        """
        Back-propagate d(loss)/d(output) through the cached forward pass.

        Returns:
            Parameter gradients and d(loss)/d(input), shaped like the forward input
        """
        grad = np.asarray(grad_output, dtype=np.float64)
        if cache.squeeze:
            grad = grad[None, :]

        n_layers = len(params.weights)
        grad_w: List[np.ndarray] = [None] * n_layers
        grad_b: List[np.ndarray] = [None] * n_layers
        for i in reversed(range(n_layers)):
            delta = grad * _activation_grad(params.activations[i], cache.outputs[i])
            grad_w[i] = cache.inputs[i].T @ delta
            grad_b[i] = delta.sum(axis=0)
            grad = delta @ params.weights[i].T

        grad_input = grad[0] if cache.squeeze else grad
        return ParamGrads(grad_w, grad_b), grad_input

    def gradient(self, params: MlpParams, loss_fn: LossFn, x: np.ndarray) -> Tuple[float, ParamGrads]:
        """
        Compute a scalar loss of the network output and its parameter gradients.

        Args:
            params: Network parameters
            loss_fn: Maps the output to (loss, d(loss)/d(output))
            x: Input vector or batch

        Returns:
            The loss value and the gradients

        Raises:
            NumericError: If the loss is not finite
        """
        out, cache = self.forward_cached(params, x)
        loss, grad_out = loss_fn(out)
        if not np.isfinite(loss):
            raise NumericError(f"Non-finite loss: {loss}")
        grads, _ = self.backward(params, cache, grad_out)
        return float(loss), grads

    def optimizer_init(
        self,
        arrays: Union[MlpParams, Sequence[np.ndarray]],
        lr: float = 3e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> OptimizerState:
        """Zero accumulators matching the given parameters."""
        if isinstance(arrays, MlpParams):
            arrays = arrays.arrays()
        return OptimizerState(
            first_moments=[np.zeros_like(a) for a in arrays],
            second_moments=[np.zeros_like(a) for a in arrays],
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )

    def optimizer_step(
        self, params: MlpParams, grads: ParamGrads, state: OptimizerState
    ) -> Tuple[MlpParams, OptimizerState]:
        """Apply one bias-corrected adaptive step in place and return (params, state)."""
        self.optimizer_step_arrays(params.arrays(), grads.arrays(), state)
        params.check_finite()
        return params, state

    def optimizer_step_arrays(
        self, arrays: List[np.ndarray], grads: List[np.ndarray], state: OptimizerState
    ) -> OptimizerState:
        """Adaptive step on a plain list of arrays, updated in place."""
        if len(arrays) != len(grads) or len(arrays) != len(state.first_moments):
            raise ConfigurationError("Optimizer state does not match the parameters")

        for param, grad, m in zip(arrays, grads, state.first_moments):
            if param.shape != grad.shape or param.shape != m.shape:
                raise ConfigurationError(
                    f"Gradient shape {grad.shape} does not match parameter shape {param.shape}"
                )

        state.step += 1
        # zero gradients are a fixed point, moments included
        if not any(np.any(grad) for grad in grads):
            return state
        correction1 = 1.0 - state.beta1 ** state.step
        correction2 = 1.0 - state.beta2 ** state.step
        for param, grad, m, v in zip(arrays, grads, state.first_moments, state.second_moments):
            m *= state.beta1
            m += (1.0 - state.beta1) * grad
            v *= state.beta2
            v += (1.0 - state.beta2) * grad * grad
            param -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        return state

    def squash_log_std(
        self, raw: np.ndarray, low: float = LOG_STD_MIN, high: float = LOG_STD_MAX
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Map raw outputs smoothly into [low, high]; also returns d(log_std)/d(raw)."""
        t = np.tanh(raw)
        half = 0.5 * (high - low)
        return low + half * (t + 1.0), half * (1.0 - t * t)

    def make_head(self, mean: np.ndarray, log_std: np.ndarray) -> GaussianHead:
        """Build a GaussianHead with log_std clamped to the allowed range."""
        return GaussianHead(
            mean=np.asarray(mean, dtype=np.float64),
            log_std=np.clip(np.asarray(log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX),
        )

    def gaussian_sample(self, head: GaussianHead, noise: np.ndarray) -> np.ndarray:
        """Reparameterised sample mean + std * noise."""
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape[-1] != head.dim:
            raise ConfigurationError(f"Noise dimension {noise.shape[-1]} != head dimension {head.dim}")
        return head.mean + head.std * noise

    def gaussian_log_prob(self, head: GaussianHead, x: np.ndarray) -> Union[float, np.ndarray]:
        """Diagonal Gaussian log-density, summed over the last axis."""
        z = (np.asarray(x, dtype=np.float64) - head.mean) / head.std
        log_prob = np.sum(-0.5 * z * z - head.log_std - 0.5 * LOG_2PI, axis=-1)
        return float(log_prob) if np.ndim(log_prob) == 0 else log_prob

    def flatten_params(self, params: MlpParams) -> np.ndarray:
        return np.concatenate([a.ravel() for a in params.arrays()])

    def unflatten_params(
        self, layer_sizes: Sequence[int], activations: Sequence[str], flat: np.ndarray
    ) -> MlpParams:
        """Inverse of flatten_params."""
        sizes = [int(size) for size in layer_sizes]
        expected = sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))
        if flat.size != expected:
            raise ConfigurationError(f"Flat vector has {flat.size} entries, expected {expected}")

        weights, offset = [], 0
        for i in range(len(sizes) - 1):
            count = sizes[i] * sizes[i + 1]
            weights.append(flat[offset:offset + count].reshape(sizes[i], sizes[i + 1]).copy())
            offset += count
        biases = []
        for i in range(len(sizes) - 1):
            biases.append(flat[offset:offset + sizes[i + 1]].copy())
            offset += sizes[i + 1]
        return MlpParams(sizes, weights, biases, list(activations))

    def save_params(self, params: MlpParams, path: Union[str, Path]) -> Path:
        """Checkpoint layer sizes, activations and the flat parameter vector."""
        return save_payload(
            path,
            "mlp",
            {
                "layer_sizes": list(params.layer_sizes),
                "activations": list(params.activations),
                "flat": self.flatten_params(params),
            },
        )

    def load_params(self, path: Union[str, Path]) -> MlpParams:
        payload = load_payload(path, "mlp")
        return self.unflatten_params(payload["layer_sizes"], payload["activations"], payload["flat"])


# Singleton instance
network_service = NetworkService()
