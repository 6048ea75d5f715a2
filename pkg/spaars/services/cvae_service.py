"""CVAE training on unordered (s, a) pairs, the behavioural manifold and its diagnostics."""
import math
from pathlib import Path
from typing import Callable, List, Tuple, Union

import joblib
import numpy as np

from spaars.models.cvae import CvaeModel
from spaars.models.environment import OfflineDataset
from spaars.models.network import GaussianHead
from spaars.schemas.cvae_schemas import CollapseReport, CvaeEpochMetrics, CvaeTrainConfig
from spaars.services.network_service import network_service
from spaars.utils.checkpoint import load_payload, save_payload
from spaars.utils.errors import ConfigurationError, InputError, InvariantViolation, NumericError
from spaars.utils.logger import log_info, log_warning

BN_EPS = 1e-5


def _gaussian_kl(mu_q, log_std_q, mu_p, log_std_p) -> np.ndarray:
    """Per-dimension KL(q || p) of diagonal Gaussians."""
    var_q = np.exp(2.0 * log_std_q)
    var_p = np.exp(2.0 * log_std_p)
    return log_std_p - log_std_q + (var_q + (mu_q - mu_p) ** 2) / (2.0 * var_p) - 0.5


def batch_bounds(n: int, batch_size: int) -> List[Tuple[int, int]]:
    """(start, end) pairs covering n rows; a trailing batch of one row joins the previous batch."""
    starts = list(range(0, n, batch_size))
    if len(starts) > 1 and n - starts[-1] == 1:
        starts.pop()
    return list(zip(starts, [*starts[1:], n]))


class CvaeService:
    """Train and query the conditional VAE that defines the behavioural manifold."""

    # ------------------------------------------------------------------ helpers

    def _check_dataset(self, dataset: OfflineDataset):
        if dataset.n_pairs == 0:
            raise InputError("Offline dataset is empty")
        if dataset.states.shape[0] != dataset.actions.shape[0]:
            raise ConfigurationError("Dataset states and actions have different lengths")

    def normalize_states(self, model: CvaeModel, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        if states.shape[-1] != model.state_dim:
            raise ConfigurationError(f"State dimension {states.shape[-1]} != model state_dim {model.state_dim}")
        return (states - model.state_shift) / model.state_scale

    def _normalize_actions(self, model: CvaeModel, actions: np.ndarray) -> np.ndarray:
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape[-1] != model.action_dim:
            raise ConfigurationError(f"Action dimension {actions.shape[-1]} != model action_dim {model.action_dim}")
        return (actions - model.action_center) / model.action_half_range

    def _split_head(self, out: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
        return out[..., :k], out[..., k:]

    def _normalize_mean(self, model: CvaeModel, mu_raw: np.ndarray) -> np.ndarray:
        if not model.use_mean_batchnorm:
            return mu_raw
        return (mu_raw - model.bn_mean) / np.sqrt(model.bn_var + BN_EPS)

    def beta_at(self, config: CvaeTrainConfig, step: int) -> float:
        """Annealed KL weight: 0 at step 0, beta_max from anneal_steps on."""
        if config.anneal_steps == 0:
            return config.beta_max
        return config.beta_max * min(1.0, step / config.anneal_steps)

    # ------------------------------------------------------------------ queries

    def encode(self, model: CvaeModel, s: np.ndarray, a: np.ndarray) -> GaussianHead:
        """Posterior q(z|s,a); the mean is batch-normalised with the frozen statistics."""
        inputs = np.concatenate(
            [self.normalize_states(model, s), self._normalize_actions(model, a)], axis=-1
        )
        mu_raw, raw_log_std = self._split_head(network_service.forward(model.encoder, inputs), model.latent_dim)
        log_std, _ = network_service.squash_log_std(raw_log_std)
        return network_service.make_head(self._normalize_mean(model, mu_raw), log_std)

    def prior(self, model: CvaeModel, s: np.ndarray) -> GaussianHead:
        """Learned prior p(z|s)."""
        out = network_service.forward(model.prior, self.normalize_states(model, s))
        mu, raw_log_std = self._split_head(out, model.latent_dim)
        log_std, _ = network_service.squash_log_std(raw_log_std)
        return network_service.make_head(mu, log_std)

    def prior_sample(self, model: CvaeModel, s: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return network_service.gaussian_sample(self.prior(model, s), noise)

    def decode(self, model: CvaeModel, z: np.ndarray, s: np.ndarray) -> np.ndarray:
        """Deterministic decoder mode Dec(z, s), squashed into the action bounds."""
        actions, _ = self.decode_vjp(model, z, s)
        return actions

    def decode_vjp(
        self, model: CvaeModel, z: np.ndarray, s: np.ndarray
    ) -> Tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]:
        """
        Decode and return a vector-Jacobian product closure.

        The closure maps d(loss)/d(action) to d(loss)/d(z), i.e. J_Dec^T g, without
        touching the decoder parameters.
        """
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != model.latent_dim:
            raise ConfigurationError(f"Latent dimension {z.shape[-1]} != model latent_dim {model.latent_dim}")
        inputs = np.concatenate([self.normalize_states(model, s), z], axis=-1)
        out, cache = network_service.forward_cached(model.decoder, inputs)
        squashed = np.tanh(out)
        actions = model.action_center + model.action_half_range * squashed

        def vjp(grad_actions: np.ndarray) -> np.ndarray:
            grad_out = np.asarray(grad_actions) * model.action_half_range * (1.0 - squashed ** 2)
            _, grad_inputs = network_service.backward(model.decoder, cache, grad_out)
            return grad_inputs[..., model.state_dim:]

        return actions, vjp

    # ------------------------------------------------------------------ training

    def _init_model(
        self, dataset: OfflineDataset, config: CvaeTrainConfig, rng: np.random.Generator, bounds
    ) -> CvaeModel:
        s_dim, d = dataset.state_dim, dataset.action_dim
        k = config.latent_dim or max(1, math.ceil(d / 2))
        if k >= d:
            log_warning("Latent dimension is not smaller than the action dimension", latent_dim=k, action_dim=d)

        hidden = list(config.hidden_sizes)
        shift = dataset.states.mean(axis=0)
        scale = dataset.states.std(axis=0)
        scale = np.where(scale > 1e-6, scale, 1.0)

        return CvaeModel(
            encoder=network_service.init_mlp([s_dim + d, *hidden, 2 * k], rng),
            decoder=network_service.init_mlp([s_dim + k, *hidden, d], rng),
            prior=network_service.init_mlp([s_dim, *hidden, 2 * k], rng, output_scale=0.1),
            state_dim=s_dim,
            action_dim=d,
            latent_dim=k,
            action_low=np.asarray(bounds[0], dtype=np.float64),
            action_high=np.asarray(bounds[1], dtype=np.float64),
            state_shift=shift,
            state_scale=scale,
            use_mean_batchnorm=config.use_mean_batchnorm,
            bn_mean=np.zeros(k),
            bn_var=np.ones(k),
        )

    def _train_batch(self, model, opt, states, actions, beta, free_bits, momentum, rng) -> Tuple[float, float, float]:
        """One ELBO step on a batch; returns (loss, reconstruction, total KL)."""
        n, k = states.shape[0], model.latent_dim
        sn = self.normalize_states(model, states)
        an = self._normalize_actions(model, actions)

        enc_out, enc_cache = network_service.forward_cached(model.encoder, np.concatenate([sn, an], axis=1))
        mu_raw, lq_raw = self._split_head(enc_out, k)
        if model.use_mean_batchnorm:
            batch_mean = mu_raw.mean(axis=0)
            batch_var = mu_raw.var(axis=0)
            inv_std = 1.0 / np.sqrt(batch_var + BN_EPS)
            mu_q = (mu_raw - batch_mean) * inv_std
            model.bn_mean = (1.0 - momentum) * model.bn_mean + momentum * batch_mean
            model.bn_var = (1.0 - momentum) * model.bn_var + momentum * batch_var
        else:
            mu_q = mu_raw
        log_q, dlog_q = network_service.squash_log_std(lq_raw)
        std_q = np.exp(log_q)

        pri_out, pri_cache = network_service.forward_cached(model.prior, sn)
        mu_p, lp_raw = self._split_head(pri_out, k)
        log_p, dlog_p = network_service.squash_log_std(lp_raw)

        noise = rng.standard_normal((n, k))
        z = mu_q + std_q * noise
        dec_out, dec_cache = network_service.forward_cached(model.decoder, np.concatenate([sn, z], axis=1))
        squashed = np.tanh(dec_out)
        recon = model.action_center + model.action_half_range * squashed

        residual = recon - actions
        reconstruction = float(np.mean(np.sum(residual ** 2, axis=1)))
        kl = _gaussian_kl(mu_q, log_q, mu_p, log_p)
        kl_dim = kl.mean(axis=0)
        active = (kl_dim > free_bits).astype(np.float64)
        loss = reconstruction + beta * float(np.sum(np.maximum(kl_dim - free_bits, 0.0)))
        if not np.isfinite(loss):
            return loss, reconstruction, float(kl_dim.sum())

        # decoder and reparameterised path
        grad_out = (2.0 / n) * residual * model.action_half_range * (1.0 - squashed ** 2)
        dec_grads, grad_dec_in = network_service.backward(model.decoder, dec_cache, grad_out)
        grad_z = grad_dec_in[:, model.state_dim:]
        grad_mu_q = grad_z.copy()
        grad_log_q = grad_z * std_q * noise

        # KL term; zero gradient on dimensions still inside their free bits
        weight = beta * active / n
        var_p = np.exp(2.0 * log_p)
        var_q = std_q ** 2
        diff = mu_q - mu_p
        grad_mu_q += weight * diff / var_p
        grad_mu_p = -weight * diff / var_p
        grad_log_q += weight * (var_q / var_p - 1.0)
        grad_log_p = weight * (1.0 - (var_q + diff ** 2) / var_p)

        if model.use_mean_batchnorm:
            grad_mu_raw = inv_std * (
                grad_mu_q - grad_mu_q.mean(axis=0) - mu_q * (grad_mu_q * mu_q).mean(axis=0)
            )
        else:
            grad_mu_raw = grad_mu_q

        enc_grads, _ = network_service.backward(
            model.encoder, enc_cache, np.concatenate([grad_mu_raw, grad_log_q * dlog_q], axis=1)
        )
        pri_grads, _ = network_service.backward(
            model.prior, pri_cache, np.concatenate([grad_mu_p, grad_log_p * dlog_p], axis=1)
        )

        network_service.optimizer_step(model.encoder, enc_grads, opt["encoder"])
        network_service.optimizer_step(model.decoder, dec_grads, opt["decoder"])
        network_service.optimizer_step(model.prior, pri_grads, opt["prior"])
        return loss, reconstruction, float(kl_dim.sum())

    def _finalize_batchnorm(self, model: CvaeModel, dataset: OfflineDataset):
        """Replace running statistics by exact statistics over the whole dataset."""
        if not model.use_mean_batchnorm:
            return
        inputs = np.concatenate(
            [self.normalize_states(model, dataset.states), self._normalize_actions(model, dataset.actions)], axis=1
        )
        mu_raw = network_service.forward(model.encoder, inputs)[:, :model.latent_dim]
        model.bn_mean = mu_raw.mean(axis=0)
        model.bn_var = mu_raw.var(axis=0)

    def train_cvae(
        self,
        dataset: OfflineDataset,
        config: CvaeTrainConfig,
        seed: int,
        action_bounds=None,
    ) -> Tuple[CvaeModel, List[CvaeEpochMetrics]]:
        """
        Fit the CVAE by ELBO on unordered (s, a) pairs and freeze it.

        Args:
            dataset: Offline pairs
            config: Training settings
            seed: Seed for initialisation, shuffling and reparameterisation noise
            action_bounds: (low, high); defaults to [-1, 1] per action dimension

        Returns:
            The frozen model and per-epoch metrics

        Raises:
            InputError: If the dataset is empty
            NumericError: If the loss becomes non-finite
        """
        self._check_dataset(dataset)
        if action_bounds is None:
            action_bounds = (-np.ones(dataset.action_dim), np.ones(dataset.action_dim))

        rng = np.random.default_rng(seed)
        model = self._init_model(dataset, config, rng, action_bounds)
        opt = {
            name: network_service.optimizer_init(getattr(model, name), lr=config.learning_rate)
            for name in ("encoder", "decoder", "prior")
        }

        n = dataset.n_pairs
        batch_size = min(config.batch_size, n)
        metrics: List[CvaeEpochMetrics] = []
        step = 0
        for epoch in range(config.epochs):
            order = rng.permutation(n)
            totals = np.zeros(3)
            batches = 0
            for start, end in batch_bounds(n, batch_size):
                idx = order[start:end]
                beta = self.beta_at(config, step)
                loss, recon, kl = self._train_batch(
                    model, opt, dataset.states[idx], dataset.actions[idx],
                    beta, config.free_bits, config.batchnorm_momentum, rng,
                )
                if not np.isfinite(loss):
                    raise NumericError(f"Non-finite CVAE loss at epoch {epoch}, step {step}")
                totals += (loss, recon, kl)
                batches += 1
                step += 1
            loss, recon, kl = totals / batches
            metrics.append(
                CvaeEpochMetrics(epoch=epoch, reconstruction=recon, kl=kl, beta=self.beta_at(config, step), loss=loss)
            )

        self._finalize_batchnorm(model, dataset)
        self.freeze(model)
        eps_rec, eps_sup = self.reconstruction_error(model, dataset)
        log_info("CVAE trained", pairs=n, latent_dim=model.latent_dim, epochs=config.epochs, eps_rec=eps_rec, eps_rec_sup=eps_sup)
        return model, metrics

    # ------------------------------------------------------------------ diagnostics

    def reconstruction_error(self, model: CvaeModel, dataset: OfflineDataset) -> Tuple[float, float]:
        """
        RMS and supremum of ||a - Dec(Enc(s, a), s)|| over the dataset (Enc = posterior mean).

        Raises:
            InputError: If the dataset is empty
        """
        self._check_dataset(dataset)
        z = self.encode(model, dataset.states, dataset.actions).mean
        errors = np.linalg.norm(dataset.actions - self.decode(model, z, dataset.states), axis=1)
        return float(np.sqrt(np.mean(errors ** 2))), float(np.max(errors))

    def decoder_jacobian(
        self, model: CvaeModel, z: np.ndarray, s: np.ndarray, method: str = "central", step: float = 1e-5
    ) -> np.ndarray:
        """Finite-difference d x k Jacobian of Dec at (z, s)."""
        z = np.asarray(z, dtype=np.float64)
        jacobian = np.zeros((model.action_dim, model.latent_dim))
        base = self.decode(model, z, s) if method == "forward" else None
        for j in range(model.latent_dim):
            offset = np.zeros(model.latent_dim)
            offset[j] = step
            if method == "forward":
                jacobian[:, j] = (self.decode(model, z + offset, s) - base) / step
            else:
                jacobian[:, j] = (self.decode(model, z + offset, s) - self.decode(model, z - offset, s)) / (2 * step)
        return jacobian

    def collapse_check(self, model: CvaeModel, dataset: OfflineDataset, epsilon_info: float = 0.1) -> CollapseReport:
        """Mean KL(q(z|s,a) || p(z|s)) per latent dimension as a mutual-information proxy."""
        posterior = self.encode(model, dataset.states, dataset.actions)
        prior = self.prior(model, dataset.states)
        kl = _gaussian_kl(posterior.mean, posterior.log_std, prior.mean, prior.log_std)
        per_dim = np.atleast_2d(kl).mean(axis=0)
        mi_proxy = float(per_dim.sum())
        report = CollapseReport(
            per_dim_kl=[float(v) for v in per_dim],
            mi_proxy=mi_proxy,
            epsilon_info=epsilon_info,
            collapsed=mi_proxy < epsilon_info,
        )
        log_info("Collapse check", mi_proxy=mi_proxy, collapsed=report.collapsed)
        return report

    # ------------------------------------------------------------------ frozenness and persistence

    def _fingerprint(self, model: CvaeModel) -> str:
        return joblib.hash(
            [model.encoder.arrays(), model.decoder.arrays(), model.prior.arrays(), model.bn_mean, model.bn_var]
        )

    def freeze(self, model: CvaeModel) -> CvaeModel:
        model.frozen = True
        model.fingerprint = self._fingerprint(model)
        return model

    def assert_frozen(self, model: CvaeModel):
        """Raise InvariantViolation if a frozen model's parameters changed."""
        if not model.frozen or self._fingerprint(model) != model.fingerprint:
            raise InvariantViolation("Frozen CVAE parameters were modified")

    def save_model(self, model: CvaeModel, path: Union[str, Path]) -> Path:
        nets = {
            name: {
                "layer_sizes": list(net.layer_sizes),
                "activations": list(net.activations),
                "flat": network_service.flatten_params(net),
            }
            for name, net in (("encoder", model.encoder), ("decoder", model.decoder), ("prior", model.prior))
        }
        return save_payload(
            path,
            "cvae",
            {
                **nets,
                "state_dim": model.state_dim,
                "action_dim": model.action_dim,
                "latent_dim": model.latent_dim,
                "action_low": model.action_low,
                "action_high": model.action_high,
                "state_shift": model.state_shift,
                "state_scale": model.state_scale,
                "use_mean_batchnorm": model.use_mean_batchnorm,
                "bn_mean": model.bn_mean,
                "bn_var": model.bn_var,
            },
        )

    def load_model(self, path: Union[str, Path]) -> CvaeModel:
        payload = load_payload(path, "cvae")
        nets = {
            name: network_service.unflatten_params(
                payload[name]["layer_sizes"], payload[name]["activations"], payload[name]["flat"]
            )
            for name in ("encoder", "decoder", "prior")
        }
        model = CvaeModel(
            **nets,
            state_dim=payload["state_dim"],
            action_dim=payload["action_dim"],
            latent_dim=payload["latent_dim"],
            action_low=payload["action_low"],
            action_high=payload["action_high"],
            state_shift=payload["state_shift"],
            state_scale=payload["state_scale"],
            use_mean_batchnorm=payload["use_mean_batchnorm"],
            bn_mean=payload["bn_mean"],
            bn_var=payload["bn_var"],
        )
        return self.freeze(model)


# Singleton instance
cvae_service = CvaeService()
