"""Tests for loss terms and objective composition."""

import logging
import math

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import norm

from disent_toolkit.autodiff import Tensor, backward, check_gradients, no_grad
from disent_toolkit.errors import ConfigError
from disent_toolkit.models.schemas import (
    BTCTermConfig,
    DIPTermConfig,
    FactorTCTermConfig,
    IFCVAETermConfig,
    KLTermConfig,
    MMDTermConfig,
    ObjectiveSpec,
    TrainConfig,
)
from disent_toolkit.nn import Adam, LatentPosterior, Stack, kl_to_standard_normal, mlp_layers, recon_loss
from disent_toolkit.services.loss_terms import (
    FactorTCTerm,
    IFCVAETerm,
    Objective,
    TermContext,
    btc_decompose,
    dip_term,
    factor_disc_step,
    factor_tc_term,
    ifcvae_terms,
    mmd_squared,
    mmd_term,
    objective_spec_from_config,
    permute_dims,
    term_config_for,
    term_kl_capacity,
    validate_objective,
)


def sampled_posterior(rng: np.random.Generator, batch: int, dim: int, requires_grad: bool = False) -> LatentPosterior:
    mu = Tensor(rng.normal(size=(batch, dim)), requires_grad=requires_grad)
    logvar = Tensor(rng.normal(scale=0.3, size=(batch, dim)), requires_grad=requires_grad)
    posterior = LatentPosterior(mu=mu, logvar=logvar)
    posterior.sample(rng)
    return posterior


def brute_force_btc(z: np.ndarray, mu: np.ndarray, logvar: np.ndarray, dataset_size: int):
    """Double loop over the batch with scipy densities."""
    batch, dim = z.shape
    scale = np.exp(0.5 * logvar)
    log_norm = math.log(dataset_size * batch)
    mi, tc, dim_kl = [], [], []
    for i in range(batch):
        per_dim = np.array([[norm.logpdf(z[i, k], mu[j, k], scale[j, k]) for k in range(dim)] for j in range(batch)])
        log_qz_given_x = per_dim[i].sum()
        log_qz = logsumexp(per_dim.sum(axis=1)) - log_norm
        log_qz_product = sum(logsumexp(per_dim[:, k]) - log_norm for k in range(dim))
        log_pz = norm.logpdf(z[i]).sum()
        mi.append(log_qz_given_x - log_qz)
        tc.append(log_qz - log_qz_product)
        dim_kl.append(log_qz_product - log_pz)
    return np.mean(mi), np.mean(tc), np.mean(dim_kl)


class TestBTCDecomposition:
    """Minibatch-weighted sampling estimates."""

    @pytest.mark.parametrize("batch,dim,seed", [(2, 1, 0), (8, 3, 1), (16, 8, 2)])
    def test_matches_brute_force(self, batch, dim, seed):
        rng = np.random.default_rng(seed)
        posterior = sampled_posterior(rng, batch, dim)
        mi, tc, dim_kl = btc_decompose(posterior, dataset_size=2304)
        expected = brute_force_btc(posterior.z.data, posterior.mu.data, posterior.logvar.data, 2304)
        np.testing.assert_allclose([mi.item(), tc.item(), dim_kl.item()], expected, atol=1e-10)

    def test_parts_telescope(self, rng):
        posterior = sampled_posterior(rng, 10, 4)
        mi, tc, dim_kl = btc_decompose(posterior, dataset_size=100)
        z, mu, logvar = posterior.z.data, posterior.mu.data, posterior.logvar.data
        log_q = norm.logpdf(z, mu, np.exp(0.5 * logvar)).sum(axis=1)
        log_p = norm.logpdf(z).sum(axis=1)
        assert mi.item() + tc.item() + dim_kl.item() == pytest.approx(np.mean(log_q - log_p), abs=1e-10)

    def test_batch_of_one(self, rng):
        with pytest.raises(ConfigError, match="at least 2"):
            btc_decompose(sampled_posterior(rng, 1, 3), dataset_size=10)

    def test_dataset_smaller_than_batch(self, rng):
        with pytest.raises(ConfigError, match="smaller than the batch"):
            btc_decompose(sampled_posterior(rng, 8, 3), dataset_size=4)

    def test_gradient(self, rng):
        posterior = sampled_posterior(rng, 6, 3, requires_grad=True)
        eps = posterior.eps

        def loss():
            posterior.z = posterior.mu + (posterior.logvar * 0.5).exp() * eps
            mi, tc, dim_kl = btc_decompose(posterior, dataset_size=50)
            return mi + tc * 2.0 + dim_kl

        assert check_gradients(loss, [posterior.mu, posterior.logvar], samples=30) < 1e-5


class TestKLCapacity:
    """beta * |KL - C|."""

    def test_capacity_is_subtracted(self):
        kl = Tensor([3.0, 5.0])
        assert term_kl_capacity(kl, beta=2.0, capacity=1.0).item() == pytest.approx(6.0)
        assert term_kl_capacity(kl, beta=2.0, capacity=10.0).item() == pytest.approx(12.0)

    def test_negative_capacity(self):
        with pytest.raises(ConfigError):
            term_kl_capacity(Tensor([1.0]), beta=1.0, capacity=-1.0)

    def test_gradient(self, rng):
        mu = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        logvar = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        error = check_gradients(
            lambda: term_kl_capacity(kl_to_standard_normal(mu, logvar), beta=4.0, capacity=25.0), [mu, logvar]
        )
        assert error < 1e-5


class TestFactorTC:
    """Permutation and the density-ratio discriminator."""

    def test_permute_dims_keeps_column_values(self, rng):
        z = Tensor(rng.normal(size=(50, 3)))
        permuted = permute_dims(z, rng).data
        np.testing.assert_array_equal(np.sort(permuted, axis=0), np.sort(z.data, axis=0))
        assert not np.array_equal(permuted, z.data)

    def test_identical_distributions_give_chance_accuracy(self, rng):
        discriminator = Stack("discriminator", mlp_layers([16], 2, "leaky_relu"), (1,), rng)
        optimizer = Adam(discriminator.params, lr=1e-3)
        for _ in range(50):
            z = Tensor(rng.normal(size=(64, 1)))
            _, acc = factor_disc_step(z, permute_dims(z, rng), discriminator, optimizer)
            assert acc == 0.5

    def test_discriminator_detects_dependence(self, rng):
        discriminator = Stack("discriminator", mlp_layers([32, 32], 2, "leaky_relu"), (2,), rng)
        optimizer = Adam(discriminator.params, lr=1e-3)

        def correlated(n: int) -> Tensor:
            u = rng.normal(size=(n, 1))
            return Tensor(np.hstack([u, u]))

        for _ in range(2000):
            z = correlated(256)
            factor_disc_step(z, permute_dims(z, rng), discriminator, optimizer)

        z = correlated(2000)
        with no_grad():
            real = np.argmax(discriminator(z).data, axis=1) == 0
            fake = np.argmax(discriminator(permute_dims(z, rng)).data, axis=1) == 1
            estimate = factor_tc_term(z, discriminator).item()
        assert 0.5 * (real.mean() + fake.mean()) > 0.85
        assert estimate > 0

    def test_gradient_reaches_codes(self, rng):
        discriminator = Stack("discriminator", mlp_layers([8], 2, "tanh"), (3,), rng)
        z = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        assert check_gradients(lambda: factor_tc_term(z, discriminator, 10.0), [z]) < 1e-5

    def test_discriminator_uses_configured_slope(self, rng):
        z = Tensor(rng.normal(size=(32, 4)))
        outputs = []
        for slope in (0.0, 0.9):
            term = FactorTCTerm(FactorTCTermConfig(disc_slope=slope, disc_hidden=[8, 8]), 4, np.random.default_rng(0))
            assert [layer.negative_slope for layer in term.discriminator.layers[:-1]] == [slope, slope]
            with no_grad():
                outputs.append(term.discriminator(z).data)
        assert not np.allclose(outputs[0], outputs[1])

    def test_permute_dims_batch_of_one_is_identity(self, rng):
        z = Tensor(rng.normal(size=(1, 5)))
        np.testing.assert_array_equal(permute_dims(z, rng).data, z.data)

    def test_permute_dims_is_seeded(self):
        z = Tensor(np.arange(12, dtype=float).reshape(4, 3))
        first = permute_dims(z, np.random.default_rng(7)).data
        second = permute_dims(z, np.random.default_rng(7)).data
        np.testing.assert_array_equal(first, second)
        draws = np.random.default_rng(7)
        rows = np.stack([draws.permutation(4) for _ in range(3)], axis=1)
        np.testing.assert_array_equal(first, z.data[rows, np.arange(3)])

    def test_zeroed_output_layer_gives_zero_tc(self, rng):
        discriminator = Stack("discriminator", mlp_layers([16], 2, "leaky_relu"), (3,), rng)
        last = len(discriminator.layers) - 1
        discriminator.params[f"discriminator.{last}.weight"].data[...] = 0.0
        discriminator.params[f"discriminator.{last}.bias"].data[...] = 0.0
        z = Tensor(rng.normal(size=(20, 3)))
        assert factor_tc_term(z, discriminator, 6.4).item() == 0.0


class TestMMD:
    """Gaussian-kernel maximum mean discrepancy."""

    def test_singletons(self):
        value = mmd_squared(Tensor([[0.5]]), Tensor([[-1.0]]), sigma2=2.0).item()
        assert value == pytest.approx(2.0 - 2.0 * math.exp(-(1.5**2) / 4.0), abs=1e-12)

    def test_identical_samples(self, rng):
        x = Tensor(rng.normal(size=(10, 3)))
        assert mmd_squared(x, x, sigma2=3.0).item() == pytest.approx(0.0, abs=1e-12)

    def test_batch_of_one(self, rng):
        with pytest.raises(ConfigError, match="at least 2"):
            mmd_term(Tensor(np.zeros((1, 2))), rng, lambda_mmd=1.0)

    def test_gradient(self, rng):
        z = Tensor(rng.normal(size=(6, 2)), requires_grad=True)
        draws = np.random.default_rng(5)
        state = draws.bit_generator.state

        def loss():
            draws.bit_generator.state = state
            return mmd_term(z, draws, lambda_mmd=10.0)

        assert check_gradients(loss, [z]) < 1e-5

    def test_prior_draws_are_close_to_the_prior(self):
        z = Tensor(np.random.default_rng(21).standard_normal((512, 4)))
        assert mmd_term(z, np.random.default_rng(22), lambda_mmd=1.0).item() < 0.05

    def test_batch_order_does_not_matter(self, rng):
        z = rng.normal(loc=0.5, size=(24, 3))
        order = rng.permutation(24)
        value = mmd_term(Tensor(z), np.random.default_rng(9), lambda_mmd=10.0).item()
        shuffled = mmd_term(Tensor(z[order]), np.random.default_rng(9), lambda_mmd=10.0).item()
        assert shuffled == pytest.approx(value, rel=1e-10)


class TestDIP:
    """Covariance moment matching."""

    def test_constant_means_penalize_diagonal(self):
        posterior = LatentPosterior(mu=Tensor(np.ones((5, 3))), logvar=Tensor(np.zeros((5, 3))))
        assert dip_term(posterior, "I", lambda_od=10.0, lambda_d=100.0).item() == pytest.approx(300.0)

    def test_mode_two_counts_posterior_variance(self):
        posterior = LatentPosterior(mu=Tensor(np.ones((5, 3))), logvar=Tensor(np.zeros((5, 3))))
        assert dip_term(posterior, "II", lambda_od=10.0, lambda_d=10.0).item() == pytest.approx(0.0)

    @pytest.mark.parametrize("mode", ["I", "II"])
    def test_gradient(self, rng, mode):
        posterior = sampled_posterior(rng, 6, 3, requires_grad=True)
        error = check_gradients(lambda: dip_term(posterior, mode, 10.0, 5.0), [posterior.mu, posterior.logvar])
        assert error < 1e-5

    def test_unknown_mode(self, rng):
        with pytest.raises(ConfigError, match="unknown DIP mode"):
            dip_term(sampled_posterior(rng, 4, 2), "III", 1.0, 1.0)

    @pytest.mark.parametrize("mode", ["I", "II"])
    def test_batch_order_does_not_matter(self, rng, mode):
        posterior = sampled_posterior(rng, 12, 4)
        order = rng.permutation(12)
        shuffled = LatentPosterior(mu=Tensor(posterior.mu.data[order]), logvar=Tensor(posterior.logvar.data[order]))
        value = dip_term(posterior, mode, 10.0, 100.0).item()
        assert dip_term(shuffled, mode, 10.0, 100.0).item() == pytest.approx(value, rel=1e-10)


class TestIFCVAE:
    """Auxiliary and adversarial label classifiers."""

    def test_label_dims_equal_latent_disables_adversary(self, dataset, rng, caplog):
        with caplog.at_level(logging.WARNING):
            term = IFCVAETerm(IFCVAETermConfig(label_dims=3), 3, dataset, rng)
        assert term.adv_clf is None
        assert "adversary disabled" in caplog.text

    def test_label_dims_above_latent(self, dataset, rng):
        with pytest.raises(ConfigError, match="exceeds latent_dim"):
            IFCVAETerm(IFCVAETermConfig(label_dims=4), 3, dataset, rng)

    def test_loss_combines_classifiers(self, rng):
        aux = Stack("aux", mlp_layers([8], 3, "tanh"), (1,), rng)
        adv = Stack("adv", mlp_layers([8], 3, "tanh"), (2,), rng)
        posterior = sampled_posterior(rng, 6, 3, requires_grad=True)
        labels = np.array([0, 1, 2, 0, 1, 2])
        out = ifcvae_terms(posterior, labels, aux, adv, label_dims=1, w_aux=1.0, w_adv=0.5)
        assert out.loss.item() == pytest.approx(out.aux_ce - 0.5 * out.adv_ce)
        assert 0.0 <= out.aux_accuracy <= 1.0

        def loss():
            posterior.z = posterior.mu + (posterior.logvar * 0.5).exp() * posterior.eps
            return ifcvae_terms(posterior, labels, aux, adv, 1, 1.0, 0.5).loss

        assert check_gradients(loss, [posterior.mu, posterior.logvar]) < 1e-5

    def test_uniform_logits_give_log_num_classes(self, rng):
        aux = Stack("aux", mlp_layers([8], 4, "tanh"), (1,), rng)
        aux.params["aux.1.weight"].data[...] = 0.0
        posterior = sampled_posterior(rng, 8, 3)
        labels = np.array([0, 1, 2, 3, 0, 1, 2, 3])
        out = ifcvae_terms(posterior, labels, aux, None, label_dims=1, w_aux=1.0, w_adv=1.0)
        assert out.aux_ce == pytest.approx(math.log(4), abs=1e-12)
        assert out.adv_ce is None

    def test_zero_weights_leave_objective_unchanged(self, dataset):
        base = ObjectiveSpec(terms=[KLTermConfig(beta=2.0)])
        tied = ObjectiveSpec(terms=[KLTermConfig(beta=2.0), IFCVAETermConfig(w_aux=0.0, w_adv=0.0)])
        totals = []
        for spec in (base, tied):
            objective = Objective.from_spec(spec, 3, dataset, np.random.default_rng(0))
            rng = np.random.default_rng(4)
            posterior = sampled_posterior(rng, 8, 3)
            images = dataset.images[:8]
            ctx = TermContext(
                posterior=posterior,
                images=images,
                reconstruction=Tensor(rng.uniform(0.1, 0.9, size=images.shape)),
                factors=dataset.all_factors()[:8],
                rng=np.random.default_rng(5),
            )
            totals.append(objective.compose(ctx)[1].total)
        assert totals[1] == totals[0]


class TestObjective:
    """Name mapping, validation and composition."""

    def test_names_are_case_insensitive(self):
        config = TrainConfig(seed=0, kl={"beta": 4.0})
        assert term_config_for("betavae", config).beta == 4.0
        assert term_config_for(" BetaVAE ", config).beta == 4.0
        assert term_config_for("VAE", config).beta == 1.0

    def test_unknown_name_lists_valid_names(self):
        with pytest.raises(ConfigError, match="valid names: VAE, BetaVAE"):
            term_config_for("WAE", TrainConfig(seed=0))

    def test_kl_and_btc_conflict(self):
        config = TrainConfig(seed=0, loss_terms=["BetaVAE", "BTCVAE"])
        with pytest.raises(ConfigError, match="BetaVAE and BTCVAE"):
            objective_spec_from_config(config)

    def test_overlap_can_be_allowed(self):
        config = TrainConfig(seed=0, loss_terms=["BetaVAE", "BTCVAE"], allow_term_overlap=True)
        assert len(objective_spec_from_config(config).terms) == 2

    def test_duplicate_terms(self):
        spec = ObjectiveSpec(terms=[KLTermConfig(), KLTermConfig(beta=4.0)])
        with pytest.raises(ConfigError, match="same term"):
            validate_objective(spec)

    def test_dip_variants_are_distinct(self):
        spec = ObjectiveSpec(terms=[DIPTermConfig(mode="I"), DIPTermConfig(mode="II")])
        validate_objective(spec)

    def test_composition_is_the_sum_of_its_terms(self, dataset):
        spec = ObjectiveSpec(terms=[KLTermConfig(beta=1.0), MMDTermConfig(lambda_mmd=10.0)])
        objective = Objective.from_spec(spec, 3, dataset, np.random.default_rng(0))
        rng = np.random.default_rng(3)
        posterior = sampled_posterior(rng, 8, 3)
        images = dataset.images[:8]
        reconstruction = Tensor(rng.uniform(0.1, 0.9, size=images.shape))
        ctx = TermContext(
            posterior=posterior,
            images=images,
            reconstruction=reconstruction,
            factors=dataset.all_factors()[:8],
            rng=np.random.default_rng(11),
            recon_weight=0.5,
        )
        loss, breakdown = objective.compose(ctx)

        recon = recon_loss(images, reconstruction).item()
        kl = kl_to_standard_normal(posterior.mu, posterior.logvar).mean().item()
        mmd = mmd_term(posterior.z, np.random.default_rng(11), 10.0).item()
        assert breakdown.recon == pytest.approx(recon, abs=1e-12)
        assert breakdown.terms == pytest.approx({"kl": kl, "mmd": mmd}, abs=1e-12)
        assert loss.item() == breakdown.total
        assert abs(breakdown.total - breakdown.component_sum()) < 1e-12
        assert "kl" in breakdown.diagnostics and "mmd2" in breakdown.diagnostics

    def test_min_batch_and_conditions(self, dataset):
        config = TrainConfig(seed=0, loss_terms=["CVAE", "InfoVAE"], cvae={"condition_factors": ["shape", "scale"]})
        objective = Objective.from_spec(objective_spec_from_config(config), 3, dataset, np.random.default_rng(0))
        assert objective.min_batch == 2
        assert objective.condition_factors == ["shape", "scale"]

    def test_zero_weight_terms_add_no_gradient(self, dataset):
        spec = ObjectiveSpec(
            terms=[
                KLTermConfig(beta=0.0),
                BTCTermConfig(alpha=0.0, beta=0.0, gamma=0.0),
                FactorTCTermConfig(gamma_tc=0.0, disc_hidden=[8]),
                MMDTermConfig(lambda_mmd=0.0),
                DIPTermConfig(lambda_od=0.0, lambda_d=0.0),
            ],
            allow_term_overlap=True,
        )
        objective = Objective.from_spec(spec, 3, dataset, np.random.default_rng(0))
        rng = np.random.default_rng(8)
        posterior = sampled_posterior(rng, 8, 3, requires_grad=True)
        images = dataset.images[:8]
        reconstruction = Tensor(rng.uniform(0.1, 0.9, size=images.shape), requires_grad=True)
        ctx = TermContext(
            posterior=posterior,
            images=images,
            reconstruction=reconstruction,
            factors=dataset.all_factors()[:8],
            rng=np.random.default_rng(2),
            recon_weight=0.7,
        )
        loss, _ = objective.compose(ctx)
        backward(loss)
        composed = reconstruction.grad.copy()
        for tensor in (posterior.mu, posterior.logvar):
            assert tensor.grad is None or not np.any(tensor.grad)

        reconstruction.zero_grad()
        backward(recon_loss(images, reconstruction) * 0.7)
        np.testing.assert_array_equal(composed, reconstruction.grad)
