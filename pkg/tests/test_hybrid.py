"""Hybrid network heads, distributions, parameter counts, and backward."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from qppo import hybrid as qh
from qppo.backend import Exact, Noisy, QuantumBackend, Shots


def make_net(rng, n_qubits=4, n_layers=1, state_dim=4, output=None, **kwargs):
    cfg = qh.HybridNetConfig(n_qubits, n_layers, state_dim, output or qh.Discrete(2), **kwargs)
    return qh.HybridNet(cfg, rng)


class TestConfigValidation:
    def test_state_dim_must_match_qubits_without_pre_encoding(self):
        with pytest.raises(ValueError):
            qh.HybridNetConfig(4, 1, 8, qh.Discrete(2))

    def test_weighted_mode_needs_enough_observables(self):
        with pytest.raises(ValueError):
            qh.HybridNetConfig(2, 1, 2, qh.Discrete(3), policy_mode="weighted")

    def test_weighted_mode_discrete_only(self):
        with pytest.raises(ValueError):
            qh.HybridNetConfig(2, 1, 2, qh.ContinuousBeta(1), policy_mode="weighted")


class TestForward:
    def test_zero_post_weights_give_uniform(self, rng):
        net = make_net(rng, post_init=qh.Constant(0.0))
        out = net.forward(rng.normal(size=(3, 4)))
        np.testing.assert_allclose(out.probs, 0.5)

    def test_probabilities_normalized(self, rng):
        net = make_net(rng, post_init=qh.Xavier())
        out = net.forward(rng.normal(size=(8, 4)))
        out.validate()
        np.testing.assert_allclose(out.probs.sum(axis=1), 1.0, atol=1e-9)

    def test_beta_head_softplus_link(self, rng):
        # zero post weights -> alpha = beta = 1 + softplus(0) = 1 + ln 2
        net = make_net(
            rng, n_qubits=3, n_layers=2, state_dim=3,
            output=qh.ContinuousBeta(1), post_init=qh.Constant(0.0),
        )
        out = net.forward(rng.normal(size=(2, 3)))
        want = 1.0 + math.log(2.0)
        np.testing.assert_allclose(out.alpha, want, atol=1e-12)
        np.testing.assert_allclose(out.beta, want, atol=1e-12)

    def test_beta_shapes_exceed_one(self, rng):
        net = make_net(
            rng, n_qubits=2, n_layers=3, state_dim=2,
            output=qh.ContinuousBeta(1), post_init=qh.Xavier(),
        )
        out = net.forward(rng.normal(size=(16, 2)) * 5)
        out.validate()
        assert np.all(out.alpha > 1.0) and np.all(out.beta > 1.0)

    def test_state_width_checked(self, rng):
        net = make_net(rng)
        with pytest.raises(ValueError):
            net.forward(np.zeros((1, 3)))

    def test_non_finite_state_rejected(self, rng):
        net = make_net(rng)
        with pytest.raises(ValueError):
            net.forward(np.array([[0.0, 1.0, np.nan, 0.0]]))


class TestWeightedObservables:
    def test_zero_temperature_uniform(self, rng):
        net = make_net(rng, policy_mode="weighted", weighted_temperature=0.0)
        out = net.forward(rng.normal(size=(4, 4)))
        np.testing.assert_allclose(out.probs, 0.5, atol=1e-12)

    def test_zero_omega_uniform(self, rng):
        net = make_net(rng, policy_mode="weighted")
        net.omega[:] = 0.0
        out = net.forward(rng.normal(size=(4, 4)))
        np.testing.assert_allclose(out.probs, 0.5, atol=1e-12)

    def test_rising_temperature_concentrates_on_argmax(self, rng):
        net = make_net(rng, policy_mode="weighted")
        net.omega[:] = [1.3, 0.7]
        state = rng.normal(size=(1, 4))
        tops = []
        argmaxes = []
        for temp in (1.0, 10.0, 100.0):
            net.temperature[0] = temp
            out = net.forward(state)
            tops.append(out.probs.max())
            argmaxes.append(out.probs.argmax())
        assert tops[0] < tops[1] < tops[2]
        assert tops[2] > 0.99
        assert len(set(argmaxes)) == 1

    def test_softmax_shift_invariance(self):
        logits = np.array([[0.3, -1.2, 2.0]])
        base = qh.softmax(logits)
        shifted = qh.softmax(logits + 7.5)
        np.testing.assert_allclose(base, shifted, atol=1e-12)
        assert base.argmax() == shifted.argmax()


class TestSampling:
    def test_degenerate_discrete_distribution(self, rng):
        out = qh.PolicyOutput("discrete", probs=np.array([[1.0, 0.0]]))
        actions, logp = qh.sample_and_logprob(out, rng)
        assert actions[0] == 0
        assert logp[0] == pytest.approx(0.0)

    def test_beta_samples_respect_bounds_and_mean(self):
        rng = np.random.default_rng(5)
        n = 10**5
        out = qh.PolicyOutput(
            "beta", alpha=np.full((n, 1), 2.0), beta=np.full((n, 1), 2.0)
        )
        bounds = qh.ActionBounds([-2.0], [2.0])
        actions, _ = qh.sample_and_logprob(out, rng, bounds)
        assert np.all(actions >= -2.0) and np.all(actions <= 2.0)
        assert abs(actions.mean()) < 0.02  # Beta(2,2) mean 1/2 maps to midpoint 0

    def test_logprob_density_integrates_to_one(self):
        out = qh.PolicyOutput("beta", alpha=np.array([[1.8]]), beta=np.array([[3.2]]))
        bounds = qh.ActionBounds([-2.0], [2.0])
        grid = np.linspace(-2.0 + 1e-9, 2.0 - 1e-9, 20001)
        dens = np.array(
            [
                math.exp(qh.log_prob(out, np.array([[a]]), bounds)[0])
                for a in grid
            ]
        )
        integral = np.trapezoid(dens, grid)
        assert integral == pytest.approx(1.0, abs=1e-3)

    def test_sampling_requires_bounds_for_beta(self, rng):
        out = qh.PolicyOutput("beta", alpha=np.array([[2.0]]), beta=np.array([[2.0]]))
        with pytest.raises(ValueError):
            qh.sample_and_logprob(out, rng)

    def test_value_head_cannot_sample(self, rng):
        out = qh.PolicyOutput("value", value=np.zeros(1))
        with pytest.raises(ValueError):
            qh.sample_and_logprob(out, rng)

    def test_bounds_validated(self):
        with pytest.raises(ValueError):
            qh.ActionBounds([1.0], [1.0])


class TestEntropy:
    def test_uniform_discrete(self):
        out = qh.PolicyOutput("discrete", probs=np.full((1, 4), 0.25))
        assert qh.entropy(out)[0] == pytest.approx(math.log(4.0))

    def test_beta_one_one_is_uniform_density(self):
        out = qh.PolicyOutput("beta", alpha=np.array([[1.0]]), beta=np.array([[1.0]]))
        bounds = qh.ActionBounds([0.0], [1.0])
        assert qh.entropy(out, bounds)[0] == pytest.approx(0.0, abs=1e-12)

    def test_beta_entropy_matches_quadrature(self):
        for a, b in [(2.0, 2.0), (1.7, 3.1), (4.2, 1.3)]:
            out = qh.PolicyOutput("beta", alpha=np.array([[a]]), beta=np.array([[b]]))
            bounds = qh.ActionBounds([0.0], [1.0])
            got = qh.entropy(out, bounds)[0]

            from scipy.stats import beta as beta_dist

            def neg_plogp(x, a=a, b=b):
                p = beta_dist.pdf(x, a, b)
                return -p * math.log(p) if p > 0 else 0.0

            want, _err = integrate.quad(neg_plogp, 0.0, 1.0, limit=200)
            assert got == pytest.approx(want, abs=1e-6)

    def test_scaled_beta_entropy_adds_log_span(self):
        out = qh.PolicyOutput("beta", alpha=np.array([[2.5]]), beta=np.array([[2.5]]))
        unit = qh.entropy(out, qh.ActionBounds([0.0], [1.0]))[0]
        wide = qh.entropy(out, qh.ActionBounds([-2.0], [2.0]))[0]
        assert wide == pytest.approx(unit + math.log(4.0), abs=1e-12)


class TestParameterCounts:
    @pytest.mark.parametrize(
        "kwargs,state_dim,output,expected",
        [
            (dict(n_qubits=4, n_layers=1, post_init=qh.Constant(0.1)), 4, qh.Discrete(2), (24, 32)),
            (
                dict(n_qubits=4, n_layers=1, use_pre_encoding=True, pre_init=qh.Xavier()),
                8,
                qh.Discrete(4),
                (24, 72),
            ),
            (
                dict(n_qubits=4, n_layers=1, use_pre_encoding=True, pre_init=qh.Orthogonal()),
                24,
                qh.ContinuousBeta(4),
                (24, 152),
            ),
            (dict(n_qubits=3, n_layers=2), 3, qh.ContinuousBeta(1), (30, 36)),
        ],
    )
    def test_reference_configurations(self, rng, kwargs, state_dim, output, expected):
        net = make_net(rng, state_dim=state_dim, output=output, **kwargs)
        assert net.count_parameters() == expected

    def test_weighted_mode_counts_omega(self, rng):
        net = make_net(rng, policy_mode="weighted")
        quantum, total = net.count_parameters()
        assert quantum == 24
        assert total == 24 + 2  # omega only; temperature not trainable by default

    def test_trainable_temperature_counted(self, rng):
        net = make_net(rng, policy_mode="weighted", temperature_trainable=True)
        assert net.count_parameters()[1] == 27


class TestBackward:
    def test_backward_without_forward_raises(self, rng):
        net = make_net(rng)
        with pytest.raises(RuntimeError):
            net.backward(np.zeros((1, 2)))

    def test_zero_lambda_kills_pre_encoder_gradients(self, rng):
        net = make_net(
            rng, state_dim=8, use_pre_encoding=True, pre_init=qh.Xavier(),
            output=qh.Discrete(4), lambda_init=0.0,
        )
        states = rng.normal(size=(4, 8))
        out = net.forward(states, cache=True)
        grads = net.backward(qh.log_prob_grads(out, np.array([0, 1, 2, 3])))
        np.testing.assert_array_equal(grads["pre.weight"], 0.0)

    def test_duplicated_rows_contribute_identically(self, rng):
        net = make_net(rng, post_init=qh.Xavier())
        state = rng.normal(size=(1, 4))
        out1 = net.forward(state, cache=True)
        g1 = net.backward(qh.log_prob_grads(out1, np.array([1])))
        out2 = net.forward(np.vstack([state, state]), cache=True)
        g2 = net.backward(qh.log_prob_grads(out2, np.array([1, 1])))
        for k in g1:
            np.testing.assert_allclose(2.0 * g1[k], g2[k], rtol=1e-12, atol=1e-12)

    def test_backward_matches_finite_differences(self, rng):
        net = make_net(
            rng, state_dim=6, use_pre_encoding=True,
            pre_init=qh.Constant(0.1), post_init=qh.Xavier(), output=qh.Discrete(3),
        )
        states = rng.normal(size=(4, 6))
        actions = np.array([0, 1, 2, 0])
        out = net.forward(states, cache=True)
        grads = net.backward(qh.log_prob_grads(out, actions))

        def loss():
            o = net.forward(states)
            return float(qh.log_prob(o, actions).sum())

        h = 1e-6
        for name, arr in net.parameters().items():
            flat = arr.reshape(-1)
            gflat = np.asarray(grads[name]).reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                up = loss()
                flat[j] = orig - h
                dn = loss()
                flat[j] = orig
                fd = (up - dn) / (2 * h)
                assert abs(fd - gflat[j]) <= 1e-5 * max(1.0, abs(fd)), (name, j)


class TestSampledModes:
    def test_shots_forward_reproducible_and_bounded(self, rng):
        cfg = qh.HybridNetConfig(2, 1, 2, qh.Discrete(2), post_init=qh.Xavier())
        states = rng.normal(size=(3, 2))
        n1 = qh.HybridNet(cfg, np.random.default_rng(0), QuantumBackend(Shots(200, seed=1)))
        n2 = qh.HybridNet(cfg, np.random.default_rng(0), QuantumBackend(Shots(200, seed=1)))
        np.testing.assert_array_equal(n1.forward(states).probs, n2.forward(states).probs)

    def test_noisy_forward_produces_valid_distributions(self, rng):
        cfg = qh.HybridNetConfig(2, 1, 2, qh.Discrete(2), post_init=qh.Xavier())
        net = qh.HybridNet(cfg, np.random.default_rng(0), QuantumBackend(Noisy(200, 0.02, 0.02, seed=2)))
        out = net.forward(rng.normal(size=(3, 2)))
        out.validate()

    def test_parameter_shift_vjp_agrees_with_adjoint_in_exact_mode(self, rng):
        cfg = qh.HybridNetConfig(2, 1, 2, qh.Discrete(2), post_init=qh.Xavier())
        net = qh.HybridNet(cfg, np.random.default_rng(0))
        states = rng.normal(size=(3, 2))
        out = net.forward(states, cache=True)
        dz = rng.normal(size=(3, 2))
        cache = net._cache
        adj_var, adj_enc = net.template.program.adjoint_vjp(
            net.ansatz_params.phi.reshape(-1), cache["enc_flat"], dz, amps=cache["amps"]
        )
        from qppo.hybrid import _parameter_shift_vjp

        ps_var, ps_enc = _parameter_shift_vjp(
            net, net.ansatz_params.phi.reshape(-1), cache["enc_flat"], dz
        )
        np.testing.assert_allclose(adj_var, ps_var, atol=1e-10)
        np.testing.assert_allclose(adj_enc, ps_enc, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_discrete_probabilities_always_normalized(seed):
    rng = np.random.default_rng(seed)
    net = make_net(rng, post_init=qh.Xavier())
    out = net.forward(rng.normal(size=(4, 4)) * 3.0)
    assert np.all(out.probs >= 0)
    np.testing.assert_allclose(out.probs.sum(axis=1), 1.0, atol=1e-9)
