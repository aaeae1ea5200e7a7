"""Finite-difference gradient oracle shared by the test suite.

Central differences with step 1e-4 on float64. Random configurations are
resampled when a sampled point sits within the step of a ReLU kink, a
log/sigmoid clamp, or a near-zero projection norm: finite differences
are only a valid oracle where the loss is smooth.
"""

import numpy as np

from noisylab import nn

FD_STEP = 1e-4
REL_TOL = 1e-4
KINK_MARGIN = 1e-2


def param_arrays(net):
    for layer in net.layers:
        yield layer.weights
        yield layer.bias


def finite_difference_grads(net, value_fn, h=FD_STEP):
    """Central-difference gradient of value_fn() w.r.t. every net parameter."""
    grads = []
    for arr in param_arrays(net):
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            up = value_fn()
            flat[i] = saved - h
            down = value_fn()
            flat[i] = saved
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(bundle, fd_grads):
    analytic = []
    for dw, db in zip(bundle.d_weights, bundle.d_bias):
        analytic.extend([dw, db])
    worst = 0.0
    for a, f in zip(analytic, fd_grads):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-6)
        worst = max(worst, float((np.abs(a - f) / denom).max()))
    return worst


def random_small_net(rng, with_projection=True):
    in_dim = int(rng.integers(2, 5))
    hidden = tuple(int(rng.integers(3, 6)) for _ in range(int(rng.integers(1, 3))))
    k = int(rng.integers(2, 5))
    proj = int(rng.integers(2, 4)) if with_projection else 2
    return nn.build_network(in_dim, k, hidden=hidden, projection_dim=proj, rng=rng)


def _preacts_clear_of_kinks(net, xs):
    """True when every ReLU pre-activation sits away from zero for all inputs."""
    for x in xs:
        if x is None or len(x) == 0:
            continue
        cache = nn.forward_batch(net, x, want_logits=True, want_projection=True)
        for i, layer in enumerate(net.layers):
            if layer.activation == "relu" and cache.preacts[i] is not None:
                if np.abs(cache.preacts[i]).min() < KINK_MARGIN:
                    return False
        if np.linalg.norm(cache.projection_raw, axis=1).min() < 0.5:
            return False
    return True


def _probs_well_conditioned(net, x, y=None, targets=None):
    probs = nn.softmax(nn.forward_batch(net, x).logits)
    if probs.min() < 1e-4:
        return False
    if y is not None and probs[np.arange(len(y)), y].min() < 1e-3:
        return False
    return True


def _energies_unsaturated(net, feats_or_inputs, temperature, through_extractor):
    if feats_or_inputs is None or len(feats_or_inputs) == 0:
        return True
    if through_extractor:
        logits = nn.forward_batch(net, feats_or_inputs).logits
    else:
        logits = nn.head_forward(net, feats_or_inputs)
    return np.abs(nn.energies(logits, temperature)).max() < 20.0


def sample_config(kind, seed, q=0.7, temperature=1.0, contrast_temperature=0.5):
    """Draw a smooth random (net, batch, value_fn, bundle_fn) configuration.

    Deterministically walks seeds until the sampled point clears all
    non-smooth regions, so the finite-difference oracle applies.
    """
    for attempt in range(200):
        rng = np.random.default_rng((seed, attempt))
        net = random_small_net(rng)
        n = int(rng.integers(2, 6))
        x = rng.normal(size=(n, net.input_dim))
        k = net.n_classes
        if kind == "gce":
            y = rng.integers(0, k, size=n)
            if not (_preacts_clear_of_kinks(net, [x]) and _probs_well_conditioned(net, x, y=y)):
                continue
            batch = nn.TermBatch(x=x, y=y)
            return net, batch, lambda: nn.gce_loss_and_grads(net, x, y, q)[0], \
                lambda: nn.backward(net, batch, "gce", q=q)
        if kind in ("ce", "mse"):
            targets = rng.dirichlet(np.ones(k), size=n)
            if not (_preacts_clear_of_kinks(net, [x]) and _probs_well_conditioned(net, x)):
                continue
            batch = nn.TermBatch(x=x, targets=targets)
            if kind == "ce":
                return net, batch, lambda: nn.soft_ce_loss_and_grads(net, x, targets)[0], \
                    lambda: nn.backward(net, batch, "ce")
            return net, batch, lambda: nn.mse_prob_loss_and_grads(net, x, targets)[0], \
                lambda: nn.backward(net, batch, "mse")
        if kind == "prior_kl":
            if not (_preacts_clear_of_kinks(net, [x]) and _probs_well_conditioned(net, x)):
                continue
            batch = nn.TermBatch(x=x)
            return net, batch, lambda: nn.prior_kl_loss_and_grads(net, x)[0], \
                lambda: nn.backward(net, batch, "prior_kl")
        if kind == "contrastive":
            pairs = int(rng.integers(2, 5))
            views = rng.normal(size=(2 * pairs, net.input_dim))
            if not _preacts_clear_of_kinks(net, [views]):
                continue
            batch = nn.TermBatch(views=views)
            return net, batch, \
                lambda: nn.contrastive_loss_and_grads(net, views, contrast_temperature)[0], \
                lambda: nn.backward(net, batch, "contrastive",
                                    contrast_temperature=contrast_temperature)
        if kind == "energy_bce":
            m = int(rng.integers(1, 5))
            outliers = rng.normal(size=(m, net.feature_dim))
            if not (_preacts_clear_of_kinks(net, [x])
                    and _energies_unsaturated(net, x, temperature, True)
                    and _energies_unsaturated(net, outliers, temperature, False)):
                continue
            batch = nn.TermBatch(clean_inputs=x, outlier_features=outliers)
            return net, batch, \
                lambda: nn.energy_bce_loss_and_grads(
                    net, clean_inputs=x, outlier_features=outliers, temperature=temperature)[0], \
                lambda: nn.backward(net, batch, "energy_bce", temperature=temperature)
        if kind == "total":
            n_u = int(rng.integers(1, 4))
            u = rng.normal(size=(n_u, net.input_dim))
            pairs = int(rng.integers(2, 4))
            views = rng.normal(size=(2 * pairs, net.input_dim))
            m = int(rng.integers(1, 4))
            outliers = rng.normal(size=(m, net.feature_dim))
            support = rng.normal(size=(int(rng.integers(1, 4)), net.input_dim))
            total = nn.TotalLossBatch(
                labeled_inputs=x,
                labeled_targets=rng.dirichlet(np.ones(k), size=n),
                unlabeled_inputs=u,
                unlabeled_targets=rng.dirichlet(np.ones(k), size=n_u),
                contrast_views=views,
                support_inputs=support,
                outlier_features=outliers,
                lambda_u=float(rng.uniform(0.5, 3.0)),
                lambda_reg=float(rng.uniform(0.2, 2.0)),
                lambda_cl=float(rng.uniform(0.2, 2.0)),
                lambda_energy=float(rng.uniform(0.05, 0.5)),
                temperature=temperature,
                contrast_temperature=contrast_temperature,
            )
            if not (_preacts_clear_of_kinks(net, [x, u, views, support])
                    and _probs_well_conditioned(net, x)
                    and _probs_well_conditioned(net, u)
                    and _energies_unsaturated(net, support, temperature, True)
                    and _energies_unsaturated(net, outliers, temperature, False)):
                continue
            batch = nn.TermBatch(total=total)
            return net, batch, lambda: nn.total_loss_and_grads(net, total)[0], \
                lambda: nn.backward(net, batch, "total")
        raise ValueError(f"unknown kind {kind!r}")
    raise RuntimeError(f"could not sample a smooth configuration for {kind!r}")


def run_suite(kind, n_configs=100, seed_base=0):
    """Check analytic vs finite-difference gradients; returns worst error."""
    worst = 0.0
    for s in range(n_configs):
        net, _, value_fn, bundle_fn = sample_config(kind, seed_base + s)
        bundle = bundle_fn()
        fd = finite_difference_grads(net, value_fn)
        worst = max(worst, max_relative_error(bundle, fd))
    return worst
