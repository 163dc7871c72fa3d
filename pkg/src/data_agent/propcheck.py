"""Numerical oracles for the two reward propositions and for hand-derived gradients.

Suite (a): the cross-entropy logit gradient has L1 norm 2(1 - p_y), and the
full-parameter gradient norm of a softmax layer rises strictly with 1 - p_y.
Suite (b): the brute-force expected KL gain of one SGD step tracks predictive
entropy (Spearman rank correlation).
Suite (c): backward() agrees with central finite differences.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .nn_core import (
    DenseLayer,
    SgdConfig,
    backward,
    cross_entropy_per_row,
    gradient_vector,
    make_layer,
    network_forward,
    sgd_step,
    softmax_ce_logit_grad,
    softmax_rows,
)

PROP1_TOL = 1e-9
PROP2_MIN_SPEARMAN = 0.9
PROP2_LR = 1e-3
FD_STEP = 1e-4
FD_TOL = 1e-4


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def entropy(p: np.ndarray) -> np.ndarray:
    p = np.atleast_2d(p)
    safe = np.where(p > 0, p, 1.0)
    return -(p * np.log(safe)).sum(axis=1)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) for two distributions, 0 log 0 = 0."""
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def logit_grad_l1(p: np.ndarray, y: int) -> float:
    return float(np.abs(softmax_ce_logit_grad(p[None, :], [y])).sum())


def param_grad_norm(layer: DenseLayer, x: np.ndarray, y: int) -> float:
    """L2 norm of d CE / d (weight, bias) for one sample, through nn_core.backward."""
    probs = softmax_rows(network_forward([layer], x[None, :]))
    backward([layer], softmax_ce_logit_grad(probs, [y]))
    norm = float(np.linalg.norm(gradient_vector([layer])))
    layer.zero_grad()
    return norm


def expected_kl_gain(layer: DenseLayer, x: np.ndarray, lr: float = PROP2_LR) -> float:
    """E_{y ~ p}[KL(p' || p)] where p' follows one SGD step on (x, y); brute force over y."""
    p = softmax_rows(network_forward([layer], x[None, :], cache=False))[0]
    total = 0.0
    for y in range(len(p)):
        if p[y] == 0.0:
            continue
        trial = copy.deepcopy(layer)
        probs = softmax_rows(network_forward([trial], x[None, :]))
        backward([trial], softmax_ce_logit_grad(probs, [y]))
        sgd_step([trial], SgdConfig(lr))
        p_new = softmax_rows(network_forward([trial], x[None, :], cache=False))[0]
        total += p[y] * kl_divergence(p_new, p)
    return total


def suite_prop1(seed: int = 0, samples: int = 1000) -> SuiteResult:
    rng = _rng(seed)
    worst = 0.0
    for _ in range(samples):
        c = int(rng.integers(2, 11))
        p = softmax_rows(rng.normal(0.0, 3.0, size=(1, c)))[0]
        y = int(rng.integers(c))
        worst = max(worst, abs(logit_grad_l1(p, y) - 2.0 * (1.0 - p[y])))

    # sweep the true-class bias of a random softmax layer; 1 - p_y and the
    # parameter-gradient norm must move in lockstep
    layer = make_layer(5, 6, "identity", seed + 1)
    x = rng.normal(size=5)
    y = 2
    gaps, norms = [], []
    for shift in np.linspace(-6.0, 6.0, 41):
        probe = copy.deepcopy(layer)
        probe.bias[y] += shift
        p = softmax_rows(network_forward([probe], x[None, :], cache=False))[0]
        gaps.append(1.0 - p[y])
        norms.append(param_grad_norm(probe, x, y))
    rho = float(spearmanr(gaps, norms)[0])
    passed = worst <= PROP1_TOL and rho == 1.0
    return SuiteResult("prop1-gradient-identity", passed,
                       f"max |L1 - 2(1-p_y)| = {worst:.3e} (tol {PROP1_TOL:g}); sweep spearman = {rho:.6f}")


def prop2_layer(seed: int, classes: int = 3, dim: int = 6, scale: float = 3.0) -> DenseLayer:
    rng = _rng(seed)
    return DenseLayer(rng.normal(0.0, scale, size=(classes, dim)), np.zeros(classes), "identity")


def prop2_samples(seed: int = 0, n: int = 200, classes: int = 3, dim: int = 6):
    """Entropy and expected KL gain for n unit-norm inputs of one fixed softmax layer."""
    layer = prop2_layer(seed, classes, dim)
    rng = _rng(seed + 1)
    xs = rng.normal(size=(n, dim))
    # unit-norm inputs hold the logit scale fixed across the sweep
    xs /= np.linalg.norm(xs, axis=1, keepdims=True)
    ent = entropy(softmax_rows(network_forward([layer], xs, cache=False)))
    kls = np.array([expected_kl_gain(layer, x) for x in xs])
    return ent, kls


def binary_sweep(points: int = 41, dim: int = 6, seed: int = 0):
    """E KL gain over two-class distributions (q, 1 - q) at a fixed input and weight scale.

    Only the bias gap moves, so q sweeps (0, 1) while the step size factor
    ||x||^2 + 1 stays constant. Returns (q values, expected KL gains).
    """
    rng = _rng(seed)
    x = rng.normal(size=dim)
    x /= np.linalg.norm(x)
    qs, kls = [], []
    for gap in np.linspace(-6.0, 6.0, points):
        layer = DenseLayer(np.zeros((2, dim)), np.array([gap, 0.0]), "identity")
        qs.append(float(softmax_rows(network_forward([layer], x[None, :], cache=False))[0, 0]))
        kls.append(expected_kl_gain(layer, x))
    return np.array(qs), np.array(kls)


def suite_prop2(seed: int = 0, n: int = 200) -> SuiteResult:
    ent, kls = prop2_samples(seed, n)
    rho = float(spearmanr(ent, kls)[0])
    qs, sweep = binary_sweep(seed=seed)
    peak_q = float(qs[int(np.argmax(sweep))])
    passed = rho >= PROP2_MIN_SPEARMAN and abs(peak_q - 0.5) < 1e-12
    return SuiteResult("prop2-kl-entropy", bool(passed),
                       f"spearman(H[p], E KL) = {rho:.4f} over {n} inputs (min {PROP2_MIN_SPEARMAN}); "
                       f"two-class sweep peaks at q = {peak_q:.3f}")


def _fd_network(rng, depth: int, width: int, in_dim: int, classes: int, relu_ok: bool = True):
    acts = ["tanh", "sigmoid", "relu"] if relu_ok else ["tanh", "sigmoid"]
    layers, prev = [], in_dim
    for _ in range(depth - 1):
        layers.append(make_layer(prev, width, str(rng.choice(acts)), int(rng.integers(2**31))))
        prev = width
    layers.append(make_layer(prev, classes, "identity", int(rng.integers(2**31))))
    for layer in layers:
        layer.bias[...] = rng.normal(0.0, 0.1, size=layer.bias.shape)
    return layers


def _mean_ce(layers, x, y) -> float:
    return float(cross_entropy_per_row(softmax_rows(network_forward(layers, x, cache=False)), y).mean())


def _near_relu_kink(layers, x, margin: float = 1e-3) -> bool:
    h = x
    for layer in layers:
        pre = h @ layer.weight.T + layer.bias
        if layer.activation == "relu" and np.min(np.abs(pre)) < margin:
            return True
        h = network_forward([layer], h, cache=False)
    return False


def fd_check(layers, x, y, step: float = FD_STEP) -> float:
    """Largest relative error between backward() and central differences."""
    probs = softmax_rows(network_forward(layers, x))
    backward(layers, softmax_ce_logit_grad(probs, y) / len(y))
    worst = 0.0
    for layer in layers:
        for param, grad in ((layer.weight, layer.weight_grad), (layer.bias, layer.bias_grad)):
            for idx in np.ndindex(param.shape):
                orig = param[idx]
                param[idx] = orig + step
                up = _mean_ce(layers, x, y)
                param[idx] = orig - step
                down = _mean_ce(layers, x, y)
                param[idx] = orig
                numeric = (up - down) / (2 * step)
                analytic = grad[idx]
                # absolute floor keeps roundoff on near-zero gradients from dominating
                denom = max(abs(numeric), abs(analytic), 1e-6)
                worst = max(worst, abs(numeric - analytic) / denom)
        layer.zero_grad()
    return worst


def suite_fd(seed: int = 0, networks: int = 10, inputs_per_net: int = 10) -> SuiteResult:
    rng = _rng(seed)
    worst = 0.0
    for _ in range(networks):
        depth = int(rng.integers(1, 4))
        width = int(rng.integers(2, 33))
        in_dim = int(rng.integers(1, 9))
        classes = int(rng.integers(2, 6))
        layers = _fd_network(rng, depth, width, in_dim, classes)
        x = rng.normal(size=(inputs_per_net, in_dim))
        while _near_relu_kink(layers, x):
            x = rng.normal(size=(inputs_per_net, in_dim))
        y = rng.integers(classes, size=inputs_per_net)
        worst = max(worst, fd_check(layers, x, y))
    return SuiteResult("finite-difference-gradients", bool(worst <= FD_TOL),
                       f"max relative error {worst:.3e} over {networks * inputs_per_net} inputs (tol {FD_TOL:g})")


def run_all(seed: int = 0) -> list[SuiteResult]:
    return [suite_prop1(seed), suite_prop2(seed), suite_fd(seed)]
