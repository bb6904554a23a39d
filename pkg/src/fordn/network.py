"""Unfolded sparse-estimation network: forward, backprop, Adam, training.

The network mirrors ``depth`` truncated iterations of the classical
thresholding update ``f <- h_lam(W y + S f)`` starting from f = 0, with W and
S shared across layers and learned. A normalization layer
``f <- (f + tau) / ||f + tau||_1`` makes the output a mixture-fraction
vector. Weights are initialized at the classical values W = G^T and
S = I - G^T G of the coarse dictionary, so the untrained network reproduces
the iterative solver exactly.

Everything here is plain numpy: the matrices are small (coarse basis), so
batched level-3 BLAS is the fast path and the analytic gradients stay easy
to verify against finite differences.
"""

from dataclasses import dataclass, field

import numpy as np

from .signals import add_rician_noise, rician_sigma
from .geometry import attenuation

DEFAULT_LAMBDA = 0.01
DEFAULT_TAU = 1e-10
DEFAULT_DEPTH = 8
DEFAULT_LEARNING_RATE = 0.001
DEFAULT_BATCH_SIZE = 64
DEFAULT_EPOCHS = 8
DEFAULT_SAMPLES_PER_COMBO = 500


@dataclass
class UnfoldedNetParams:
    """Learned matrices and fixed hyperparameters of the unfolded network."""

    W: np.ndarray                 # (N', K)
    S: np.ndarray                 # (N', N')
    lam: float = DEFAULT_LAMBDA
    tau: float = DEFAULT_TAU
    depth: int = DEFAULT_DEPTH

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.S = np.asarray(self.S, dtype=np.float64)
        if self.W.ndim != 2 or self.S.shape != (self.W.shape[0],) * 2:
            raise ValueError("W must be (N', K) and S (N', N')")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.S))):
            raise ValueError("parameters must be finite")
        if self.lam < 0 or self.tau <= 0 or self.depth < 1:
            raise ValueError("require lam >= 0, tau > 0, depth >= 1")

    @property
    def n_basis(self):
        return self.W.shape[0]

    @property
    def n_signals(self):
        return self.W.shape[1]

    def copy(self):
        return UnfoldedNetParams(self.W.copy(), self.S.copy(), self.lam,
                                 self.tau, self.depth)


def classical_params(dictionary, lam=DEFAULT_LAMBDA, tau=DEFAULT_TAU,
                     depth=DEFAULT_DEPTH):
    """Unit-step classical values W = G^T, S = I - G^T G.

    These mirror the textbook thresholding iteration verbatim. For the
    attenuation dictionaries used here the unit step diverges (the largest
    eigenvalue of G^T G is far above 1), so use
    :func:`stable_classical_params` wherever the iteration must actually
    converge; this form exists as the reference for equivalence checks.
    """
    G = dictionary.G if hasattr(dictionary, "G") else np.asarray(dictionary)
    W = G.T.copy()
    S = np.eye(G.shape[1]) - G.T @ G
    return UnfoldedNetParams(W=W, S=S, lam=lam, tau=tau, depth=depth)


def stable_classical_params(dictionary, lam=DEFAULT_LAMBDA, tau=DEFAULT_TAU,
                            depth=DEFAULT_DEPTH):
    """Step-scaled classical values W = mu G^T, S = I - mu G^T G.

    ``mu = 1 / lambda_max(G^T G)`` is the largest gradient step for which the
    thresholded projected-gradient iteration converges, making the untrained
    network a working (if coarse) sparse estimator and a sensible training
    start.
    """
    G = dictionary.G if hasattr(dictionary, "G") else np.asarray(dictionary)
    GtG = G.T @ G
    mu = 1.0 / float(np.linalg.eigvalsh(GtG).max())
    W = mu * G.T
    S = np.eye(G.shape[1]) - mu * GtG
    return UnfoldedNetParams(W=W, S=S, lam=lam, tau=tau, depth=depth)


@dataclass
class Activations:
    """Forward-pass intermediates retained for backprop."""

    y: np.ndarray          # (B, K) input batch
    pre: list              # per layer (B, N') pre-activations
    out: np.ndarray        # (B, N') normalized output
    denom: np.ndarray      # (B, 1) normalization denominators


def forward(params, y):
    """Run the network on one signal or a batch of signals.

    Returns ``(fractions, activations)`` where fractions is nonnegative and
    sums to one along the basis axis.
    """
    y_arr = np.asarray(y, dtype=np.float64)
    single = y_arr.ndim == 1
    Y = y_arr[None, :] if single else y_arr
    if Y.shape[1] != params.n_signals:
        raise ValueError("input length does not match W")

    WY = Y @ params.W.T
    F = np.zeros((Y.shape[0], params.n_basis))
    pre = []
    for _ in range(params.depth):
        A = WY + F @ params.S.T
        pre.append(A)
        F = np.where(A >= params.lam, A, 0.0)
    G = F + params.tau
    denom = G.sum(axis=1, keepdims=True)
    out = G / denom
    acts = Activations(y=Y, pre=pre, out=out, denom=denom)
    return (out[0] if single else out), acts


def backward(params, y, target, acts):
    """Gradients of the MSE loss w.r.t. the shared W and S.

    The thresholded-ReLU subderivative is 1 where the pre-activation is at or
    above the threshold, else 0; the normalization layer contributes
    ``(u - (u . out)) / denom`` for upstream gradient u, applied per sample.
    Returns ``(dW, dS, loss)``.
    """
    y_arr = np.asarray(y, dtype=np.float64)
    Y = y_arr[None, :] if y_arr.ndim == 1 else y_arr
    t_arr = np.asarray(target, dtype=np.float64)
    T = t_arr[None, :] if t_arr.ndim == 1 else t_arr
    if len(acts.pre) != params.depth or acts.y.shape != Y.shape or \
            not np.array_equal(acts.y, Y):
        raise ValueError("activations do not match this sample batch")
    if T.shape != acts.out.shape:
        raise ValueError("target shape does not match network output")

    B, n = acts.out.shape
    diff = acts.out - T
    loss = float((diff * diff).mean())
    d_out = 2.0 * diff / (B * n)
    # Normalization-layer Jacobian applied to the upstream gradient.
    dF = (d_out - (d_out * acts.out).sum(axis=1, keepdims=True)) / acts.denom

    dW = np.zeros_like(params.W)
    dS = np.zeros_like(params.S)
    for t in range(params.depth - 1, -1, -1):
        mask = acts.pre[t] >= params.lam
        dA = np.where(mask, dF, 0.0)
        dW += dA.T @ Y
        if t > 0:
            prev = acts.pre[t - 1]
            F_prev = np.where(prev >= params.lam, prev, 0.0)
            dS += dA.T @ F_prev
        dF = dA @ params.S
    return dW, dS, loss


@dataclass
class AdamState:
    """First/second moment accumulators for W and S."""

    m_W: np.ndarray
    v_W: np.ndarray
    m_S: np.ndarray
    v_S: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(m_W=np.zeros_like(params.W), v_W=np.zeros_like(params.W),
                   m_S=np.zeros_like(params.S), v_S=np.zeros_like(params.S))


def adam_step(params, state, dW, dS, lr=DEFAULT_LEARNING_RATE, beta1=0.9,
              beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of W and S, in place."""
    state.t += 1
    for p, g, m, v in ((params.W, dW, state.m_W, state.v_W),
                       (params.S, dS, state.m_S, state.v_S)):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** state.t)
        v_hat = v / (1.0 - beta2 ** state.t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


@dataclass(frozen=True)
class TrainingSample:
    y: np.ndarray
    target: np.ndarray


@dataclass
class TrainingSet:
    """Synthesized supervision: noisy signals with exact fraction targets.

    Samples are stored as arrays (inputs plus an index into the per-combination
    target table) to keep large sets compact; indexing materializes
    :class:`TrainingSample` objects.
    """

    inputs: np.ndarray           # (n, K)
    combo_ids: np.ndarray        # (n,)
    combo_targets: np.ndarray    # (n_combos, N')
    provenance: dict = field(default_factory=dict)
    region_id: int = 1

    def __len__(self):
        return self.inputs.shape[0]

    def __getitem__(self, i):
        return TrainingSample(y=self.inputs[i],
                              target=self.combo_targets[self.combo_ids[i]])

    @property
    def n_basis(self):
        return self.combo_targets.shape[1]

    def targets_for(self, idx):
        return self.combo_targets[self.combo_ids[idx]]


def fraction_combinations(m):
    """All mixture-fraction combinations in 0.1 steps for m orientations.

    One orientation gets fraction 1; multiple orientations enumerate every
    composition of 1.0 into m parts from the grid {0.1, ..., 0.9}.
    """
    if m == 1:
        return [(1.0,)]
    combos = []

    def rec(prefix, remaining_parts, remaining_tenths):
        if remaining_parts == 1:
            if 1 <= remaining_tenths <= 9:
                combos.append(tuple(prefix + [remaining_tenths / 10.0]))
            return
        for tenths in range(1, min(9, remaining_tenths - (remaining_parts - 1)) + 1):
            rec(prefix + [tenths / 10.0], remaining_parts - 1,
                remaining_tenths - tenths)

    rec([], m, 10)
    return combos


def synthesize_training_set(fo_configs, basis, scheme, snr, seed,
                            samples_per_combo=DEFAULT_SAMPLES_PER_COMBO,
                            lam1=None, lam2=None, region_id=1):
    """Synthesize supervised samples for a set of coarse FO configurations.

    Parameters
    ----------
    fo_configs : sequence of tuples of basis indices
        Each configuration names 1 to 3 atoms of ``basis``.
    basis : DirectionSet
        The coarse basis the targets are expressed on.
    scheme : GradientScheme
    snr : float
        Rician SNR applied to every sample.
    seed : int
    samples_per_combo : int
        Noisy draws per (configuration, fraction combination).

    Returns
    -------
    TrainingSet
    """
    from .geometry import DEFAULT_LAMBDA1, DEFAULT_LAMBDA2

    lam1 = DEFAULT_LAMBDA1 if lam1 is None else lam1
    lam2 = DEFAULT_LAMBDA2 if lam2 is None else lam2
    configs = [tuple(int(i) for i in cfg) for cfg in fo_configs]
    if not configs:
        raise ValueError("need at least one FO configuration")
    for cfg in configs:
        if not 1 <= len(cfg) <= 3:
            raise ValueError(f"configurations must have 1-3 FOs, got {cfg}")

    V = basis.array
    K = len(scheme)
    n_basis = V.shape[0]
    A_all = attenuation(scheme.array, scheme.bval_array, V, lam1, lam2)

    rng = np.random.default_rng(seed)
    sigma = rician_sigma(snr)
    targets = []
    blocks = []
    combo_ids = []
    combo = 0
    for cfg in configs:
        atoms = A_all[:, list(cfg)]
        for fracs in fraction_combinations(len(cfg)):
            clean = atoms @ np.asarray(fracs)
            noise = rng.normal(0.0, sigma, size=(samples_per_combo, 2, K))
            noisy = np.sqrt((clean[None, :] + noise[:, 0]) ** 2
                            + noise[:, 1] ** 2)
            t = np.zeros(n_basis)
            t[list(cfg)] = fracs
            targets.append(t)
            blocks.append(noisy)
            combo_ids.append(np.full(samples_per_combo, combo, dtype=np.int64))
            combo += 1

    return TrainingSet(
        inputs=np.concatenate(blocks, axis=0),
        combo_ids=np.concatenate(combo_ids),
        combo_targets=np.array(targets),
        provenance={"configs": configs, "snr": snr, "seed": seed,
                    "samples_per_combo": samples_per_combo,
                    "lam1": lam1, "lam2": lam2},
        region_id=region_id)


def train(dataset, dictionary, epochs=DEFAULT_EPOCHS,
          batch_size=DEFAULT_BATCH_SIZE, seed=0, lr=DEFAULT_LEARNING_RATE,
          lam=DEFAULT_LAMBDA, tau=DEFAULT_TAU, depth=DEFAULT_DEPTH):
    """Train the unfolded network on a synthesized set.

    Samples are reshuffled every epoch with a seeded RNG; the last partial
    batch is kept and the per-epoch loss is the sample-weighted mean of the
    batch losses. Deterministic for fixed seed and data.

    Returns ``(params, loss_history)`` with one loss per epoch.
    """
    if len(dataset) == 0:
        raise ValueError("training set is empty")
    params = stable_classical_params(dictionary, lam=lam, tau=tau, depth=depth)
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(seed)
    n = len(dataset)
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            Y = dataset.inputs[idx]
            T = dataset.targets_for(idx)
            _, acts = forward(params, Y)
            dW, dS, loss = backward(params, Y, T, acts)
            adam_step(params, state, dW, dS, lr=lr)
            total += loss * len(idx)
        history.append(total / n)
    return params, history
