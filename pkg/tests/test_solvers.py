import numpy as np
import pytest

from fordn.geometry import (Direction, DirectionSet, GradientScheme,
                            dictionary_from_directions, tessellate_hemisphere)
from fordn.solvers import (GuidanceWeights, SparseProblem,
                           compute_guidance_weights, iterative_step,
                           lipschitz_constant, solve_nn_l1,
                           solve_reweighted_l1, solve_weighted_l1,
                           solve_weighted_l1_batch)


def identity_dictionary(n):
    dirs = tessellate_hemisphere(2)[:n]
    scheme = GradientScheme(directions=tuple(dirs), bvals=(1000.0,) * n)
    from fordn.geometry import Dictionary
    return Dictionary(G=np.eye(n), scheme=scheme, tensors=())


def brute_force_single_atom(G, y, beta):
    """Oracle: best single-atom solution of ||Gc e_i - y||^2 + beta c, c>=0."""
    best = (np.inf, None, 0.0)
    base = float(y @ y)
    for i in range(G.shape[1]):
        g = G[:, i]
        c = max(0.0, (g @ y - beta / 2.0) / (g @ g))
        obj = base - 2 * c * (g @ y) + c * c * (g @ g) + beta * c
        if obj < best[0]:
            best = (obj, i, c)
    return best


def objective(G, y, f, w):
    r = G @ f - y
    return float(r @ r + w @ f)


class TestIterativeStep:
    def test_zero_start_matches_substitution(self, rng):
        W = rng.normal(size=(10, 6))
        S = rng.normal(size=(10, 10))
        y = rng.normal(size=6)
        step = iterative_step(np.zeros(10), y, W, S, 0.01, "hard")
        a = W @ y
        assert np.array_equal(step, np.where(a >= 0.01, a, 0.0))

    def test_zero_threshold_hard_identity_on_nonneg(self, rng):
        a = rng.uniform(0, 1, size=8)
        out = iterative_step(np.zeros(8), a, np.eye(8), np.zeros((8, 8)),
                             0.0, "hard")
        assert np.array_equal(out, a)

    def test_paper_threshold_example(self):
        # h_0.01 of (0.005, 0.02) zeroes the first and keeps the second
        W = np.eye(2)
        out = iterative_step(np.zeros(2), np.array([0.005, 0.02]), W,
                             np.zeros((2, 2)), 0.01, "hard")
        assert np.array_equal(out, [0.0, 0.02])

    def test_soft_mode(self):
        out = iterative_step(np.zeros(2), np.array([0.005, 0.02]), np.eye(2),
                             np.zeros((2, 2)), 0.01, "soft")
        assert out == pytest.approx([0.0, 0.01])

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            iterative_step(np.zeros(2), np.zeros(2), np.eye(2),
                           np.zeros((2, 2)), 0.01, "banana")


class TestNnL1:
    def test_zero_observation(self, coarse_dict):
        rep = solve_nn_l1(SparseProblem(coarse_dict, np.zeros(30), 0.1))
        assert np.array_equal(rep.f, np.zeros(73))
        assert rep.kkt_residual <= 1e-4

    def test_identity_projection(self):
        d = identity_dictionary(3)
        rep = solve_nn_l1(SparseProblem(d, np.array([1.0, 0.2, -0.5]), 0.0))
        assert rep.f == pytest.approx([1.0, 0.2, 0.0], abs=1e-8)

    def test_single_atom_recovery_against_brute_force(self, coarse_dict):
        G = coarse_dict.G
        y = G[:, 17]
        rep = solve_nn_l1(SparseProblem(coarse_dict, y, 0.01))
        frac = rep.f / rep.f.sum()
        support = set(np.flatnonzero(frac > 0.1).tolist())
        _, best_atom, _ = brute_force_single_atom(G, y, 0.01)
        assert support == {17} == {best_atom}

    def test_non_finite_rejected(self, coarse_dict):
        with pytest.raises(ValueError):
            SparseProblem(coarse_dict, np.full(30, np.nan), 0.1)
        with pytest.raises(ValueError):
            SparseProblem(coarse_dict, np.zeros(30), -1.0)

    def test_objective_history_nonincreasing(self, coarse_dict, rng):
        y = coarse_dict.G @ rng.dirichlet(np.ones(73))
        rep = solve_nn_l1(SparseProblem(coarse_dict, y, 0.05),
                          record_history=True)
        h = np.array(rep.objective_history)
        assert np.all(np.diff(h) <= 1e-10)

    def test_kkt_on_random_problems(self, rng):
        for trial in range(25):
            k, n = 12, 25
            G = np.abs(rng.normal(size=(k, n))) + 0.05
            G /= np.linalg.norm(G, axis=0, keepdims=True) * rng.uniform(1, 2)
            from fordn.geometry import Dictionary
            d = Dictionary(G=G, scheme=None, tensors=())
            y = rng.uniform(0, 1, size=k)
            beta = rng.choice([0.0, 0.01, 0.1, 0.5])
            rep = solve_nn_l1(SparseProblem(d, y, beta))
            g = 2 * G.T @ (G @ rep.f - y) + beta
            active = rep.f > 0
            assert np.all(np.abs(g[active]) <= 1e-4)
            assert np.all(g[~active] >= -1e-4)
            assert rep.kkt_residual <= 1e-4


class TestReweighted:
    def test_one_round_equals_plain(self, coarse_dict, rng):
        y = coarse_dict.G @ rng.dirichlet(np.ones(73))
        a = solve_nn_l1(SparseProblem(coarse_dict, y, 0.05))
        b = solve_reweighted_l1(SparseProblem(coarse_dict, y, 0.05), rounds=1)
        assert np.array_equal(a.f, b.f)

    def test_two_atom_small_instance(self):
        # N=10 atoms, noiseless half/half mixture; reweighting should land on
        # exactly the two true atoms
        basis = DirectionSet(tuple(tessellate_hemisphere(2))[:10])
        scheme = GradientScheme(
            directions=tuple(tessellate_hemisphere(3))[:12],
            bvals=(1000.0,) * 12)
        d = dictionary_from_directions(scheme, basis)
        y = 0.5 * d.G[:, 2] + 0.5 * d.G[:, 7]
        rep = solve_reweighted_l1(SparseProblem(d, y, 0.05), rounds=5,
                                  eps=1e-3)
        support = set(np.flatnonzero(rep.f / rep.f.sum() > 0.1).tolist())
        assert support == {2, 7}

    def test_weight_monotonicity(self, rng):
        f = rng.uniform(0, 1, size=20)
        eps = 1e-3
        w = 1.0 / (f + eps)
        assert np.all(w >= 1.0 / (f.max() + eps))

    def test_parameter_validation(self, coarse_dict):
        p = SparseProblem(coarse_dict, np.zeros(30), 0.1)
        with pytest.raises(ValueError):
            solve_reweighted_l1(p, rounds=0)
        with pytest.raises(ValueError):
            solve_reweighted_l1(p, eps=0.0)


class TestGuidanceWeights:
    def test_alpha_zero_unit(self, coarse_basis):
        w = compute_guidance_weights(coarse_basis, [Direction(0, 0, 1)], 0.0)
        assert np.array_equal(w.values, np.ones(73))

    def test_aligned_atom_is_minimum(self, coarse_basis):
        guide = coarse_basis[40]
        w = compute_guidance_weights(coarse_basis, [guide], 0.8)
        aligned = np.abs(coarse_basis.array @ guide.as_array()).argmax()
        assert w.values[aligned] == 1.0
        assert w.values.min() == 1.0
        assert np.all(w.values >= 1.0)

    def test_orthogonal_atom_value(self):
        basis = DirectionSet((Direction(0, 0, 1), Direction(1, 0, 0)))
        w = compute_guidance_weights(basis, [Direction(0, 0, 1)], 0.8)
        # aligned atom: 1 - 0.8 = 0.2 (the minimum); orthogonal atom: 1.0
        assert w.values[0] == pytest.approx(1.0)
        assert w.values[1] == pytest.approx(1.0 / 0.2)

    def test_empty_guides_rejected(self, coarse_basis):
        with pytest.raises(ValueError):
            compute_guidance_weights(coarse_basis, [], 0.8)

    def test_alpha_range(self, coarse_basis):
        with pytest.raises(ValueError):
            compute_guidance_weights(coarse_basis, [Direction(0, 0, 1)], 1.0)


class TestWeightedL1:
    def test_unit_weights_bitwise_equal(self, coarse_dict, rng):
        y = coarse_dict.G @ rng.dirichlet(np.ones(73))
        p = SparseProblem(coarse_dict, y, 0.05)
        a = solve_nn_l1(p)
        b = solve_weighted_l1(p, np.ones(73))
        assert np.array_equal(a.f, b.f)
        assert a.objective == b.objective

    def test_guided_single_fiber_recovery(self, coarse_dict, coarse_basis):
        true_atom = 31
        y = coarse_dict.G[:, true_atom]
        w = compute_guidance_weights(coarse_basis, [coarse_basis[true_atom]],
                                     0.8)
        rep = solve_weighted_l1(SparseProblem(coarse_dict, y, 0.25), w)
        frac = rep.f / rep.f.sum()
        assert int(np.argmax(frac)) == true_atom
        # brute-force over single atoms under the same weighted objective
        best = (np.inf, None)
        G = coarse_dict.G
        for i in range(G.shape[1]):
            g = G[:, i]
            beta_i = 0.25 * w.values[i]
            c = max(0.0, (g @ y - beta_i / 2) / (g @ g))
            obj = float(y @ y) - 2 * c * (g @ y) + c * c * (g @ g) + beta_i * c
            if obj < best[0]:
                best = (obj, i)
        assert best[1] == true_atom

    def test_alpha_sweep_mass_outside_guides(self, coarse_dict, coarse_basis):
        # mass on atoms >20 deg away from the guides must not grow with alpha
        from fordn.geometry import angle_matrix_deg

        y = 0.6 * coarse_dict.G[:, 5] + 0.4 * coarse_dict.G[:, 60]
        guides = [coarse_basis[5], coarse_basis[60]]
        gdirs = np.array([g.as_array() for g in guides])
        far = angle_matrix_deg(coarse_basis.array, gdirs).min(axis=1) > 20.0
        prev_mass = None
        for alpha in (0.0, 0.2, 0.4, 0.6, 0.8):
            if alpha == 0.0:
                w = np.ones(73)
            else:
                w = compute_guidance_weights(coarse_basis, guides, alpha).values
            rep = solve_weighted_l1(SparseProblem(coarse_dict, y, 0.25), w)
            frac = rep.f / rep.f.sum()
            mass = float(frac[far].sum())
            if prev_mass is not None:
                assert mass <= prev_mass + 1e-9
            prev_mass = mass

    def test_weighted_kkt(self, coarse_dict, rng):
        for _ in range(10):
            y = coarse_dict.G @ rng.dirichlet(np.ones(73)) \
                + 0.02 * rng.normal(size=30)
            C = np.exp(rng.uniform(0, 2, size=73))
            C /= C.min()
            rep = solve_weighted_l1(SparseProblem(coarse_dict, y, 0.25), C)
            g = 2 * coarse_dict.G.T @ (coarse_dict.G @ rep.f - y) + 0.25 * C
            active = rep.f > 0
            assert np.all(np.abs(g[active]) <= 1e-4)
            assert np.all(g[~active] >= -1e-4)

    def test_batch_matches_single(self, coarse_dict, rng):
        G = coarse_dict.G
        Y = np.stack([G @ rng.dirichlet(np.ones(73)) for _ in range(5)]).T
        thresh = np.full((73, 5), 0.1)
        F, _, obj, kkt = solve_weighted_l1_batch(G, Y, thresh)
        for c in range(5):
            rep = solve_weighted_l1(
                SparseProblem(coarse_dict, Y[:, c], 0.1), np.ones(73))
            assert np.array_equal(F[:, c], rep.f)
        assert np.all(kkt <= 1e-4)


class TestLipschitz:
    def test_matches_eigh(self, coarse_dict, rng):
        L = lipschitz_constant(coarse_dict.G)
        ref = 2 * np.linalg.eigvalsh(coarse_dict.G.T @ coarse_dict.G).max()
        assert L == pytest.approx(ref, rel=1e-6)
