import numpy as np
import pytest

from divkit.dataio import RunSeed
from divkit.errors import BadArguments, DataError, EmptyBank
from divkit.guidance import (
    GuidanceConfig,
    MemoryBank,
    MixtureSpec2D,
    NoiseSchedule,
    count_covered_modes,
    geometric_weights,
    guided_step,
    irke_gradient,
    irke_objective,
    noised_log_density,
    noised_mixture_score,
    reverse_step,
    run_guided_sampling,
    sample_mixture,
)
from divkit.kernels import KernelSpec

KERNEL = KernelSpec("gaussian", 1.0)


def make_cfg(eta=0.03, steps=100, every=10, bw=1.0):
    return GuidanceConfig.constant(eta, steps, every, KernelSpec("gaussian", bw))


# -- mixture specs and schedules -------------------------------------------------

def test_grid_layout_centers():
    spec = MixtureSpec2D.grid(2, 2, 2.0, 0.1)
    assert sorted(map(tuple, spec.centers.tolist())) == [
        (-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)
    ]


def test_circle_layout_radius():
    spec = MixtureSpec2D.circle(8, 3.0, 0.1)
    assert np.allclose(np.linalg.norm(spec.centers, axis=1), 3.0)
    assert spec.n_modes == 8


def test_mixture_validation():
    with pytest.raises(DataError):
        MixtureSpec2D(np.zeros((2, 2)), np.array([0.5, 0.5]), 0.1)  # duplicate centers
    with pytest.raises(BadArguments):
        MixtureSpec2D(np.array([[0.0, 0.0]]), np.array([1.0]), 0.0)


def test_schedule_shapes():
    for sched in (NoiseSchedule.linear_beta(50), NoiseSchedule.cosine(50)):
        assert sched.steps == 50
        assert sched.alpha_bar_at(0) == 1.0
        ab = sched.alphas_bar
        assert ab[0] > 0.9 and (np.diff(ab) < 0).all() and ab[-1] > 0.0
    with pytest.raises(BadArguments):
        NoiseSchedule(np.linspace(0.99, 0.5, 5))  # too few steps


def test_geometric_weights():
    w = geometric_weights(4, 0.5)
    assert w.sum() == pytest.approx(1.0)
    assert np.allclose(w[:-1] / w[1:], 2.0)


def test_linear_decay_schedule_direction():
    cfg = GuidanceConfig.linear_decay(0.2, 50, 5, KERNEL)
    assert cfg.eta_t[49] == pytest.approx(0.2)  # first reverse step, t = 50
    assert cfg.eta_t[0] == 0.0                  # final step, t = 1


# -- scores ------------------------------------------------------------------------

def test_score_single_component_linear_form():
    spec = MixtureSpec2D(np.array([[1.0, -2.0]]), np.array([1.0]), 0.3)
    sched = NoiseSchedule.cosine(100)
    for t in (0, 10, 60, 100):
        ab = sched.alpha_bar_at(t)
        var = ab * 0.3**2 + (1 - ab)
        z = np.array([0.7, 0.4])
        expected = -(z - np.sqrt(ab) * spec.centers[0]) / var
        assert np.allclose(noised_mixture_score(z, t, spec, sched), expected, rtol=1e-12)


def test_score_symmetric_midpoint_zero():
    spec = MixtureSpec2D(np.array([[-1.0, 0.0], [1.0, 0.0]]), np.array([0.5, 0.5]), 0.2)
    sched = NoiseSchedule.cosine(100)
    score = noised_mixture_score(np.array([0.0, 0.3]), 40, spec, sched)
    assert abs(score[0]) < 1e-12


def test_score_matches_log_density_gradient():
    spec = MixtureSpec2D.grid(3, 3, 1.5, 0.15)
    sched = NoiseSchedule.cosine(120)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(300):
        z = rng.normal(size=2) * 2.5
        t = int(rng.integers(0, 121))
        s = noised_mixture_score(z, t, spec, sched)
        _, var = np.sqrt(sched.alpha_bar_at(t)), sched.alpha_bar_at(t) * 0.15**2 + 1 - sched.alpha_bar_at(t)
        h = 2e-6 * np.sqrt(var)
        fd = np.empty(2)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd[i] = (
                noised_log_density(z + e, t, spec, sched)
                - noised_log_density(z - e, t, spec, sched)
            ) / (2 * h)
        worst = max(worst, np.linalg.norm(fd - s) / max(np.linalg.norm(fd), 1e-9))
    assert worst <= 1e-6


# -- reverse steps -------------------------------------------------------------------

def test_ddim_contracts_to_single_mode():
    spec = MixtureSpec2D(np.array([[0.0, 0.0]]), np.array([1.0]), 0.05)
    sched = NoiseSchedule.cosine(200)
    z = np.array([3.0, -2.0])
    for t in range(200, 0, -1):
        z = reverse_step(z, t, spec, sched)
    assert np.linalg.norm(z) < 0.2


def test_ancestral_moments_single_component():
    spec = MixtureSpec2D(np.array([[0.5, -0.3]]), np.array([1.0]), 0.4)
    sched = NoiseSchedule.cosine(200)
    root = RunSeed(7)
    n = 4000
    out = np.empty((n, 2))
    for i in range(n):
        gen = root.child(i).generator()
        z = gen.standard_normal(2)
        for t in range(200, 0, -1):
            z = reverse_step(z, t, spec, sched, gen)
        out[i] = z
    se_mean = 0.4 / np.sqrt(n)
    assert np.abs(out.mean(axis=0) - [0.5, -0.3]).max() <= 3 * se_mean
    se_std = 0.4 / np.sqrt(2 * n)
    assert np.abs(out.std(axis=0, ddof=1) - 0.4).max() <= 3 * se_std + 0.01


def test_reverse_step_reproducible():
    spec = MixtureSpec2D.grid(2, 2, 2.0, 0.1)
    sched = NoiseSchedule.cosine(50)

    def run():
        gen = RunSeed(3).generator()
        z = gen.standard_normal(2)
        for t in range(50, 0, -1):
            z = reverse_step(z, t, spec, sched, gen)
        return z

    assert np.array_equal(run(), run())


def test_reverse_step_rejects_t_zero():
    spec = MixtureSpec2D(np.array([[0.0, 0.0]]), np.array([1.0]), 0.1)
    with pytest.raises(BadArguments):
        reverse_step(np.zeros(2), 0, spec, NoiseSchedule.cosine(20))


# -- memory bank, objective, guidance -------------------------------------------------

def test_bank_capacity_fifo():
    bank = MemoryBank(capacity=3)
    for i in range(5):
        bank.add(np.array([float(i), 0.0]))
    arr = bank.as_array()
    assert len(bank) == 3
    assert arr[:, 0].tolist() == [2.0, 3.0, 4.0]


def test_irke_objective_far_and_coincident():
    bank = MemoryBank(10)
    bank.add(np.array([0.0, 0.0]))
    assert irke_objective(np.array([50.0, 0.0]), bank, KERNEL) < 1e-12
    assert irke_objective(np.array([0.0, 0.0]), bank, KERNEL) == pytest.approx(1.0)


def test_irke_objective_equidistant_pair():
    bank = MemoryBank(10)
    bank.add(np.array([-1.0, 0.0]))
    bank.add(np.array([1.0, 0.0]))
    r = np.sqrt(2.0)
    val = irke_objective(np.array([0.0, 1.0]), bank, KERNEL)
    k = np.exp(-(r**2) / 2.0)
    assert val == pytest.approx(k * k, rel=1e-12)


def test_irke_objective_empty_bank():
    with pytest.raises(EmptyBank):
        irke_objective(np.zeros(2), MemoryBank(4), KERNEL)


def test_irke_gradient_matches_fd():
    rng = np.random.default_rng(5)
    bank = MemoryBank(20)
    for _ in range(8):
        bank.add(rng.normal(size=2))
    for _ in range(20):
        z = rng.normal(size=2) * 1.5
        g = irke_gradient(z, bank, KERNEL)
        h = 1e-6
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd = (irke_objective(z + e, bank, KERNEL) - irke_objective(z - e, bank, KERNEL)) / (2 * h)
            assert abs(fd - g[i]) <= 1e-6 * max(abs(fd), 1e-6)


def test_guided_step_eta_zero_identity():
    bank = MemoryBank(4)
    bank.add(np.array([0.5, 0.5]))
    cfg = make_cfg(eta=0.0)
    z = np.array([1.0, 2.0])
    assert np.array_equal(guided_step(z, bank, cfg, 100), z)


def test_guided_step_off_cadence_identity():
    bank = MemoryBank(4)
    bank.add(np.array([0.5, 0.5]))
    cfg = make_cfg(eta=0.1, steps=100, every=10)
    z = np.array([1.0, 2.0])
    assert np.array_equal(guided_step(z, bank, cfg, 99), z)  # (100-99) % 10 != 0
    assert not np.array_equal(guided_step(z, bank, cfg, 90), z)


def test_guided_step_stationary_at_bank_entry():
    bank = MemoryBank(4)
    z = np.array([0.7, -0.2])
    bank.add(z)
    cfg = make_cfg(eta=0.1)
    assert np.array_equal(guided_step(z.copy(), bank, cfg, 100), z)


def test_guided_step_moves_away_from_entry():
    bank = MemoryBank(4)
    b = np.array([0.0, 0.0])
    bank.add(b)
    cfg = make_cfg(eta=0.05)
    z = np.array([0.4, 0.3])
    out = guided_step(z, bank, cfg, 100)
    assert float((out - z) @ (z - b)) > 0.0


def test_guided_step_empty_bank_identity():
    cfg = make_cfg()
    z = np.array([1.0, 1.0])
    assert np.array_equal(guided_step(z, MemoryBank(4), cfg, 100), z)


def test_guided_step_descends_objective_small_eta():
    rng = np.random.default_rng(11)
    bank = MemoryBank(50)
    for _ in range(12):
        bank.add(rng.normal(size=2))
    for _ in range(100):
        z = rng.normal(size=2) * 1.2
        g = irke_gradient(z, bank, KERNEL)
        if np.linalg.norm(g) < 1e-12:
            continue
        before = irke_objective(z, bank, KERNEL)
        eta = 1e-3
        while eta > 1e-9:
            after = irke_objective(z - eta * g, bank, KERNEL)
            if after < before:
                break
            eta /= 2.0
        assert after < before


# -- end-to-end runs -------------------------------------------------------------------

def test_run_deterministic_and_eta_zero_equals_baseline():
    spec = MixtureSpec2D.grid(2, 2, 2.0, 0.1)
    sched = NoiseSchedule.cosine(60)
    cfg = GuidanceConfig.constant(0.0, 60, 10, KERNEL)
    rng = RunSeed(42)
    a = run_guided_sampling(spec, spec.weights, 30, sched, cfg, rng)
    b = run_guided_sampling(spec, spec.weights, 30, sched, cfg, rng)
    assert np.array_equal(a.guided.samples.data, b.guided.samples.data)
    # eta == 0: guidance is a bitwise no-op
    assert np.array_equal(a.guided.samples.data, a.unguided.samples.data)
    assert a.guided.rke == a.unguided.rke


def test_run_uniform_base_covers_all_modes():
    # coupon-collector: 600 near-uniform draws miss one of 16 modes with
    # probability around 16 * (15/16)**600 ~ 1e-16
    spec = MixtureSpec2D.grid(4, 4, 2.0, 0.1)
    sched = NoiseSchedule.cosine(120)
    cfg = GuidanceConfig.constant(0.0, 120, 10, KERNEL)
    res = run_guided_sampling(spec, spec.weights, 600, sched, cfg, RunSeed(1))
    assert res.unguided.covered_modes == 16
    assert res.guided.covered_modes == 16


def test_run_bank_policy_sizes():
    spec = MixtureSpec2D.grid(2, 2, 2.0, 0.1)
    sched = NoiseSchedule.cosine(60)
    cfg = GuidanceConfig.constant(0.01, 60, 10, KERNEL)
    res = run_guided_sampling(spec, spec.weights, 10, sched, cfg, RunSeed(2))
    assert res.guided.samples.n == 10
    assert res.empty_bank_steps > 0  # first trajectory sees an empty bank


def test_bank_all_finals_size_equals_completed_samples():
    from divkit.guidance import _generate

    spec = MixtureSpec2D.grid(2, 2, 2.0, 0.1)
    sched = NoiseSchedule.cosine(40)
    cfg = GuidanceConfig.constant(0.01, 40, 10, KERNEL)
    _, _, bank = _generate(spec, 7, sched, cfg, RunSeed(3), True, True, "all_finals", None)
    assert len(bank) == 7
    _, _, bank = _generate(spec, 3, sched, cfg, RunSeed(3), True, True, "every_k_steps", None)
    assert len(bank) == 3 * len(range(0, 40, 10))


def test_count_covered_modes():
    spec = MixtureSpec2D.grid(2, 2, 2.0, 0.1)
    from divkit.dataio import EmbeddingSet

    samples = EmbeddingSet(spec.centers[:2] + 0.01)
    assert count_covered_modes(samples, spec) == 2


def test_sample_mixture_weights():
    spec = MixtureSpec2D(np.array([[0.0, 0.0], [10.0, 0.0]]), np.array([0.9, 0.1]), 0.01)
    x = sample_mixture(spec, 5000, RunSeed(3))
    frac_far = float((x.data[:, 0] > 5.0).mean())
    assert frac_far == pytest.approx(0.1, abs=0.02)


def test_skewed_base_guidance_improves_rke_and_coverage():
    # the diversity rescue this sandbox exists to demonstrate: with a skewed
    # sampler, repulsion raises order-2 diversity and mode coverage
    spec = MixtureSpec2D.grid(4, 4, 1.5, 0.1)
    sched = NoiseSchedule.cosine(150)
    cfg = GuidanceConfig.constant(0.15, 150, 5, KernelSpec("gaussian", 1.5))
    metric = KernelSpec("gaussian", 1.0)
    w = geometric_weights(16, 0.5)
    rke_wins = cov_strict = 0
    for seed in range(5):
        res = run_guided_sampling(spec, w, 600, sched, cfg, RunSeed(2000 + seed),
                                  metric_kernel=metric)
        rke_wins += res.guided.rke > res.unguided.rke
        cov_strict += res.guided.covered_modes > res.unguided.covered_modes
    assert rke_wins >= 4
    assert cov_strict >= 3  # strictly more modes in a majority of seeds


def test_run_single_mode_spreads_and_trades_quality():
    # guidance on an already-unimodal target: diversity up, fit down
    spec = MixtureSpec2D(np.array([[0.0, 0.0]]), np.array([1.0]), 0.2)
    sched = NoiseSchedule.cosine(100)
    cfg = GuidanceConfig.constant(0.3, 100, 5, KernelSpec("gaussian", 0.5))
    res = run_guided_sampling(spec, spec.weights, 300, sched, cfg, RunSeed(9))
    assert res.guided.rke > res.unguided.rke
    assert res.guided.fd_to_target > res.unguided.fd_to_target
