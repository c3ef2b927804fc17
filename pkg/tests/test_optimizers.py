import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbtune.environment import EvaluationOutcome, Simulator, SimulatorSpec
from dbtune.optimizers import (BayesianOptimizer, DdpgAgent, Mlp, RandomSearch, TuningError, TuningHistory,
                               action_to_config, config_to_action, expected_improvement, gp_fit, gp_predict,
                               make_optimizer, random_search_suggest, reward, run_tuning)
from dbtune.optimizers.gp import GpError, fit_hyperparameters, matern52

from conftest import make_space

EI_AT_ONE = 1.0833154705876863  # Phi(1) + phi(1), mpmath


# --- Gaussian process ---------------------------------------------------------------

def test_matern_diagonal_and_decay(rng):
    X = rng.random((5, 2))
    K = matern52(X, X, 0.5, 2.0)
    assert np.allclose(np.diag(K), 2.0)
    assert np.allclose(K, K.T)
    assert np.all(np.linalg.eigvalsh(K) > -1e-10)
    far = matern52(np.zeros((1, 2)), np.full((1, 2), 50.0), 0.5, 2.0)
    assert far[0, 0] < 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_gp_interpolates_training_points(seed):
    rng = np.random.default_rng(seed)
    X = rng.random((15, 4))
    y = np.cos(3 * X[:, 0]) * X[:, 2] + 5
    mean, var = gp_predict(gp_fit(X, y, 0.7, 1.0, noise=1e-12), X)
    assert np.max(np.abs(mean - y)) <= 1e-6
    assert np.max(var) <= 1e-6


def test_gp_prior_without_data():
    model = gp_fit(np.zeros((0, 3)), np.zeros(0), 0.5, 1.7)
    mean, var = gp_predict(model, np.random.default_rng(0).random((4, 3)))
    assert np.all(mean == 0.0)
    assert np.allclose(var, 1.7)


def test_gp_midpoint_of_symmetric_pair():
    X = np.array([[0.2], [0.8]])
    y = np.array([1.0, 3.0])
    mean, _ = gp_predict(gp_fit(X, y, 0.3, 1.0), np.array([[0.5]]))
    assert mean[0] == pytest.approx(2.0, abs=1e-12)


def test_gp_variance_grows_away_from_data():
    X = np.array([[0.5]])
    model = gp_fit(X, np.array([1.0]), 0.2, 1.0)
    _, var = gp_predict(model, np.array([[0.5], [0.6], [0.9]]))
    assert var[0] < var[1] < var[2]


def test_gp_duplicate_rows_recover_via_jitter():
    X = np.array([[0.3, 0.3]] * 4)
    model = gp_fit(X, np.array([1.0, 1.1, 0.9, 1.0]), 0.5, 1.0, noise=0.0)
    assert model.noise > 0


def test_hyperparameter_grid_returns_best(rng):
    X = rng.random((20, 2))
    y = np.sin(8 * X[:, 0])
    best = fit_hyperparameters(X, y)
    lml = best.log_marginal_likelihood()
    for ls in (0.1, 2.0):
        assert gp_fit(X, y, ls, best.signal, 1e-2).log_marginal_likelihood() <= lml + 1e-9


def test_gp_fit_error_type():
    assert issubclass(GpError, RuntimeError)


# --- expected improvement -----------------------------------------------------------

def test_ei_spot_values():
    ei = expected_improvement(np.array([0.0, 0.0, 1.0, 2.0, -1.0]), np.array([0.0, 1.0, 1.0, 0.0, 0.0]), 0.0)
    assert ei[0] == 0.0
    assert abs(ei[1] - 0.3989423) < 1e-6
    assert abs(ei[2] - EI_AT_ONE) < 1e-6
    assert ei[3] == 2.0  # no uncertainty: plain improvement
    assert ei[4] == 0.0


@given(st.floats(-5, 5), st.floats(1e-4, 9), st.floats(-5, 5))
def test_ei_nonnegative_and_at_least_improvement(mu, var, best):
    ei = expected_improvement(np.array([mu]), np.array([var]), best)[0]
    assert ei >= 0
    assert ei >= mu - best - 1e-12


@given(st.floats(-3, 3), st.floats(0.01, 4), st.floats(0.01, 4))
def test_ei_increases_with_uncertainty(mu, v1, v2):
    lo, hi = sorted((v1, v2))
    e = expected_improvement(np.array([mu, mu]), np.array([lo, hi]), 0.0)
    assert e[0] <= e[1] + 1e-12


# --- MLP ----------------------------------------------------------------------------

def _fd_relative_error(net, x, up, h=1e-5):
    _, cache = net.forward(x, keep=True)
    gw, gb, gx = net.backward(cache, up)
    worst = 0.0
    for params, grads in ((net.weights, gw), (net.biases, gb)):
        for P, G in zip(params, grads):
            for i in np.ndindex(P.shape):
                keep = P[i]
                P[i] = keep + h
                fp = np.sum(net.forward(x) * up)
                P[i] = keep - h
                fm = np.sum(net.forward(x) * up)
                P[i] = keep
                num = (fp - fm) / (2 * h)
                worst = max(worst, abs(num - G[i]) / max(1e-8, abs(num) + abs(G[i])))
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        num = (np.sum(net.forward(xp) * up) - np.sum(net.forward(xm) * up)) / (2 * h)
        worst = max(worst, abs(num - gx[i]) / max(1e-8, abs(num) + abs(gx[i])))
    return worst


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("output", ["tanh", "identity"])
def test_mlp_gradients_match_finite_differences(seed, output):
    rng = np.random.default_rng(seed)
    net = Mlp([6, 9, 8, 2], output, rng, final_scale=0.5)
    x = rng.normal(size=(5, 6))
    up = rng.normal(size=(5, 2))
    assert _fd_relative_error(net, x, up) < 1e-4


def test_mlp_soft_update_and_copy(rng):
    a = Mlp([3, 4, 2], "tanh", rng)
    b = Mlp([3, 4, 2], "tanh", rng)
    c = a.copy()
    c.soft_update(b, 1.0)
    assert all(np.array_equal(p, q) for p, q in zip(c.params, b.params))
    d = a.copy()
    d.soft_update(b, 0.25)
    assert np.allclose(d.weights[0], 0.75 * a.weights[0] + 0.25 * b.weights[0])
    assert not np.shares_memory(a.weights[0], c.weights[0])


def test_mlp_sgd_clips(rng):
    net = Mlp([2, 3, 1], "identity", rng)
    before = [p.copy() for p in net.params]
    gw = [np.full_like(w, 100.0) for w in net.weights]
    gb = [np.full_like(b, 100.0) for b in net.biases]
    norm = net.sgd(gw, gb, lr=0.1, clip=1.0)
    step = math.sqrt(sum(float(np.sum((p - q) ** 2)) for p, q in zip(net.params, before)))
    assert norm > 1.0
    assert step == pytest.approx(0.1, rel=1e-9)


def test_mlp_json_round_trip_and_errors(rng):
    net = Mlp([3, 5, 2], "tanh", rng)
    twin = Mlp.from_json(json.loads(json.dumps(net.to_json())))
    x = rng.normal(size=(4, 3))
    assert np.array_equal(net.forward(x), twin.forward(x))
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 4)))
    with pytest.raises(ValueError):
        Mlp([3], "tanh")
    with pytest.raises(ValueError):
        Mlp([3, 2], "relu")


# --- reward / history ---------------------------------------------------------------

def _outcome(tp, valid=True):
    return EvaluationOutcome(valid, tp, np.full(3, tp))


def test_reward():
    assert reward(66.0, 47.8) == pytest.approx(0.3807531380753138)
    assert reward(0.0, 47.8) == -1.0
    with pytest.raises(ValueError):
        reward(1.0, 0.0)


def test_history_tracks_best_and_trace():
    space = make_space([1.0])
    h = TuningHistory(space, _outcome(10.0))
    for tp, ok in ((8, True), (12, True), (50, False), (11, True), (13, True)):
        h.add(np.array([1.0]), _outcome(tp, ok))
    assert h.best_throughput == 13.0
    assert list(h.trace()) == [8, 12, 12, 12, 13]
    assert h.steps[2].reward == -1.0


def test_invalid_default_aborts():
    with pytest.raises(TuningError):
        TuningHistory(make_space([1.0]), _outcome(0.0, False))


# --- random search ------------------------------------------------------------------

def test_random_search_halves_balanced():
    space = make_space([1.0])
    rng = np.random.default_rng(0)
    draws = np.array([random_search_suggest(space, rng)[0] for _ in range(10_000)])
    assert abs(np.mean(draws < 1.0) - 0.5) < 0.02
    assert draws.min() >= 0.1 and draws.max() <= 10.0


def test_random_search_default_on_bound():
    space = make_space([0.0, 5.0], kinds=["integer", "integer"])
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = random_search_suggest(space, rng)
        assert x[0] == 0.0
        assert x[1] == round(x[1])


# --- DDPG ---------------------------------------------------------------------------

def test_action_mapping():
    space = make_space([1.0, 50.0])
    assert np.allclose(action_to_config(space, np.zeros(2)), [1.0, 50.0])
    assert np.allclose(action_to_config(space, np.ones(2)), [10.0, 500.0])
    assert np.allclose(action_to_config(space, -np.ones(2)), [0.1, 5.0])
    a = np.array([0.3, -0.6])
    assert np.allclose(config_to_action(space, action_to_config(space, a)), a)


def test_ddpg_sigma_schedule():
    agent = DdpgAgent(make_space([1.0, 2.0]), state_dim=3, total_steps=11)
    assert agent.sigma() == pytest.approx(0.5)
    agent.t = 10
    assert agent.sigma() == pytest.approx(0.05)


def test_ddpg_learns_and_checkpoints(tmp_path):
    space = make_space([1.0, 2.0, 3.0])
    spec = SimulatorSpec(dims=3, important_idx=[0, 1], noise_cv=0.0, metrics_dim=5)
    env = Simulator(space, spec, seed=0)
    agent = DdpgAgent(space, state_dim=5, seed=3, total_steps=80)
    w0 = agent.actor.weights[0].copy()
    h = run_tuning(agent, env, space, 80)
    assert len(agent.replay) == 80
    assert not np.array_equal(agent.actor.weights[0], w0)
    assert not np.array_equal(agent.actor.weights[0], agent.actor_target.weights[0])
    # invalid transitions are stored with zero next-state and reward -1
    assert h.best_throughput > 0
    state = json.loads(json.dumps(agent.state_dict()))
    twin = DdpgAgent(space, state_dim=5, seed=99, total_steps=80)
    twin.load_state_dict(state)
    s = np.ones(5)
    assert np.array_equal(agent.act(s, explore=False), twin.act(s, explore=False))


def test_ddpg_invalid_step_goes_to_zero_state():
    space = make_space([1.0])
    agent = DdpgAgent(space, state_dim=3, seed=0)
    h = TuningHistory(space, _outcome(5.0))
    x = agent.suggest(h)
    step = h.add(x, EvaluationOutcome.invalid(3))
    agent.observe(h, step)
    s, a, r, s2 = agent.replay.sample(np.random.default_rng(0), 1)
    assert r[0] == -1.0
    assert np.all(s2 == 0)


# --- BO -----------------------------------------------------------------------------

def test_bo_initial_design_is_symmetric_lhs():
    space = make_space([1.0, 4.0])
    bo = BayesianOptimizer(space, seed=2)
    h = TuningHistory(space, _outcome(1.0))
    firsts = []
    for _ in range(10):
        x = bo.suggest(h)
        firsts.append(x)
        h.add(x, _outcome(1.0 + x[0] / 10))
    firsts = np.array(firsts)
    assert np.sum(firsts[:, 0] < 1.0) == 5


def test_bo_moves_toward_better_region():
    space = make_space([1.0])
    bo = BayesianOptimizer(space, seed=0)
    h = TuningHistory(space, _outcome(1.0))
    for _ in range(25):
        x = bo.suggest(h)
        h.add(x, _outcome(1.0 + 5 * math.exp(-((x[0] - 7.0) ** 2))))
    assert abs(h.best_config[0] - 7.0) < 0.3


# --- tuning loop --------------------------------------------------------------------

@pytest.fixture
def tiny():
    space = make_space([1.0, 2.0, 3.0, 4.0])
    spec = SimulatorSpec(dims=4, important_idx=[1, 3], noise_cv=0.02, metrics_dim=4,
                         safe_hi=[1.5, 0.8, 1.5, 1.5], safe_lo=[-1.5, -1.5, -1.5, -1.5])
    return space, spec


@pytest.mark.parametrize("method", ["random", "bo", "rl"])
def test_run_tuning_log_and_trace(tmp_path, tiny, method):
    space, spec = tiny
    opt = make_optimizer(method, space, seed=1, steps=20, state_dim=spec.metrics_dim)
    log_path = tmp_path / "run.jsonl"
    h = run_tuning(opt, Simulator(space, spec, seed=1), space, 20, log_path=log_path, log_meta={"run": 0})
    lines = [json.loads(x) for x in log_path.read_text().splitlines()]
    assert lines[0]["_meta"]["run"] == 0 and lines[0]["_meta"]["method"] == method
    assert len(lines) == 21
    best = [r["best_so_far"] for r in lines[1:]]
    assert best == sorted(best)
    assert best[-1] == h.best_throughput
    assert np.all(np.diff(h.trace()) >= 0)


@pytest.mark.parametrize("method", ["random", "bo", "rl"])
def test_resume_matches_uninterrupted_run(tmp_path, tiny, method):
    space, spec = tiny
    full = run_tuning(make_optimizer(method, space, 4, 30, spec.metrics_dim), Simulator(space, spec, seed=2),
                      space, 30, log_path=tmp_path / "a.jsonl")
    ck = tmp_path / "b.ckpt.json"
    run_tuning(make_optimizer(method, space, 4, 30, spec.metrics_dim), Simulator(space, spec, seed=2),
               space, 20, log_path=tmp_path / "b.jsonl", checkpoint_path=ck, checkpoint_every=10)
    resumed = run_tuning(make_optimizer(method, space, 4, 30, spec.metrics_dim), Simulator(space, spec, seed=777),
                         space, 30, log_path=tmp_path / "b.jsonl", checkpoint_path=ck, resume=True)
    assert np.array_equal(full.trace(), resumed.trace())
    a = [json.loads(x) for x in (tmp_path / "a.jsonl").read_text().splitlines()]
    b = [json.loads(x) for x in (tmp_path / "b.jsonl").read_text().splitlines()]
    strip = lambda rs: [{k: v for k, v in r.items() if k != "wall_ms"} for r in rs[1:]]
    assert strip(a) == strip(b)


def test_checkpoint_method_mismatch(tmp_path, tiny):
    space, spec = tiny
    ck = tmp_path / "c.json"
    run_tuning(RandomSearch(space, 0), Simulator(space, spec), space, 5, checkpoint_path=ck, checkpoint_every=5)
    with pytest.raises(TuningError):
        run_tuning(BayesianOptimizer(space, 0), Simulator(space, spec), space, 10, checkpoint_path=ck, resume=True)


@settings(max_examples=5, deadline=None)
@given(st.sampled_from(["random", "bo", "rl"]), st.integers(0, 100))
def test_noiseless_runs_are_bit_identical(method, seed):
    space = make_space([1.0, 2.0, 3.0])
    spec = SimulatorSpec(dims=3, important_idx=[0, 2], noise_cv=0.0, metrics_dim=4)
    runs = []
    for _ in range(2):
        opt = make_optimizer(method, space, seed, 15, spec.metrics_dim)
        h = run_tuning(opt, Simulator(space, spec, seed=seed), space, 15)
        runs.append(np.array([s.config for s in h.steps]))
    assert np.array_equal(runs[0], runs[1])


def test_unknown_method_and_bad_steps(tiny):
    space, spec = tiny
    with pytest.raises(ValueError):
        make_optimizer("sa", space, 0, 10, 4)
    with pytest.raises(ValueError):
        run_tuning(RandomSearch(space), Simulator(space, spec), space, 0)
