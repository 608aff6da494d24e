"""End-to-end acceptance checks, one test per shipped guarantee.

Each test exercises a public behavior at its stated tolerance: the reward
field, the setpoint interpolator, the spring dynamics, the effector
controller, hindsight relabeling, autograd, both training modes, fabric
identification, the rank test, and the renderer. Run with -v for one
pass/fail line per check.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
import torch

from clothfold.cloth import (STRUCT, ClothParams, ClothState, Topology,
                             accumulate_forces, build_cloth, mechanical_energy,
                             step_cloth)
from clothfold.effector import (ControllerGains, EffectorState,
                                interpolate_setpoint, osc_command,
                                step_effector)
from clothfold.env import (GRAVITY, EpisodeConfig, FoldEnv, Goal,
                           nominal_goal, reward, reward_from_goal_vectors)
from clothfold.nets import QNet, count_parameters
from clothfold.randomize import (REFERENCE_CLOTH, ExpertError, ParamRanges,
                                 evaluate_candidate, identify_top_m,
                                 sample_cloth_params, save_pool,
                                 scripted_expert)
from clothfold.render import CameraConfig, VisualConfig, VisualRanges, \
    default_camera, project, render
from clothfold.replay import her_relabel
from clothfold.sac import (LearnerConfig, SACAgent, TrainSchedule,
                           build_demo_store, collect_episode, evaluate,
                           train_loop)
from clothfold.stats import mann_whitney_u

DELTA = EpisodeConfig().delta


def _report(line: str) -> None:
    print(f"PASS  {line}")


def _ball(rng: np.random.Generator, radius: float) -> np.ndarray:
    direction = rng.normal(0.0, 1.0, 3)
    norm = np.linalg.norm(direction)
    if norm < 1e-12:
        return np.zeros(3)
    return direction / norm * radius * rng.uniform() ** (1.0 / 3.0)


@pytest.fixture(scope="session")
def nominal_demo():
    return scripted_expert(REFERENCE_CLOTH, seed=3)


@pytest.fixture(scope="session")
def demo_set(nominal_demo):
    """Fold schedules for the nominal goal plus jittered goals."""
    demos = [nominal_demo]
    nom = nominal_goal(REFERENCE_CLOTH)
    rng = np.random.default_rng(42)
    for k in range(1, 12):
        if len(demos) >= 8:
            break
        goal = Goal(nom.g0 + _ball(rng, 0.02), nom.g1 + _ball(rng, 0.02))
        try:
            demos.append(scripted_expert(REFERENCE_CLOTH, goal=goal, seed=3 + k))
        except ExpertError:
            continue
    return demos


@pytest.fixture(scope="session")
def identified_pool(nominal_demo):
    rng = np.random.Generator(np.random.PCG64(11))
    return identify_top_m(rng, ParamRanges(), [nominal_demo],
                          n_candidates=100, m=20,
                          include=(REFERENCE_CLOTH,), seed_note=11)


def test_01_reward_field_obeys_the_piecewise_law():
    origin = np.zeros(3)
    assert reward(origin, origin, origin, origin, DELTA) == 1.0
    at_edge0 = np.array([DELTA, 0.0, 0.0])
    at_edge1 = np.array([0.0, DELTA, 0.0])
    assert reward(origin, origin, at_edge0, at_edge1, DELTA) == 0.0
    outside = np.array([DELTA * 1.0001, 0.0, 0.0])
    assert reward(outside, origin, origin, origin, DELTA) == -1.0
    assert reward(origin, outside, origin, origin, DELTA) == -1.0
    assert reward(outside, outside, origin, origin, DELTA) == -1.0

    rng = np.random.default_rng(0)
    achieved = rng.uniform(-0.2, 0.2, size=(100_000, 6))
    goal = achieved + rng.normal(0.0, 0.04, size=achieved.shape)
    start = time.perf_counter()
    r = reward_from_goal_vectors(achieved, goal, DELTA)
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0, f"bulk reward took {elapsed:.3f}s"
    assert np.all((r == -1.0) | ((r >= 0.0) & (r <= 1.0)))
    assert np.any(r == -1.0) and np.any(r >= 0.0)
    for i in range(0, 200):
        expected = reward(achieved[i, :3], achieved[i, 3:],
                          goal[i, :3], goal[i, 3:], DELTA)
        assert r[i] == expected
    _report("01 reward field matches the piecewise law on 1e5 samples "
            f"({elapsed * 1e3:.0f} ms)")


def test_02_setpoint_interpolation_contracts_the_residual():
    x_t = np.array([0.05, -0.02, 0.03])
    a_t = np.array([0.01, 0.02, -0.01])
    target = x_t + a_t
    setpoint = x_t.copy()
    first = np.linalg.norm(target - setpoint)
    for _ in range(10):
        before = np.linalg.norm(target - setpoint)
        setpoint = interpolate_setpoint(x_t, a_t, setpoint)
        after = np.linalg.norm(target - setpoint)
        ratio = after / before
        assert abs(ratio - 0.97) <= 1e-12 * 0.97
    progress = 1.0 - np.linalg.norm(target - setpoint) / first
    assert abs(progress - (1.0 - 0.97 ** 10)) <= 1e-9
    _report("02 setpoint residual contracts by exactly 0.97 per iteration")


def test_03_spring_dynamics_match_the_closed_form():
    # Two masses joined by one damped spring against the analytic solution.
    m, k, c, rest_len, u0 = 0.01, 2.0, 0.008, 0.1, 0.02
    params = ClothParams(grid_n=5, side_length=0.1, mass_per_point=m,
                         k_struct=k, k_shear=1.0, k_bend=1.0,
                         damping=c, air_drag=0.0)
    topo = Topology(idx_a=np.array([0]), idx_b=np.array([1]),
                    rest=np.array([rest_len]), kind=np.array([STRUCT]))
    state = ClothState(np.array([[0.0, 0.0, 0.0], [rest_len + u0, 0.0, 0.0]]),
                       np.zeros((2, 3)))
    omega0 = math.sqrt(2.0 * k / m)
    zeta = c / (m * omega0)
    assert zeta < 1.0
    omega_d = omega0 * math.sqrt(1.0 - zeta * zeta)
    com = (rest_len + u0) / 2.0
    dt, steps = 1e-3, 1000
    worst = 0.0
    no_gravity = np.zeros(3)
    for n in range(1, steps + 1):
        forces = accumulate_forces(state, topo, params, no_gravity)
        state = step_cloth(state, forces, params, dt)
        t = n * dt
        u = u0 * math.exp(-zeta * omega0 * t) * (
            math.cos(omega_d * t)
            + zeta * omega0 / omega_d * math.sin(omega_d * t))
        expect = np.array([[com - (rest_len + u) / 2.0, 0.0, 0.0],
                           [com + (rest_len + u) / 2.0, 0.0, 0.0]])
        worst = max(worst, float(np.abs(state.positions - expect).max()))
    assert worst < 1e-3, f"worst deviation {worst:.2e} m"

    # Internal forces cancel over the whole sheet.
    params = replace(REFERENCE_CLOTH, air_drag=0.0)
    built, topo = build_cloth(params, np.zeros(3))
    rng = np.random.default_rng(5)
    worst_sum = 0.0
    for _ in range(1000):
        random_state = ClothState(
            built.positions + rng.normal(0.0, 0.03, built.positions.shape),
            rng.normal(0.0, 0.5, built.velocities.shape))
        forces = accumulate_forces(random_state, topo, params, no_gravity)
        worst_sum = max(worst_sum, float(np.abs(forces.sum(axis=0)).max()))
    assert worst_sum < 1e-9, f"net internal force {worst_sum:.2e} N"

    # A damped pinned sheet with gravity off never gains mechanical energy.
    state, topo = build_cloth(params, np.zeros(3))
    pin_pos = state.positions[0].copy()
    stretched = ClothState(pin_pos + (state.positions - pin_pos) * 1.05,
                           np.zeros_like(state.velocities))
    state = stretched
    energies = [mechanical_energy(state, topo, params)]
    for _ in range(500):
        forces = accumulate_forces(state, topo, params, no_gravity)
        state = step_cloth(state, forces, params, 2e-3,
                           pin=(0, pin_pos, np.zeros(3)))
        energies.append(mechanical_energy(state, topo, params))
    gain = float(np.diff(energies).max())
    assert gain <= 1e-9, f"energy rose by {gain:.2e} J in one step"
    _report("03 spring dynamics match the closed form "
            f"(worst {worst:.1e} m; forces cancel; energy decays)")


def test_04_effector_settles_on_a_displaced_target():
    gains = ControllerGains()
    state = EffectorState(np.zeros(3), np.zeros(3), mass=1.0)
    target = np.array([0.1, 0.0, 0.0])
    dt = 0.01
    errors = []
    for _ in range(1000):
        force = osc_command(state, target, gains, GRAVITY)
        state = step_effector(state, force, dt, GRAVITY)
        errors.append(float(np.linalg.norm(state.position - target)))
    at_2s = errors[199]
    assert at_2s <= 0.02, f"error at 2 s is {at_2s:.4f} m"
    assert max(errors[199:]) <= 0.02, "error grew again after settling"
    assert np.isfinite(errors).all()
    _report(f"04 effector reaches a 10 cm target ({at_2s * 100:.2f} cm at 2 s, "
            "bounded to 10 s)")


def test_05_hindsight_copies_recompute_their_rewards_exactly():
    env = FoldEnv([REFERENCE_CLOTH], EpisodeConfig(), render_images=False,
                  seed=123)
    rng = np.random.default_rng(9)
    own_goal_copies = 0
    for _ in range(100):
        episode, _ = collect_episode(env, lambda obs: rng.uniform(-1, 1, 3))
        for tr in episode:
            assert tr.reward == reward_from_goal_vectors(
                tr.achieved_goal, tr.goal, env.config.delta)
        relabeled = her_relabel(episode, 4, rng, env.config.delta)
        assert len(relabeled) == 4 * len(episode)
        for tr in relabeled:
            assert tr.reward == reward_from_goal_vectors(
                tr.achieved_goal, tr.goal, env.config.delta)
            assert np.array_equal(tr.full_state[48:54], tr.goal)
            assert np.array_equal(tr.next_full_state[48:54], tr.goal)
            if np.array_equal(tr.goal, tr.achieved_goal):
                own_goal_copies += 1
                assert tr.reward == 1.0
    assert own_goal_copies > 0
    _report("05 hindsight rewards recompute exactly over 100 episodes "
            f"({own_goal_copies} own-goal copies all scored 1.0)")


def test_06_autograd_matches_finite_differences():
    torch.manual_seed(0)
    net = QNet(state_dim=4, goal_dim=2, action_dim=1, hidden_dim=8,
               dtype=torch.float64)
    n_params = count_parameters(net)
    assert n_params <= 200
    state = torch.randn(16, 4, dtype=torch.float64)
    goal = torch.randn(16, 2, dtype=torch.float64)
    action = torch.randn(16, 1, dtype=torch.float64)
    target = torch.randn(16, dtype=torch.float64)

    def loss_value() -> float:
        with torch.no_grad():
            return float(((net(state, goal, action) - target) ** 2).mean())

    loss = ((net(state, goal, action) - target) ** 2).mean()
    net.zero_grad()
    loss.backward()
    autograd = torch.cat([p.grad.reshape(-1) for p in net.parameters()])

    h = 1e-6
    numeric = torch.zeros(n_params, dtype=torch.float64)
    i = 0
    for p in net.parameters():
        flat = p.data.reshape(-1)
        for j in range(flat.numel()):
            keep = float(flat[j])
            flat[j] = keep + h
            up = loss_value()
            flat[j] = keep - h
            down = loss_value()
            flat[j] = keep
            numeric[i] = (up - down) / (2.0 * h)
            i += 1
    rel = float(torch.linalg.norm(numeric - autograd)
                / torch.linalg.norm(autograd))
    assert rel < 1e-4, f"gradient mismatch {rel:.2e}"
    _report(f"06 autograd matches finite differences on a {n_params}-parameter "
            f"critic (rel {rel:.1e})")


def test_09_identification_matches_an_exhaustive_ranking(identified_pool,
                                                         nominal_demo,
                                                         tmp_path):
    ranges = ParamRanges()
    rng = np.random.Generator(np.random.PCG64(11))
    candidates = [REFERENCE_CLOTH]
    while len(candidates) < 100:
        candidates.append(sample_cloth_params(rng, ranges))
    scores = [evaluate_candidate(c, [nominal_demo]) for c in candidates]
    finite = [i for i, s in enumerate(scores) if np.isfinite(s)]
    order = sorted(finite, key=lambda i: (-scores[i], i))[:20]

    assert identified_pool.entries == [candidates[i] for i in order]
    assert identified_pool.scores == [scores[i] for i in order]
    assert REFERENCE_CLOTH in identified_pool.entries

    again = identify_top_m(np.random.Generator(np.random.PCG64(11)), ranges,
                           [nominal_demo], n_candidates=100, m=20,
                           include=(REFERENCE_CLOTH,), seed_note=11)
    path_a, path_b = tmp_path / "a.pool", tmp_path / "b.pool"
    save_pool(identified_pool, path_a)
    save_pool(again, path_b)
    assert path_a.read_bytes() == path_b.read_bytes()
    _report("09 identification equals the score-all-then-sort ranking and "
            "repeats byte-identically")


def test_10_rank_test_reproduces_reference_values():
    u, p = mann_whitney_u([1.0, 2.0], [3.0, 4.0])
    assert u == 0.0
    assert p == 1.0 / 3.0

    same = [4.0, 4.0, 4.0, 4.0, 4.0, 4.0]
    for method in ("exact", "approx"):
        _, p_same = mann_whitney_u(same, list(same), method=method)
        assert p_same == 1.0

    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(10):
        a = rng.normal(0.0, 1.0, 6)
        b = rng.normal(0.4, 1.0, 6)
        _, p_exact = mann_whitney_u(a, b, method="exact")
        _, p_approx = mann_whitney_u(a, b, method="approx")
        worst = max(worst, abs(p_exact - p_approx))
    assert worst <= 0.02, f"exact and approximate p differ by {worst:.3f}"
    _report("10 rank test gives U=0 p=1/3, p=1 on identical samples, "
            f"exact≈approx (worst {worst:.3f})")


def _oracle_pixels(point: np.ndarray, cam: CameraConfig) -> tuple:
    """Homogeneous projection: intrinsics times extrinsics, then divide."""
    forward = cam.look_at - cam.eye
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, cam.up)
    right = right / np.linalg.norm(right)
    up = np.cross(right, forward)
    extrinsic = np.zeros((4, 4))
    extrinsic[0, :3], extrinsic[0, 3] = right, -right @ cam.eye
    extrinsic[1, :3], extrinsic[1, 3] = up, -up @ cam.eye
    extrinsic[2, :3], extrinsic[2, 3] = forward, -forward @ cam.eye
    extrinsic[3, 3] = 1.0
    scale = (cam.image_size - 1) / 2.0
    focal = scale / math.tan(cam.vertical_fov / 2.0)
    intrinsic = np.array([[focal, 0.0, scale, 0.0],
                          [0.0, -focal, scale, 0.0],
                          [0.0, 0.0, 1.0, 0.0]])
    h = intrinsic @ extrinsic @ np.append(point, 1.0)
    return h[0] / h[2], h[1] / h[2]


def test_11_projection_matches_a_homogeneous_oracle():
    cameras = [
        default_camera(np.array([0.05, 0.05, 0.0])),
        CameraConfig(eye=np.array([0.4, -0.3, 0.35]),
                     look_at=np.array([0.05, 0.05, 0.0])),
        CameraConfig(eye=np.array([-0.2, 0.5, 0.2]),
                     look_at=np.array([0.0, 0.1, 0.0]),
                     up=np.array([0.0, 1.0, 0.2]),
                     vertical_fov=0.8, image_size=64),
    ]
    rng = np.random.default_rng(17)
    worst = 0.0
    for cam in cameras:
        for _ in range(200):
            point = cam.look_at + rng.uniform(-0.15, 0.15, 3)
            u, v = project(point, cam)
            ou, ov = _oracle_pixels(point, cam)
            worst = max(worst, abs(u - ou), abs(v - ov))
    assert worst < 1e-6, f"projection differs from oracle by {worst:.2e} px"

    state, _ = build_cloth(REFERENCE_CLOTH, np.zeros(3))
    cam = default_camera(state.positions.mean(axis=0))
    vis = VisualConfig()
    image_a = render(state.positions, cam, vis, noise_seed=7)
    image_b = render(state.positions, cam, vis, noise_seed=7)
    assert image_a.dtype == np.uint8
    assert np.array_equal(image_a, image_b)
    quiet = render(state.positions, cam, VisualConfig(pixel_noise_sigma=0.0))
    assert int((quiet > 0).sum()) >= 1
    _report(f"11 projection within {worst:.1e} px of the homogeneous oracle; "
            "renders repeat bit-identically")


def test_08_visual_pool_training_improves_with_no_numeric_failure(
        identified_pool):
    config = LearnerConfig(batch_size=64, hidden_dim=64, latent_dim=32,
                           conv_channels=(4, 8, 16))
    env = FoldEnv(list(identified_pool.entries), EpisodeConfig(),
                  visual_ranges=VisualRanges(), render_images=True, seed=1)
    agent = SACAgent("ours", config, image_size=EpisodeConfig().image_size,
                     seed=1)
    schedule = TrainSchedule(epochs=2, cycles=2, env_steps=200,
                             gradient_steps=50, eval_episodes=8)
    rows = train_loop(env, agent, schedule,
                      np.random.Generator(np.random.PCG64(1)))
    assert len(rows) == 2
    for row in rows:
        for key, value in row.items():
            if key != "epoch":
                assert np.isfinite(value), f"{key} went non-finite"
    assert rows[1]["mean_d_sum"] < rows[0]["mean_d_sum"]
    _report("08 pooled visual training runs clean and tightens eval distance "
            f"({rows[0]['mean_d_sum']:.3f} -> {rows[1]['mean_d_sum']:.3f})")


def test_07_state_policy_learns_the_fold(demo_set):
    config = LearnerConfig()
    episode_config = EpisodeConfig()
    agent = SACAgent("fixed", config, image_size=episode_config.image_size,
                     seed=0)

    def fresh_env() -> FoldEnv:
        return FoldEnv([REFERENCE_CLOTH], episode_config,
                       render_images=False, seed=0)

    untrained = evaluate(fresh_env(),
                         lambda obs: agent.act(obs, deterministic=True)[0], 20)
    untrained_d = float(np.mean([r["d_sum"] for r in untrained]))
    noise = np.random.default_rng(1)
    random_rows = evaluate(fresh_env(), lambda obs: noise.uniform(-1, 1, 3), 20)
    random_rate = float(np.mean([r["success"] for r in random_rows]))

    demo_env = FoldEnv([REFERENCE_CLOTH], episode_config, render_images=False,
                       seed=7919)
    store = build_demo_store(demo_env, demo_set, config.demo_noise)
    schedule = TrainSchedule(epochs=10, cycles=5, env_steps=500,
                             gradient_steps=500, eval_episodes=20)
    start = time.perf_counter()
    rows = train_loop(fresh_env(), agent, schedule,
                      np.random.Generator(np.random.PCG64(0)),
                      demo_store=store)
    wall = time.perf_counter() - start

    final = rows[-1]
    assert wall <= 1800.0, f"training took {wall:.0f}s"
    assert final["success_rate"] >= 0.6, \
        f"success rate {final['success_rate']:.2f} below 0.6"
    assert final["success_rate"] >= 3.0 * random_rate
    assert final["mean_d_sum"] <= 0.5 * untrained_d, \
        (f"mean d_sum {final['mean_d_sum']:.3f} not half of "
         f"untrained {untrained_d:.3f}")
    _report("07 state policy learns the fold "
            f"(success {final['success_rate']:.2f} vs random "
            f"{random_rate:.2f}, d_sum {final['mean_d_sum']:.3f} vs untrained "
            f"{untrained_d:.3f}, {wall / 60:.1f} min)")
