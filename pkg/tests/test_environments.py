"""Boxes, rewards, the environment registry and the three ground-truth systems."""

import logging

import numpy as np
import pytest

from score_guided_planning import autodiff as ad
from score_guided_planning.cartpole import (
    CartPoleParams,
    cartpole_cost,
    cartpole_energy,
    cartpole_step,
)
from score_guided_planning.environments import Box, QuadraticReward, Region, ZeroReward, make_env
from score_guided_planning.errors import ConfigError, DomainError, ShapeError
from score_guided_planning.pit import PitParams, in_hole, pit_crossings, pit_step
from score_guided_planning.pixel import (
    PixelParams,
    pixel_cost,
    pixel_extract_control,
    pixel_extract_state,
    pixel_render,
    pixel_step,
    render_control,
    state_grid,
    write_pgm_sequence,
)


class TestBox:
    def test_geometry(self, unit_box):
        np.testing.assert_array_equal(unit_box.center, [0.0, 0.0])
        np.testing.assert_array_equal(unit_box.half_width, [1.0, 1.0])
        assert unit_box.contains(np.array([[0.5, -1.0], [1.5, 0.0]])).tolist() == [True, False]
        np.testing.assert_array_equal(unit_box.clip([2.0, -3.0]), [1.0, -1.0])
        assert Box([0.0, 0.0], [0.5, 0.5]).within(unit_box)
        assert not unit_box.within(Box([0.0, 0.0], [0.5, 0.5]))

    def test_degenerate_box_is_rejected(self):
        with pytest.raises(ConfigError):
            Box([0.0], [0.0])
        with pytest.raises(ShapeError):
            Box([0.0, 0.0], [1.0])

    def test_region_sampling_avoids_holes(self):
        region = Region(Box([0.0, 0.0], [1.0, 1.0]), (((0.5, 0.5), 0.3),))
        pts = region.sample(np.random.default_rng(0), 400)
        assert pts.shape == (400, 2)
        assert np.all(np.linalg.norm(pts - 0.5, axis=-1) >= 0.3)
        assert np.all(region.contains(pts))


class TestRewards:
    def test_quadratic_total_on_arrays_and_tape(self, goal_reward):
        x_seq = np.array([[0.0, 0.0], [0.5, 0.5], [1.0, 0.0]])
        u_seq = np.array([[0.5, 0.5], [0.5, -0.5]])
        # terminal only: -((1-1)^2 + (0-1)^2)
        assert goal_reward.total(x_seq, u_seq) == pytest.approx(-1.0)
        assert goal_reward.cost(x_seq, u_seq) == pytest.approx(1.0)

        tape = ad.Tape()
        xs = [tape.leaf(row) for row in x_seq]
        total = goal_reward.total(xs, list(u_seq))
        grads = tape.backward(total)
        np.testing.assert_allclose(grads.wrt(xs[-1]), [0.0, 2.0])
        np.testing.assert_allclose(grads.wrt(xs[0]), [0.0, 0.0])

    def test_running_and_control_terms(self):
        reward = QuadraticReward(
            goal=np.zeros(1), q=np.ones(1), r=np.full(1, 2.0), q_terminal=np.zeros(1)
        )
        x_seq = np.array([[1.0], [2.0], [3.0]])
        u_seq = np.array([[1.0], [1.0]])
        # running: (1 + 2) + (4 + 2); terminal off
        assert reward.cost(x_seq, u_seq) == pytest.approx(9.0)

    def test_batched_population_axis(self, goal_reward):
        x = np.zeros((3, 2, 2))
        u = np.zeros((3, 1, 2))
        np.testing.assert_allclose(goal_reward.total(x, u), [-2.0, -2.0, -2.0])

    def test_zero_reward(self):
        assert ZeroReward().cost(np.ones((3, 2)), np.ones((2, 2))) == 0.0


class TestRegistry:
    def test_known_environments(self):
        assert make_env("pit").spec.name == "pit"
        integrator = make_env("integrator")
        assert integrator.spec.name == "integrator" and integrator.params.hole_radius == 0.0
        assert (make_env("cartpole").spec.n, make_env("cartpole").spec.m) == (4, 1)
        assert make_env("pixel").spec.n == 256

    def test_unknown_name_and_parameter(self):
        with pytest.raises(ConfigError, match="Unknown environment"):
            make_env("acrobot")
        with pytest.raises(ConfigError, match="Invalid parameters"):
            make_env("pit", {"wormhole": 1})

    def test_parameter_override(self):
        env = make_env("pit", {"episode_length": 7, "goal": (0.8, 0.2)})
        assert env.spec.episode_length == 7
        np.testing.assert_array_equal(env.goal, [0.8, 0.2])


class TestPit:
    def test_step_outside_and_inside(self):
        p = PitParams()
        x = np.array([[0.1, 0.5], [0.5, 0.5]])
        u = np.array([[0.1, 0.0], [0.1, 0.0]])
        np.testing.assert_allclose(pit_step(p, x, u), [[0.2, 0.5], [0.5, 0.5]])

    def test_boundary_counts_as_outside(self):
        p = PitParams()
        edge = np.array([0.5 + p.hole_radius, 0.5])
        assert not in_hole(p, edge)
        np.testing.assert_allclose(pit_step(p, edge, [0.05, 0.0]), edge + [0.05, 0.0])

    def test_crossings_and_zero_radius(self):
        p = PitParams()
        traj = np.array([[0.1, 0.5], [0.45, 0.5], [0.5, 0.52], [0.9, 0.5]])
        assert pit_crossings(p, traj) == 2
        assert pit_crossings(PitParams(hole_radius=0.0), traj) == 0

    def test_pit_must_fit_inside_the_domain(self):
        with pytest.raises(ConfigError):
            PitParams(hole_center=(0.1, 0.5), hole_radius=0.2)
        with pytest.raises(ConfigError):
            PitParams(hole_radius=-0.1)

    def test_cost_of_standing_still(self):
        env = make_env("pit", {"episode_length": 2})
        x = np.tile(env.start, (3, 1))
        u = np.zeros((2, 2))
        # 0.8^2 per step: running weight 1 for two steps, terminal weight 10
        assert env.cost(x, u) == pytest.approx(0.64 * (2 + 10))


class TestCartPole:
    def test_hanging_rest_is_an_equilibrium(self):
        p = CartPoleParams()
        np.testing.assert_allclose(cartpole_step(p, np.zeros(4), [0.0]), np.zeros(4), atol=1e-12)

    def test_push_moves_the_cart(self):
        nxt = cartpole_step(CartPoleParams(), np.zeros(4), [5.0])
        assert nxt[2] > 0 and nxt[0] > 0

    def test_energy_is_nearly_conserved_without_force(self):
        p = CartPoleParams()
        state = np.array([0.0, 1.0, 0.0, 0.0])
        e0 = cartpole_energy(p, state)
        for _ in range(40):
            state = cartpole_step(p, state, [0.0])
        assert cartpole_energy(p, state) == pytest.approx(e0, abs=1e-2)

    def test_batched_step_matches_single(self):
        p = CartPoleParams(integrator="euler")
        states = np.array([[0.0, 0.3, 0.1, 0.0], [0.5, 2.0, -1.0, 0.5]])
        forces = np.array([[1.0], [-2.0]])
        batched = cartpole_step(p, states, forces)
        for i in range(2):
            np.testing.assert_allclose(batched[i], cartpole_step(p, states[i], forces[i]))

    def test_terminal_only_cost(self):
        env = make_env("cartpole")
        x = np.zeros((3, 4))
        x[-1] = env.goal
        assert env.cost(x, np.full((2, 1), 10.0)) == pytest.approx(0.0)

    def test_cartpole_cost_matches_the_env_cost(self):
        env = make_env("cartpole")
        # hanging at rest: only the angle term, weight 1
        assert cartpole_cost(np.zeros((2, 4))) == pytest.approx(np.pi**2)
        traj = np.random.default_rng(0).uniform(-1.0, 1.0, size=(4, 4))
        assert cartpole_cost(traj) == pytest.approx(env.cost(traj, np.zeros((3, 1))))

    def test_bad_integrator(self):
        with pytest.raises(ConfigError):
            CartPoleParams(integrator="verlet")


class TestPixel:
    def test_render_is_a_unit_sum_image(self):
        p = PixelParams()
        img = pixel_render(p, [0.2, -0.3])
        assert img.shape == (256,)
        assert img.sum() == pytest.approx(1.0)
        assert np.all(img > 0)

    @pytest.mark.parametrize("x", [(0.0, 0.0), (0.3, -0.4), (-0.6, -0.6), (0.6, 0.6)])
    def test_extract_inverts_render_inside_the_range(self, x):
        p = PixelParams()
        np.testing.assert_allclose(pixel_extract_state(p, pixel_render(p, x)), x, atol=1e-2)

    def test_row_major_layout(self):
        p = PixelParams()
        grid = state_grid(p)
        # index row * G + col: consecutive entries move along the first coordinate
        assert grid[1, 0] > grid[0, 0] and grid[1, 1] == grid[0, 1]
        assert grid[p.grid_size, 1] > grid[0, 1]

    def test_out_of_range_state_is_clamped(self, caplog):
        p = PixelParams()
        with caplog.at_level(logging.WARNING):
            img = pixel_render(p, [2.0, 0.0])
        assert "clamped" in caplog.text
        np.testing.assert_allclose(img, pixel_render(p, [1.0, 0.0]))

    def test_control_round_trip_and_negative_pixels(self):
        p = PixelParams()
        img = render_control(p, [0.1, -0.05])
        np.testing.assert_allclose(pixel_extract_control(p, img), [0.1, -0.05], atol=1e-3)
        noisy = img.copy()
        noisy[0] = -5.0
        assert np.all(np.isfinite(pixel_extract_control(p, noisy)))

    def test_all_zero_image_is_a_domain_error(self):
        p = PixelParams()
        with pytest.raises(DomainError):
            pixel_extract_state(p, np.zeros(256))
        with pytest.raises(DomainError):
            pixel_extract_control(p, -np.ones(256))

    def test_delta_images_decode_to_grid_values(self):
        p = PixelParams()
        grid = state_grid(p)
        img = np.zeros(256)
        img[37] = 1.0
        np.testing.assert_allclose(pixel_extract_state(p, img), grid[37])
        img[90] = 1.0
        np.testing.assert_allclose(pixel_extract_state(p, img), (grid[37] + grid[90]) / 2)

    def test_step_saturates_at_the_range_boundary(self):
        p = PixelParams()
        push = render_control(p, [0.2, 0.0])
        y1 = pixel_step(p, pixel_render(p, [0.9, 0.0]), push)
        y2 = pixel_step(p, y1, push)
        first = pixel_extract_state(p, y1)[0]
        assert first <= p.state_high + 1e-2
        assert pixel_extract_state(p, y2)[0] == pytest.approx(first, abs=1e-6)

    def test_pixel_cost(self):
        p = PixelParams()
        at_goal = np.array([p.goal, p.goal])
        assert pixel_cost(p, at_goal, np.zeros((1, 2))) == pytest.approx(0.0)
        # 6.5 * 0.1^2
        assert pixel_cost(p, at_goal, np.array([[0.1, 0.0]])) == pytest.approx(0.065)
        # 1000 * 0.1^2 on the terminal state
        off = np.array([p.goal, [p.goal[0] + 0.1, p.goal[1]]])
        assert pixel_cost(p, off, np.zeros((1, 2))) == pytest.approx(10.0)

    def test_step_moves_the_blob(self):
        env = make_env("pixel")
        y = env.start_state()
        nxt = env.step(y, env.encode_action([0.1, 0.1]))
        np.testing.assert_allclose(env.decode_state(nxt), env.start + 0.1, atol=1e-2)
        np.testing.assert_allclose(
            env.decode_state(env.step(y, env.nominal_action())), env.start, atol=1e-2
        )

    def test_write_pgm_sequence(self, tmp_path):
        p = PixelParams()
        images = pixel_render(p, np.array([[0.0, 0.0], [0.5, 0.5]]))
        paths = write_pgm_sequence(images, tmp_path / "frames", p.grid_size)
        assert [path.name for path in paths] == ["frame_000.pgm", "frame_001.pgm"]
        raw = paths[0].read_bytes()
        header = b"P5\n16 16\n255\n"
        assert raw.startswith(header)
        pixels = np.frombuffer(raw[len(header) :], dtype=np.uint8)
        assert pixels.size == 256 and pixels.max() == 255
