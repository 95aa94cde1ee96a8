import numpy as np
import pytest

from conveyor_vla.errors import UnknownTokenError
from conveyor_vla.models.world import WorldObject, WorldState
from conveyor_vla.persistence import EpisodeStore
from conveyor_vla.sim import (
    default_spec,
    encode_instruction,
    generate_dataset,
    initial_state,
    instruction_text,
    is_success,
    plan_intercept,
    render_views,
    run_expert_episode,
    step_env,
    vocabulary,
)
from conveyor_vla.sim.dataset import evaluation_seeds
from conveyor_vla.sim.language import decode_instruction


def make_state(
    gripper=(0.5, 0.2), grip=-1.0, position=(0.5, 0.5), velocity=(0.0, 0.0), **obj
) -> WorldState:
    target = WorldObject(
        class_id=0, position=position, velocity=velocity, radius=0.035, target_bin=0, **obj
    )
    return WorldState(gripper=gripper, grip=grip, objects=[target])


class TestStep:
    def test_displacement_is_clipped_per_axis(self):
        nxt = step_env(make_state(), np.array([0.1, -0.1, -1.0]))
        assert nxt.gripper == pytest.approx((0.53, 0.17))
        assert nxt.step == 1

    def test_input_state_untouched(self):
        state = make_state(velocity=(0.01, 0.0))
        step_env(state, np.array([0.0, 0.0, 1.0]))
        assert state.objects[0].position == (0.5, 0.5)
        assert state.step == 0

    def test_grab_then_carry(self):
        state = make_state(gripper=(0.5, 0.49))
        held = step_env(state, np.array([0.0, 0.0, 1.0]))
        assert held.objects[0].held
        assert held.grip == 1.0
        moved = step_env(held, np.array([0.02, 0.02, 1.0]))
        assert moved.objects[0].position == pytest.approx(moved.gripper)

    def test_grab_misses_far_object(self):
        nxt = step_env(make_state(gripper=(0.5, 0.3)), np.array([0.0, 0.0, 1.0]))
        assert not nxt.objects[0].held

    def test_release_into_bin_is_success(self):
        spec = default_spec()
        center = spec.bins[0].center
        state = make_state(gripper=center, grip=1.0, position=center, held=True)
        placed = step_env(state, np.array([0.0, 0.0, -1.0]))
        assert placed.objects[0].placed_bin == 0
        assert not placed.objects[0].held
        assert is_success(placed)

    def test_release_on_belt_resumes_motion(self):
        state = make_state(gripper=(0.3, 0.5), grip=1.0, position=(0.3, 0.5), held=True)
        state = state.model_copy(update={"belt_speed": 0.01})
        dropped = step_env(state, np.array([0.0, 0.0, -1.0]))
        assert dropped.objects[0].velocity == (0.01, 0.0)
        assert dropped.objects[0].position == pytest.approx((0.31, 0.5))
        assert not is_success(dropped)

    def test_object_leaving_world_is_lost(self):
        nxt = step_env(make_state(position=(0.99, 0.5), velocity=(0.02, 0.0)), np.zeros(3))
        assert nxt.objects[0].lost
        assert not is_success(nxt)


class TestExpert:
    def test_intercept_of_static_object(self):
        plan = plan_intercept(make_state())
        assert plan.steps == 10
        assert plan.point == pytest.approx((0.5, 0.5))

    def test_intercept_none_when_object_escapes(self):
        state = make_state(gripper=(0.1, 0.2), position=(0.95, 0.5), velocity=(0.05, 0.0))
        assert plan_intercept(state) is None

    @pytest.mark.parametrize("index", range(5))
    def test_solves_static_tier(self, index):
        record = run_expert_episode(initial_state(0, index, "static"))
        assert record.success
        assert record.frames.shape[1:] == (3, 64, 64)
        assert record.length == len(record.actions) == len(record.proprio)


class TestRender:
    def test_shape_and_range(self):
        views = render_views(make_state())
        assert views.shape == (3, 64, 64)
        assert views.dtype == np.float32
        assert views.min() >= 0.0 and views.max() <= 1.0

    def test_gripper_marker_reflects_grip(self):
        # gripper (0.5, 0.2) falls in row 12, column 32 of the overview
        assert render_views(make_state())[0, 12, 32] == pytest.approx(1.0)
        assert render_views(make_state(grip=1.0))[0, 12, 32] == pytest.approx(0.75)

    def test_zoom_views_black_outside_world(self):
        views = render_views(make_state())
        assert np.all(views[1, 0] == 0.0)
        assert np.all(views[2, 0] == 0.0)

    def test_lost_objects_not_drawn(self):
        visible = render_views(make_state())
        gone = render_views(make_state(lost=True))
        assert not np.array_equal(visible[0], gone[0])


class TestLanguage:
    def test_instruction_round_trip(self):
        state = initial_state(3, 0, "slow")
        text = instruction_text(state)
        assert decode_instruction(encode_instruction(text)) == text
        assert text.startswith("pick the ")

    def test_vocabulary_has_pad_first(self):
        words = vocabulary()
        assert words[0] == "<pad>"
        assert len(set(words)) == len(words)

    def test_unknown_word(self):
        with pytest.raises(UnknownTokenError):
            encode_instruction("pick the banana")

    def test_unknown_id(self):
        with pytest.raises(UnknownTokenError):
            decode_instruction(np.array([len(vocabulary())]))


class TestDataset:
    def test_initial_state_is_deterministic(self):
        assert initial_state(5, 2, "moving") == initial_state(5, 2, "moving")
        assert initial_state(5, 2, "moving") != initial_state(5, 3, "moving")

    def test_spawn_respects_spacing_and_tier(self):
        spec = default_spec()
        state = initial_state(1, 0, "crowded")
        xs = sorted(o.position[0] for o in state.objects)
        assert len(xs) == 3
        assert np.all(np.diff(xs) >= spec.min_spacing - 1e-12)
        assert 0.005 <= state.belt_speed <= 0.02

    def test_unknown_tier(self):
        with pytest.raises(KeyError):
            initial_state(0, 0, "warp")

    def test_manifest_matches_files(self, store: EpisodeStore):
        manifest = store.manifest
        records = store.load_all()
        assert manifest.episode_count == len(records) == 3
        assert manifest.frame_count == sum(r.length for r in records)
        assert manifest.image_shape == (64, 64)
        assert manifest.n_views == 3
        assert manifest.tier == "static"
        assert all(r.success for r in records)

    def test_norm_stats_bound_actions(self, store: EpisodeStore):
        stats = store.manifest.norm_stats
        for record in store.load_all():
            scaled = stats.normalize_actions(record.actions.astype(np.float64))
            assert scaled.min() >= -1 - 1e-6 and scaled.max() <= 1 + 1e-6

    def test_output_independent_of_workers(self, tmp_path):
        one = generate_dataset(tmp_path / "a", episodes=2, seed=21, tier="static", workers=1)
        many = generate_dataset(tmp_path / "b", episodes=2, seed=21, tier="static", workers=3)
        assert one.frame_count == many.frame_count
        left, right = EpisodeStore(tmp_path / "a"), EpisodeStore(tmp_path / "b")
        assert left.load_all() == right.load_all()

    def test_rejects_zero_episodes(self, tmp_path):
        with pytest.raises(ValueError):
            generate_dataset(tmp_path, episodes=0, seed=0)

    def test_evaluation_seeds_per_tier(self):
        assert evaluation_seeds("slow", 3) == [(101000, 0), (101000, 1), (101000, 2)]
        assert evaluation_seeds("static", 1) == [(100000, 0)]
