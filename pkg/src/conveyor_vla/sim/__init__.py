"""Synthetic conveyor pick-and-place world."""

from conveyor_vla.sim.dataset import generate_dataset, initial_state, run_expert_episode
from conveyor_vla.sim.expert import Intercept, is_solvable, plan_intercept, scripted_expert
from conveyor_vla.sim.language import encode_instruction, instruction_text, vocabulary
from conveyor_vla.sim.render import render_views, view_windows
from conveyor_vla.sim.world import WorldSpec, default_spec, is_success, spawn_world, step_env

__all__ = [
    "Intercept",
    "WorldSpec",
    "default_spec",
    "encode_instruction",
    "generate_dataset",
    "initial_state",
    "instruction_text",
    "is_solvable",
    "is_success",
    "plan_intercept",
    "render_views",
    "run_expert_episode",
    "scripted_expert",
    "spawn_world",
    "step_env",
    "view_windows",
    "vocabulary",
]
