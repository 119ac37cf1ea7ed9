"""Deterministic simulator: synthetic scenes, exploration, execution and benchmarks."""

from .explore import CameraModel, NoiseSpec, default_waypoints, explore, simulate_exploration
from .scene import SceneSpec, SyntheticScene, generate_scene
from .world import SimRobot, WorldState, affordance_sim, execute_option
from .bench import BenchConfig, BenchSuite, load_protocol_suite, run_benchmark, run_protocol
from .ablation import run_ablation

__all__ = [
    "BenchConfig", "BenchSuite", "CameraModel", "NoiseSpec", "SceneSpec", "SimRobot", "SyntheticScene", "WorldState",
    "affordance_sim", "default_waypoints", "execute_option", "explore", "generate_scene", "load_protocol_suite",
    "run_ablation", "run_benchmark", "run_protocol", "simulate_exploration",
]
