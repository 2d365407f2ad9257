from .classic import CartPole, MountainCar, classic_control_step
from .maze import MazeEnv, MazeSpec, generate_maze, maze_step, shortest_path_length
from .noise import NoiseConfig, NoisyEnv, apply_noise

__all__ = [
    "CartPole", "MazeEnv", "MazeSpec", "MountainCar", "NoiseConfig", "NoisyEnv", "apply_noise",
    "classic_control_step", "generate_maze", "maze_step", "shortest_path_length",
]
