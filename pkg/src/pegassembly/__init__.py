"""Multi-sensor N-step dueling-DQN peg-in-hole assembly stack with a
simulated contact world and a force/torque safety supervisor."""

__version__ = "0.1.0"
