"""doorsim: a self-contained door-opening benchmark.

Procedurally randomized door worlds, an analytic physics environment with
shaped rewards and success metrics, from-scratch PPO and SAC trainers, a
scripted solvability oracle, and an evaluation harness.
"""

__version__ = "0.1.0"
