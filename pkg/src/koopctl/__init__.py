"""Adaptive lifted-linear modeling and safety-constrained active-learning MPC.

The package is organized around a single pipeline: lift physical states into
a higher-dimensional observable space (``lifting``), keep the lifted linear
model current with a contractive windowed update (``adaptation``), convert
residual statistics into constraint margins (``tightening``), encode safety
as barrier rows (``safety``), solve an excitation-aware tracking problem
(``mpc`` on top of ``qp``), and exercise everything against simulated plants
(``plants``, ``harness``).
"""

__version__ = "0.1.0"
