"""Cost-guided MPC policy approximation: solvers, losses, benchmark harness."""

__version__ = "0.1.0"
