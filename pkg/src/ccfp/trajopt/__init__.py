"""Dynamic trajectory optimization on reduced models."""
from .costs import (ControlBox, FrictionCone, InactiveContact, Quadratic, StateBox, Tracking,
                    friction_penalty)
from .ddp import (DDPOptions, Diverged, HorizonMismatch, Trajectory, TrajOptProblem,
                  build_tracking_costs, rollout, solve_ddp, static_initial_guess)
from .models import (GRAVITY, LinearModel, NoStaticEquilibrium, PlanarLeg3Link, PointMass,
                     double_integrator)

__all__ = [
    "ControlBox", "FrictionCone", "InactiveContact", "Quadratic", "StateBox", "Tracking",
    "friction_penalty", "DDPOptions", "Diverged", "HorizonMismatch", "Trajectory",
    "TrajOptProblem", "build_tracking_costs", "rollout", "solve_ddp", "static_initial_guess",
    "GRAVITY", "LinearModel", "NoStaticEquilibrium", "PlanarLeg3Link", "PointMass",
    "double_integrator",
]
