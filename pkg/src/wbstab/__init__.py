"""Force-feedback whole-body stabilizer for position-controlled bipeds.

Layers, bottom up:

* ``spatial``    -- 6D vectors, transforms, spatial inertias
* ``model``      -- robot description and the built-in 12-DOF biped
* ``rbd``        -- mass matrix, bias forces, Jacobians, contact inertia
* ``qp``         -- dense convex QP solver (primal active set)
* ``servo``      -- joint position servo of the simulated plant
* ``stabilizer`` -- reference-force QP + force-tracking differential IK
* ``baseline``   -- classical ZMP-feedback stabilizer for comparison
* ``simworld``   -- penalty-contact plant with moving platforms
* ``runner``     -- scenario configs, closed-loop runs, sweeps, CSV logs
"""

from wbstab.spatial import (SpatialForce, SpatialInertia, SpatialMotion,
                            Transform)
from wbstab.model import RobotModel, Configuration, builtin_biped, load_model

__all__ = [
    "SpatialMotion", "SpatialForce", "Transform", "SpatialInertia",
    "RobotModel", "Configuration", "builtin_biped", "load_model",
]
