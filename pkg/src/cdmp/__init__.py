"""Dynamic movement primitives with weight perturbations certified by
zeroing barrier functions over signed-distance scenes."""

from .dmp import (
    CanonicalSystem, Demonstration, DmpModel, ForcingTerm, Trajectory, eval_forcing, fit_lwr,
    rollout,
)
from .sdf import (
    Box, Capsule, Cone, Halfspace, SafetyScene, Sphere, make_scene, sdf_eval, smooth_min,
    zbf_eval, zbf_residual,
)
from .nlp import NlpProblem, SolveReport, check_gradients, solve
from .transcription import CdmpProblem, CdmpSolution, runtime_profile, solve_cdmp, transcribe
from .apf import ApfConfig, apf_coupling, rollout_with_apf

__version__ = "0.1.0"
