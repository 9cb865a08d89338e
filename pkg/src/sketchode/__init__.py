"""Sketched Arnoldi (sFOM) solvers for linear ODEs ``y' = -Ay + w`` and ``y'' = -Ay + w``."""
from .linalg import (BreakdownError, Counters, RankDeficiencyError, SparseOperator, ThinQr,
                     as_operator, companion_operator, dense_expm, phi1, phi2, qr_append, spmv)
from .krylov import KrylovState, arnoldi_step, arnoldi_step_full, arnoldi_step_truncated
from .sketch import (IdentityEmbedding, SketchState, SparseSignEmbedding, basis_distortion,
                     new_embedding, sketch_apply, vector_distortion)
from .ode import (Iterate, OdeProblem, SolveReport, companion_problem, error_bound, fom_solve,
                  identity_sfom_solve, projected_ivp_solve, sfom_solve)
from .restart import RestartPolicy, RestartStalled, find_tau, rt_restart_loop, slope_check
from .problems import ProblemSpec, gen_convdiff3d, gen_laplacian, gen_wave, load_external

__version__ = "0.1.0"
