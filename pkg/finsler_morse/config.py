import os
from typing import Any, Dict

from dotenv import load_dotenv

load_dotenv()


# Integrator Configuration
ODE_METHOD = os.getenv("ODE_METHOD", "DOP853")
ODE_RTOL = float(os.getenv("ODE_RTOL", "1e-10"))
ODE_ATOL = float(os.getenv("ODE_ATOL", "1e-12"))
ODE_MAX_STEP = float(os.getenv("ODE_MAX_STEP", "0"))


# Jet Evaluation Configuration
CURVATURE_SAMPLES = int(os.getenv("CURVATURE_SAMPLES", "513"))
JET_CHUNK_POINTS = int(os.getenv("JET_CHUNK_POINTS", "64"))


# Geometry Tolerances
NONDEGENERACY_RCOND = float(os.getenv("NONDEGENERACY_RCOND", "1e-10"))
ENDPOINT_TOL = float(os.getenv("ENDPOINT_TOL", "1e-8"))
ORTHOGONALITY_TOL = float(os.getenv("ORTHOGONALITY_TOL", "1e-8"))
L_DRIFT_TOL = float(os.getenv("L_DRIFT_TOL", "1e-8"))
FRAME_TOL = float(os.getenv("FRAME_TOL", "1e-8"))


# Focal Point Configuration
RANK_TOL = float(os.getenv("RANK_TOL", "1e-7"))
SCAN_GRID = int(os.getenv("SCAN_GRID", "2048"))
FOCAL_REFINE_TOL = float(os.getenv("FOCAL_REFINE_TOL", "1e-8"))
FOCAL_CANDIDATE_RATIO = float(os.getenv("FOCAL_CANDIDATE_RATIO", "1e-2"))
UNCERTAIN_FACTOR = float(os.getenv("UNCERTAIN_FACTOR", "100"))
MAX_PARTITION_NODES = int(os.getenv("MAX_PARTITION_NODES", "64"))


# Index Form Configuration
MESH_SIZE = int(os.getenv("MESH_SIZE", "256"))
MIN_MESH = int(os.getenv("MIN_MESH", "8"))
EIG_NEG_TOL = float(os.getenv("EIG_NEG_TOL", "1e-7"))
EIG_NULL_TOL = float(os.getenv("EIG_NULL_TOL", "1e-7"))
EIG_HEAD = int(os.getenv("EIG_HEAD", "10"))


# Boundary Value Configuration
BVP_MAX_ITER = int(os.getenv("BVP_MAX_ITER", "40"))
BVP_TOL = float(os.getenv("BVP_TOL", "1e-9"))
BVP_FD_STEP = float(os.getenv("BVP_FD_STEP", "1e-7"))


# Suite Configuration
SUITE_WORKERS = int(os.getenv("SUITE_WORKERS", "4"))
RANDOM_SEEDS = int(os.getenv("RANDOM_SEEDS", "50"))
PROPB_SEEDS = int(os.getenv("PROPB_SEEDS", "20"))
LEMMA_TRIALS = int(os.getenv("LEMMA_TRIALS", "100"))
IDENTITY_DRAWS = int(os.getenv("IDENTITY_DRAWS", "200"))


# Output Configuration
OUTPUT_DIR = os.getenv("OUTPUT_DIR", "reports")
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
VERBOSE = os.getenv("VERBOSE", "True").lower() == "true"


def get_all_config() -> Dict[str, Any]:
    """Return all configuration as a dictionary"""
    return {
        "integrator": {
            "method": ODE_METHOD,
            "rtol": ODE_RTOL,
            "atol": ODE_ATOL,
            "max_step": ODE_MAX_STEP,
        },
        "jets": {
            "curvature_samples": CURVATURE_SAMPLES,
            "chunk_points": JET_CHUNK_POINTS,
        },
        "geometry": {
            "nondegeneracy_rcond": NONDEGENERACY_RCOND,
            "endpoint_tol": ENDPOINT_TOL,
            "orthogonality_tol": ORTHOGONALITY_TOL,
            "l_drift_tol": L_DRIFT_TOL,
            "frame_tol": FRAME_TOL,
        },
        "focal": {
            "rank_tol": RANK_TOL,
            "scan_grid": SCAN_GRID,
            "refine_tol": FOCAL_REFINE_TOL,
            "candidate_ratio": FOCAL_CANDIDATE_RATIO,
            "uncertain_factor": UNCERTAIN_FACTOR,
            "max_partition_nodes": MAX_PARTITION_NODES,
        },
        "indexform": {
            "mesh_size": MESH_SIZE,
            "min_mesh": MIN_MESH,
            "eig_neg_tol": EIG_NEG_TOL,
            "eig_null_tol": EIG_NULL_TOL,
            "eig_head": EIG_HEAD,
        },
        "bvp": {
            "max_iter": BVP_MAX_ITER,
            "tol": BVP_TOL,
            "fd_step": BVP_FD_STEP,
        },
        "suites": {
            "workers": SUITE_WORKERS,
            "random_seeds": RANDOM_SEEDS,
            "propb_seeds": PROPB_SEEDS,
            "lemma_trials": LEMMA_TRIALS,
            "identity_draws": IDENTITY_DRAWS,
        },
        "output": {
            "directory": OUTPUT_DIR,
            "log_level": LOG_LEVEL,
            "verbose": VERBOSE,
        },
    }
