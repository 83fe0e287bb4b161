"""Sound-speed recovery in a 2-D half-plane by the boundary control method."""
from .bcm import (GramMatrix, ImageField, InverseData, Reconstruction, RhsVector, SemiGeodesicMap, SpeedMap,
                  TikhonovResult, amplitude_image, condition_table, connecting_apply, gram_matrix,
                  projection_norms, reconstruct, recover_map, recover_speed, rhs_vector, smooth_image,
                  tikhonov_solve)
from .config import PipelineConfig
from .controls import ControlBasis, ControlFunction
from .datasets import TraceDataset, build_dataset, load_dataset, load_medium, save_dataset, save_medium
from .errors import (BCMError, CausticError, CFLError, ChecksumError, ConfigError, DatasetError, GridError,
                     InversionError, ManifestMismatch, RayError, ScenarioError, SolverError, ValidationFailure)
from .medium import Grid, MediumField, ScenarioSpec, make_scenario
from .rays import RayChart, trace_rays
from .wavefield import ForwardSolution, TraceRecord, solve_forward

__version__ = "0.1.0"
