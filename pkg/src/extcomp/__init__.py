"""Estimators for comparisons that borrow a treatment arm from an external source.

An index randomized trial (S=1) is combined with external data (S=0) so an
index-only arm can be compared with an external-only arm, either under
transportability of outcome means (``psi``) or of the difference effect
measure through a shared arm (``phi``).
"""

from .errors import (BadValue, ConfigError, DataError, EstimationError, ExtCompError,
                     MissingColumn, MissingSharedArm, ScenarioFailure)
from .estimators import (ESTIMANDS, METHODS, ContrastEstimate, NuisanceSet, estimate_all,
                         estimate_delta, estimate_phi, estimate_psi, fit_nuisances,
                         required_cells)
from .glm import FittedGlm, ModelSpec, fit_glm, predict_class_probs, predict_mean
from .inference import (EstimationConfig, InferenceResult, bootstrap, bootstrap_many,
                        efficiency_gap, if_variance, shared_arm_test)
from .simulation import DgpParams, SimulationScenario, generate_dataset, run_scenario
from .tabular import CompositeDataset, TreatmentCoding, load_csv, read_csv, write_csv

__version__ = "0.1.0"
