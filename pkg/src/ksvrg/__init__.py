"""k-SVRG: variance-reduced finite-sum optimizers with bounded snapshot memory."""
from .data import DataPoint, Dataset, SvmlightParseError, compute_smoothness, load_svmlight, parse_svmlight, save_svmlight, serialize_svmlight, synth_logistic
from .harness import ExperimentGrid, read_csv, run_experiment, write_csv
from .kernels import BACKEND
from .objective import CostCounters, FiniteSumObjective, Loss
from .optim import Method, OptimizerConfig, run
from .records import StallSpan, TraceRow
from .snapshots import SnapshotStore
from .theory import ReferenceSolution, nonconvex_schedule, sigma_constant, solve_reference, theoretical_stepsize

__version__ = "0.1.0"
