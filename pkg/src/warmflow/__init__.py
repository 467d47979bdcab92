"""warmflow: AC power flow with learned Gaussian random field warm starts.

The package covers the full contingency-screening loop: parse a grid case,
solve AC power flow by Newton-Raphson, generate synthetic load-manipulation
contingency datasets, train a conditional Gaussian random field whose linear
proxy system produces warm-start voltages, and benchmark solver iteration
counts across initialization strategies.
"""

__version__ = "0.1.0"

from .grid import (Branch, Bus, Generator, GridCase, GridError, Load,
                   SchemaError, ValidationError, parse_native,
                   serialize_native, validate)
from .matpower import MatpowerParseError, parse_matpower
from .powerflow import (Injections, SolveOptions, SolveReport, VoltageState,
                        YBus, apply_droop_redispatch, build_ybus,
                        compute_injections, flat_start, solve_nr)
from .contingency import (Contingency, DatasetError, DatasetManifest, GenSpec,
                          Sample, SampleMeta, apply_contingency,
                          generate_dataset, generate_sample, make_madiot,
                          perturb_pre_case, read_dataset, sample_from_record,
                          sample_to_record, split_dataset, write_dataset)
from .features import (EDGE_FEATURE_NAMES, NODE_FEATURE_NAMES, SampleFeatures,
                       Standardizer, apply_standardizer, extract_edge_features,
                       extract_features, extract_node_features,
                       fit_standardizer, zero_injection_mask)
from .mlp import Mlp, init_mlp, mlp_forward
from .cgrf import (AssemblyPlan, CgrfError, CgrfModel, PrecisionSystem,
                   assemble_system, compare_to_linearization, infer,
                   init_model, load_model, predict, save_model)
from .training import (TrainConfig, TrainDivergence, TrainReport, eval_model,
                       nll_loss, nll_value, sample_loss_and_grads,
                       surrogate_loss, train)
from .bench import (BenchRow, BenchSummary, emit_csv, emit_report, emit_svg,
                    run_bench, summarize)

__all__ = [
    "Branch", "Bus", "Generator", "GridCase", "GridError", "Load",
    "SchemaError", "ValidationError", "parse_native", "serialize_native",
    "validate", "MatpowerParseError", "parse_matpower",
    "Injections", "SolveOptions", "SolveReport", "VoltageState", "YBus",
    "apply_droop_redispatch", "build_ybus", "compute_injections",
    "flat_start", "solve_nr",
    "Contingency", "DatasetError", "DatasetManifest", "GenSpec", "Sample",
    "SampleMeta", "apply_contingency", "generate_dataset", "generate_sample",
    "make_madiot", "perturb_pre_case", "read_dataset", "sample_from_record",
    "sample_to_record", "split_dataset", "write_dataset",
    "EDGE_FEATURE_NAMES", "NODE_FEATURE_NAMES", "SampleFeatures",
    "Standardizer", "apply_standardizer", "extract_edge_features",
    "extract_features", "extract_node_features", "fit_standardizer",
    "zero_injection_mask",
    "Mlp", "init_mlp", "mlp_forward",
    "AssemblyPlan", "CgrfError", "CgrfModel", "PrecisionSystem",
    "assemble_system", "compare_to_linearization", "infer", "init_model",
    "load_model", "predict", "save_model",
    "TrainConfig", "TrainDivergence", "TrainReport", "eval_model", "nll_loss",
    "nll_value", "sample_loss_and_grads", "surrogate_loss", "train",
    "BenchRow", "BenchSummary", "emit_csv", "emit_report", "emit_svg",
    "run_bench", "summarize",
    "__version__",
]
