"""Experiment harness: manufactured cases, pipeline, studies, VTK export, CLI."""
from .config import CaseConfig, load_config
from .manufactured import ManufacturedCase, manufactured
from .pipeline import (Audit, CaseResult, StageFailure, convergence_study, fit_rate,
                       robustness_sweep, run_case, write_case_outputs)
from .vtk import export_vtk, read_vtk_counts

__all__ = ["Audit", "CaseConfig", "CaseResult", "ManufacturedCase", "StageFailure",
           "convergence_study", "export_vtk", "fit_rate", "load_config", "manufactured",
           "read_vtk_counts", "robustness_sweep", "run_case", "write_case_outputs"]
