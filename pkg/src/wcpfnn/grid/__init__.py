"""Grid cases, admittance and the quadratic-form OPF model."""
from .case import (Branch, Bus, CaseError, CaseSyntaxError, Generator,
                   NetworkCase, load_case, parse_matpower_case, serialize_case)
from .domain import InputDomain
from .model import (AdmittanceModel, QuadraticFormModel, QuadStack,
                    build_admittance, build_quadratic_forms, evaluate_residuals)

__all__ = [
    "AdmittanceModel", "Branch", "Bus", "CaseError", "CaseSyntaxError",
    "Generator", "InputDomain", "NetworkCase", "QuadStack",
    "QuadraticFormModel", "build_admittance", "build_quadratic_forms",
    "evaluate_residuals", "load_case", "parse_matpower_case", "serialize_case",
]
