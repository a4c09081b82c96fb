"""
Benchmark Error Types
Exceptions raised across the environments, agents and services packages
"""

from typing import Any, Dict, List, Optional


class AdvBenchError(Exception):
    """Base class for every error raised by the benchmarking suite"""


class ConfigurationError(AdvBenchError, ValueError):
    """Invalid shapes, wrong policy kinds or inconsistent settings"""


class ContractViolation(AdvBenchError, RuntimeError):
    """A caller broke a precondition (for example stepping a terminal state)"""


class TrainingDidNotConverge(AdvBenchError):
    """Target training finished without reaching the return threshold"""

    def __init__(self, message: str, learning_curve: List[Dict[str, Any]]):
        super().__init__(message)
        self.learning_curve = learning_curve


class ImitationFailed(AdvBenchError):
    """Behavioral cloning never reached the required action agreement"""

    def __init__(self, message: str, agreement_curve: List[float]):
        super().__init__(message)
        self.agreement_curve = agreement_curve


class SchemaError(AdvBenchError):
    """An artifact or report was written with an unsupported schema"""

    def __init__(self, message: str, found: Optional[Any] = None, expected: Optional[Any] = None):
        super().__init__(message)
        self.found = found
        self.expected = expected
