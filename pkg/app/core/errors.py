from typing import Optional, Sequence


class SphereMapError(Exception):
    """
    Базовая ошибка пакета. exit_code - код завершения CLI
    """
    exit_code: int = 3

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class InputValidationError(SphereMapError):
    """Некорректные входные файлы, формы матриц или конфигурация"""
    exit_code = 2


class ModelAssumptionError(SphereMapError):
    """Нарушено модельное предположение (например, n_k >= p)"""
    exit_code = 3

    def __init__(self, detail: str, group_id: Optional[object] = None):
        super().__init__(detail)
        self.group_id = group_id


class NumericalError(SphereMapError):
    """Численный сбой: нет сходимости, недостаточный ранг"""
    exit_code = 3


class RankDeficiencyError(NumericalError):
    """Вырожденная матрица там, где нужна невырожденная"""

    def __init__(self, detail: str, singular_values: Sequence[float] = ()):
        super().__init__(detail)
        self.singular_values = [float(s) for s in singular_values]

    @property
    def sigma_min(self) -> float:
        return self.singular_values[-1] if self.singular_values else 0.0
