from pydantic_settings import BaseSettings
import os
from dotenv import load_dotenv

# Загружаем переменные окружения
load_dotenv()

class Settings(BaseSettings):
    # Основные настройки приложения
    PROJECT_NAME: str = "SphereMap"
    PROJECT_DESCRIPTION: str = "Сферическая регрессия и восстановление отображений при рассогласовании данных"
    PROJECT_VERSION: str = "1.0.0"
    FORMAT_VERSION: int = 1

    # Логирование и параллелизм
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    THREADS: int = int(os.getenv("SPHEREMAP_THREADS", "0"))  # 0 - по числу ядер

    # Настройки файлов
    OUTPUT_FOLDER: str = os.getenv("OUTPUT_FOLDER", "./outputs")

    # Численные допуски
    UNIT_NORM_TOL: float = 1e-6
    PINV_REL_TOL: float = 1e-10
    SINGULAR_REL_TOL: float = 1e-12

    # Кросс-валидация порога
    CV_FOLDS: int = 5
    LAMBDA_GRID_MIN: float = 0.01
    LAMBDA_GRID_MAX: float = 0.28
    LAMBDA_GRID_SIZE: int = 20

    # SPPMI
    SPPMI_K: int = 10
    SPPMI_ALPHA: float = 0.75

    # Симуляции: средний размер группы, если K не задан
    DEFAULT_GROUP_SIZE: int = 5

    class Config:
        env_file = ".env"
        case_sensitive = True
        extra = "ignore"  # Разрешаем дополнительные поля в .env файле

    def max_workers(self, requested: int = 0) -> int:
        """Число потоков: явный запрос, затем SPHEREMAP_THREADS, затем число ядер"""
        if requested and requested > 0:
            return requested
        if self.THREADS > 0:
            return self.THREADS
        return os.cpu_count() or 1

settings = Settings()
