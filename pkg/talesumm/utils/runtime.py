import logging
import random
from typing import Dict, Optional

import numpy as np
import psutil
import torch

from ..core.config import settings

logger = logging.getLogger(__name__)


class RuntimeManager:
    """
    Manages seeding, determinism and CPU resources for a run
    """

    @staticmethod
    def get_available_memory() -> Dict[str, float]:
        """
        Get available and used system memory
        """
        memory = psutil.virtual_memory()
        process = psutil.Process()
        return {
            "cpu_gb": memory.available / (1024**3),
            "process_gb": process.memory_info().rss / (1024**3),
        }

    @staticmethod
    def estimate_model_gb(num_parameters: int, bytes_per_value: int = 4) -> float:
        """
        Parameters + gradients + two AdamW moments
        """
        return 4 * num_parameters * bytes_per_value / (1024**3)

    @staticmethod
    def can_train(num_parameters: int) -> bool:
        memory = RuntimeManager.get_available_memory()
        return memory["cpu_gb"] >= RuntimeManager.estimate_model_gb(num_parameters) * 1.5  # activations

    @staticmethod
    def seed_everything(seed: Optional[int] = None) -> int:
        seed = settings.default_seed if seed is None else seed
        random.seed(seed)
        np.random.seed(seed % (2**32))
        torch.manual_seed(seed)
        return seed

    @staticmethod
    def configure(seed: Optional[int] = None) -> int:
        """
        Apply thread count and determinism settings, seed every generator
        """
        if settings.num_threads > 0:
            torch.set_num_threads(settings.num_threads)
        if settings.deterministic:
            torch.use_deterministic_algorithms(True)
        seed = RuntimeManager.seed_everything(seed)
        memory = RuntimeManager.get_available_memory()
        logger.info(
            f"Runtime: seed {seed}, {torch.get_num_threads()} threads, "
            f"{memory['cpu_gb']:.1f} GB RAM available"
        )
        return seed
