from abc import ABC, abstractmethod
from typing import Any, Dict


class DatasetProvider(ABC):
    """Common interface of the dataset sources used by the commands"""

    name = "base"

    @abstractmethod
    def execute(self, config: Dict[str, Any], inputs: Dict[str, Any]) -> Dict[str, Any]:
        """Produce or convert dataset entries"""
