import logging
import os
from typing import Optional

import orjson
from pydantic import ValidationError

from bv_control import ControlRecord, JumpControl

logger = logging.getLogger(__name__)


class ReferenceStore:
    """Handles persistent fine-grid reference controls for studies without a known solution"""

    def __init__(self, storage_path: str = "references"):
        self.storage_path = storage_path
        os.makedirs(storage_path, exist_ok=True)
        logger.info(f"ReferenceStore initialized at: {os.path.abspath(storage_path)}")

    @staticmethod
    def key(example: int, scheme: str, level: int) -> str:
        return f"example{example}_{scheme}_k{level}"

    def path_for(self, key: str) -> str:
        return os.path.join(self.storage_path, f"{key}.json")

    def load_reference(self, key: str) -> Optional[JumpControl]:
        """Return the stored control, or None when missing or unreadable"""
        path = self.path_for(key)
        if not os.path.exists(path):
            logger.info(f"No stored reference {key}")
            return None
        try:
            with open(path, "rb") as f:
                record = ControlRecord.model_validate(orjson.loads(f.read()))
        except (orjson.JSONDecodeError, ValidationError, OSError) as e:
            logger.error(f"Error loading reference file {path}: {e}")
            return None
        control = JumpControl.from_record(record)
        logger.info(f"Loaded reference {key} with {control.m} jumps")
        return control

    def save_reference(self, key: str, control: JumpControl) -> str:
        path = self.path_for(key)
        payload = orjson.dumps(control.to_record().model_dump(), option=orjson.OPT_INDENT_2)
        try:
            with open(path, "wb") as f:
                f.write(payload)
        except OSError as e:
            raise OSError(e.errno, f"cannot save reference {key}: {e.strerror}", path) from e
        logger.info(f"Saved reference {key} at: {os.path.abspath(path)}")
        return path
