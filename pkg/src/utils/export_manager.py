from __future__ import annotations

import json
import traceback
from typing import Any, Dict, List, Optional

import pandas as pd

from .. import TOOL_NAME, __version__
from .logger import get_logger
from .path_utils import prepare_output_path

CSV_FLOAT_FORMAT = "%.12g"


class ExportManager:
    """Writes every output file with its reproducibility header.

    CSV files start with ``# stableds <version>`` and ``# config: <json>``
    comment lines; JSON documents carry ``tool`` and ``config`` entries.
    """

    def __init__(self, config: Optional[Dict[str, Any]] = None) -> None:
        self.config: Dict[str, Any] = dict(config or {})

    def header_lines(self) -> List[str]:
        return [
            f"# {TOOL_NAME} {__version__}",
            f"# config: {json.dumps(self.config, sort_keys=True)}",
        ]

    def write_csv(self, frame: pd.DataFrame, file_path: str, float_format: str = CSV_FLOAT_FORMAT) -> str:
        """Write a table with the header comment lines.

        Args:
            frame: Table to write (index dropped)
            file_path: Destination path
            float_format: printf-style float format

        Returns:
            str: The normalized path written
        """
        logger = get_logger()
        target = prepare_output_path(file_path)
        try:
            with open(target, "w", encoding="utf-8", newline="") as f:
                for line in self.header_lines():
                    f.write(line + "\n")
                frame.to_csv(f, index=False, float_format=float_format, lineterminator="\n")
        except Exception as e:
            logger.error(f"Error writing CSV {target}: {str(e)}")
            logger.debug(f"Traceback: {traceback.format_exception(type(e), e, e.__traceback__)}")
            raise
        logger.info(f"Wrote {len(frame)} rows to {target}")
        return target

    def document(self, payload: Dict[str, Any]) -> Dict[str, Any]:
        """Payload with ``tool`` and ``config`` entries added when absent."""
        doc: Dict[str, Any] = {}
        if "format" in payload:
            doc["format"] = payload["format"]
        doc["tool"] = payload.get("tool", {"name": TOOL_NAME, "version": __version__})
        doc["config"] = payload.get("config", self.config)
        for key, value in payload.items():
            if key not in doc:
                doc[key] = value
        return doc

    def write_json(self, payload: Dict[str, Any], file_path: str) -> str:
        return self.write_text(json.dumps(self.document(payload), indent=2) + "\n", file_path)

    def write_text(self, text: str, file_path: str) -> str:
        target = prepare_output_path(file_path)
        with open(target, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        get_logger().info(f"Wrote {target}")
        return target

    def write_excel(self, sheets: Dict[str, pd.DataFrame], file_path: str) -> str:
        """Write one sheet per table plus a ``provenance`` sheet, using openpyxl."""
        logger = get_logger()
        target = prepare_output_path(file_path)
        provenance = pd.DataFrame(
            {
                "key": ["tool", "version", "config"],
                "value": [TOOL_NAME, __version__, json.dumps(self.config, sort_keys=True)],
            }
        )
        try:
            with pd.ExcelWriter(target, engine="openpyxl") as writer:
                for name, frame in sheets.items():
                    frame.to_excel(writer, sheet_name=name[:31], index=False)
                provenance.to_excel(writer, sheet_name="provenance", index=False)
        except Exception as e:
            logger.error(f"Error writing workbook {target}: {str(e)}")
            logger.debug(f"Traceback: {traceback.format_exception(type(e), e, e.__traceback__)}")
            raise
        logger.info(f"Wrote workbook {target} ({len(sheets)} sheets)")
        return target
