"""Handler for the ``infer`` command."""

import logging
from typing import Any, Dict

from ..errors import MotionCRFError
from ..graph import pipeline
from ..utils.messages import format_message
from ..utils.response import create_command_response
from .base import BaseCommandHandler

logger = logging.getLogger(__name__)


class InferHandler(BaseCommandHandler):
    """Run the joint CRF pipeline on the inputs named by a config file.

    Request keys: ``config`` (path), ``overrides`` (key=value mapping) and
    ``render`` (bool).
    """

    @property
    def command(self) -> str:
        """Return the subcommand name."""
        return "infer"

    async def process_request(self, request: Dict[str, Any]) -> Dict[str, Any]:
        """Run the pipeline graph and summarize the outputs."""
        try:
            state = await pipeline.ainvoke(
                {
                    "config_path": str(request["config"]),
                    "overrides": dict(request.get("overrides") or {}),
                    "render": bool(request.get("render", False)),
                }
            )
        except MotionCRFError as exc:
            logger.debug("infer failed", exc_info=True)
            return self.create_fallback_response(exc)

        config, result, outputs = state["config"], state["result"], state["outputs"]
        tolerance = config.inference.residual_tolerance
        key = "infer_success" if result.residual < tolerance else "infer_not_converged"
        message = format_message(
            key,
            layers=config.layers,
            iterations=result.iterations,
            residual=result.residual,
            tolerance=tolerance,
            count=len(outputs),
            output_dir=config.output_dir,
        )
        return create_command_response(
            0, message, outputs, iterations=result.iterations, residual=result.residual
        )
