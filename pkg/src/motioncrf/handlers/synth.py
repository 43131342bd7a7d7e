"""Handler for the ``synth`` command."""

import logging
from dataclasses import fields, replace
from typing import Any, Dict

from ..errors import InvalidParameter, MotionCRFError
from ..synthetic import SceneParams, generate_scene, write_scene
from ..utils.messages import format_message
from ..utils.response import create_command_response
from .base import BaseCommandHandler

logger = logging.getLogger(__name__)

SCENE_FIELDS = frozenset(f.name for f in fields(SceneParams))


def scene_params(request: Dict[str, Any]) -> SceneParams:
    """Build scene parameters from the request keys that name a field."""
    values = {key: value for key, value in request.items() if key in SCENE_FIELDS and value is not None}
    try:
        return replace(SceneParams(), **values)
    except TypeError as exc:
        raise InvalidParameter(str(exc)) from None


class SynthHandler(BaseCommandHandler):
    """Write a deterministic synthetic scene with ground truth.

    Request keys: ``output_dir`` plus any :class:`SceneParams` field.
    """

    @property
    def command(self) -> str:
        """Return the subcommand name."""
        return "synth"

    async def process_request(self, request: Dict[str, Any]) -> Dict[str, Any]:
        """Generate the scene and write its artifacts."""
        try:
            params = scene_params(request)
            scene = generate_scene(params)
            written = write_scene(scene, request["output_dir"])
        except MotionCRFError as exc:
            return self.create_fallback_response(exc)

        message = format_message(
            "synth_success",
            height=params.height,
            width=params.width,
            seed=params.seed,
            moving=int(scene.moving_masks[0].sum()),
            output_dir=request["output_dir"],
        )
        return create_command_response(0, message, [str(path) for path in written])
