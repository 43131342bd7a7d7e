"""Base command handler interface."""

from abc import ABC, abstractmethod
from typing import Any, Dict

from ..errors import MotionCRFError
from ..utils.messages import format_message
from ..utils.response import create_command_response, create_error_response


class BaseCommandHandler(ABC):
    """Abstract base class for all command handlers.

    Each handler implements ``process_request`` for one subcommand. Handlers
    never raise: package errors become a response carrying the matching
    exit code and a one-line diagnostic.
    """

    @abstractmethod
    async def process_request(self, request: Dict[str, Any]) -> Dict[str, Any]:
        """Run the command described by ``request``.

        Args:
            request: Parsed command arguments

        Returns:
            Dictionary with 'exit_code', 'message', 'outputs' and 'details'
        """
        pass

    @property
    @abstractmethod
    def command(self) -> str:
        """Return the subcommand name (e.g., 'infer', 'synth')."""
        pass

    def create_fallback_response(self, error: Exception) -> Dict[str, Any]:
        """Create the response for a failed command.

        Args:
            error: The exception raised while running the command

        Returns:
            Dictionary with a non-zero exit code
        """
        if isinstance(error, MotionCRFError):
            return create_error_response(self.command, error)
        message = format_message(
            "unexpected_error", command=self.command, kind=type(error).__name__, detail=" ".join(str(error).split())
        )
        return create_command_response(1, message)
