"""Command registry for managing and loading command handlers."""

from typing import Dict, Optional, Type

from .base import BaseCommandHandler
from .evaluate import EvaluateHandler
from .infer import InferHandler
from .learn import LearnHandler
from .synth import SynthHandler


class CommandRegistry:
    """Registry mapping subcommand names to handlers."""

    def __init__(self):
        """Initialize the registry with the default handlers."""
        self._handlers: Dict[str, Type[BaseCommandHandler]] = {}
        self._instances: Dict[str, BaseCommandHandler] = {}

        self.register_handler("infer", InferHandler)
        self.register_handler("synth", SynthHandler)
        self.register_handler("learn", LearnHandler)
        self.register_handler("eval", EvaluateHandler)

    def register_handler(self, command: str, handler_class: Type[BaseCommandHandler]) -> None:
        """Register a command handler.

        Args:
            command: Subcommand name
            handler_class: Handler class that implements BaseCommandHandler
        """
        self._handlers[command] = handler_class
        self._instances.pop(command, None)

    def get_handler(self, command: str) -> Optional[BaseCommandHandler]:
        """Get a handler instance, or None if the command is unknown."""
        if command not in self._handlers:
            return None
        if command not in self._instances:
            self._instances[command] = self._handlers[command]()
        return self._instances[command]


# Global registry instance
command_registry = CommandRegistry()


def get_command_handler(command: str) -> Optional[BaseCommandHandler]:
    """Get a handler from the global registry."""
    return command_registry.get_handler(command)