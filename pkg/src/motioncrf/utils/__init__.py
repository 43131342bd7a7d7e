"""Utility modules shared by command handlers."""

from .messages import format_message, get_message_template
from .response import create_command_response, create_error_response

__all__ = [
    "create_command_response",
    "create_error_response",
    "format_message",
    "get_message_template",
]
