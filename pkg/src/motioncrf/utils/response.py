"""Response formatting utilities."""

from typing import Any, Dict, List, Optional

from ..errors import MotionCRFError


def create_command_response(
    exit_code: int, message: str, outputs: Optional[List[str]] = None, **details: Any
) -> Dict[str, Any]:
    """Create the standardized command response.

    Args:
        exit_code: Process exit code (0 success, 2 config error, 3 data error).
        message: One-line summary or diagnostic.
        outputs: Paths written by the command.
        **details: Extra command-specific values (metrics, iterations).

    Returns:
        Dictionary with 'exit_code', 'message', 'outputs' and 'details' keys
    """
    return {
        "exit_code": exit_code,
        "message": message,
        "outputs": list(outputs or []),
        "details": details,
    }


def create_error_response(command: str, error: MotionCRFError) -> Dict[str, Any]:
    """Create a failure response from a package error.

    The message is a single line naming the command and the error class.
    """
    text = " ".join(str(error).split())
    return create_command_response(error.exit_code, f"{command}: {type(error).__name__}: {text}")
