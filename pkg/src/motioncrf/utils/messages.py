"""Message templates for command summaries."""

from typing import Any

MESSAGE_TEMPLATES = {
    "infer_success": "infer: {layers} layers, {iterations} iterations, residual {residual:.2e}; wrote {count} files to {output_dir}",
    "infer_not_converged": "infer: stopped at {iterations} iterations with residual {residual:.2e} (tolerance {tolerance:.1e}); wrote {count} files to {output_dir}",
    "synth_success": "synth: {height}x{width} scene (seed {seed}, {moving} moving pixels) written to {output_dir}",
    "learn_success": "learn: {mode} correlation for {count} object labels written to {output}",
    "eval_success": "eval: {images} image pairs; object mean IoU {object_miou}, motion mean IoU {motion_miou}",
    "unexpected_error": "{command}: unexpected {kind}: {detail}",
}


def get_message_template(template_key: str) -> str:
    """Get the message template for a key.

    Args:
        template_key: Template key from MESSAGE_TEMPLATES

    Returns:
        Template string, empty when the key is unknown
    """
    return MESSAGE_TEMPLATES.get(template_key, "")


def format_message(template_key: str, **kwargs: Any) -> str:
    """Format a message using a template and the provided arguments.

    Args:
        template_key: Template key from MESSAGE_TEMPLATES
        **kwargs: Template formatting arguments

    Returns:
        Formatted single-line message
    """
    return get_message_template(template_key).format(**kwargs)
