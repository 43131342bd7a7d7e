import pytest

from motioncrf.errors import ConfigError, DataError, InvalidParameter, NoConsensus
from motioncrf.handlers.base import BaseCommandHandler
from motioncrf.handlers.registry import CommandRegistry, get_command_handler
from motioncrf.handlers.synth import SynthHandler, scene_params
from motioncrf.utils import create_command_response, create_error_response, format_message, get_message_template


class EchoHandler(BaseCommandHandler):
    @property
    def command(self) -> str:
        return "echo"

    async def process_request(self, request):
        if request.get("fail"):
            return self.create_fallback_response(request["fail"])
        return create_command_response(0, "echo", **request)


def test_registry_defaults_and_changes() -> None:
    registry = CommandRegistry()
    for command in ("infer", "synth", "learn", "eval"):
        assert registry.get_handler(command).command == command
    assert registry.get_handler("synth") is registry.get_handler("synth")
    assert registry.get_handler("echo") is None
    registry.register_handler("echo", EchoHandler)
    echo = registry.get_handler("echo")
    assert isinstance(echo, EchoHandler)
    registry.register_handler("echo", EchoHandler)
    assert registry.get_handler("echo") is not echo
    assert isinstance(get_command_handler("synth"), SynthHandler)


def test_error_responses_carry_exit_codes() -> None:
    response = create_error_response("infer", ConfigError("/tmp/x.tnsr: file\nnot found"))
    assert response["exit_code"] == 2
    assert response["message"] == "infer: ConfigError: /tmp/x.tnsr: file not found"
    assert create_error_response("infer", NoConsensus("no model"))["exit_code"] == 3
    assert create_error_response("eval", DataError("bad"))["details"] == {}


@pytest.mark.anyio
async def test_fallback_response() -> None:
    handler = EchoHandler()
    ok = await handler.process_request({"value": 1})
    assert ok == {"exit_code": 0, "message": "echo", "outputs": [], "details": {"value": 1}}
    failed = await handler.process_request({"fail": RuntimeError("boom")})
    assert failed["exit_code"] == 1
    assert failed["message"] == "echo: unexpected RuntimeError: boom"
    failed = await handler.process_request({"fail": InvalidParameter("rounds must be >= 2")})
    assert failed["exit_code"] == 2


def test_message_templates() -> None:
    assert get_message_template("missing") == ""
    text = format_message("learn_success", mode="boost", count=3, output="lambda.csv")
    assert text == "learn: boost correlation for 3 object labels written to lambda.csv"


def test_scene_params_from_request() -> None:
    params = scene_params({"height": 32, "width": None, "seed": 4, "output_dir": "x"})
    assert (params.height, params.width, params.seed) == (32, 128, 4)
    with pytest.raises(InvalidParameter):
        scene_params({"height": 2})


@pytest.mark.anyio
async def test_synth_handler_writes_scene(tmp_path) -> None:
    response = await SynthHandler().process_request({"output_dir": str(tmp_path / "scene"), "height": 16, "width": 24})
    assert response["exit_code"] == 0
    assert str(tmp_path / "scene" / "scene.cfg") in response["outputs"]
    assert response["message"].startswith("synth: 16x24 scene (seed 0,")
    bad = await SynthHandler().process_request({"output_dir": str(tmp_path / "bad"), "unary_confidence": 2.0})
    assert bad["exit_code"] == 2
    assert bad["message"].startswith("synth: InvalidParameter:")
