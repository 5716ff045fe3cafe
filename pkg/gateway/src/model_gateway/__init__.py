"""HTTP gateway exposing VE/VG/segmentation/LLM models over the grounding
wire protocol."""

from .config import GatewayConfig, Limits
from .server import create_app

__version__ = "0.1.0"
