from .mock import MockJointModel
from .protocol import ProtocolHandler

__all__ = ["MockJointModel", "ProtocolHandler"]
__version__ = "0.1.0"
