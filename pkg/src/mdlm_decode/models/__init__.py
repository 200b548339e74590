from .base import (
    ConditionalModel,
    PositionReport,
    QuerySpec,
    SampleSpec,
    entropy_nats,
    report_from_distribution,
)
from .exact import ExactJointModel, random_joint
from .remote import RemoteModel, StdioTransport, TcpTransport, connect
from .tabular import TabularMDLM, draw_mask_set, mc_objective, train_tabular_mdlm

__all__ = [
    "ConditionalModel",
    "PositionReport",
    "QuerySpec",
    "SampleSpec",
    "entropy_nats",
    "report_from_distribution",
    "ExactJointModel",
    "random_joint",
    "RemoteModel",
    "StdioTransport",
    "TcpTransport",
    "connect",
    "TabularMDLM",
    "draw_mask_set",
    "mc_objective",
    "train_tabular_mdlm",
]
