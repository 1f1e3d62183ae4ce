"""Simulated vertical federation: parties, messages, protocols and training."""

from .messages import Kind, PartyMessage, Role, ChannelAutomaton
from .parties import ActiveParty, PassiveParty, ProtocolParams, plan_secure_kernel
from .protocols import (MODES, Federation, RoundResult, run_ldp_round, run_smm1_round,
                        run_smm2_round)
from .training import (LookupTable, TrainResult, build_tree, federated_predict,
                       federation_from_slices, train_ensemble)
from .transport import ReorderingTransport, Transport

__all__ = [
    "Kind", "PartyMessage", "Role", "ChannelAutomaton", "ActiveParty", "PassiveParty",
    "ProtocolParams", "plan_secure_kernel", "MODES", "Federation", "RoundResult",
    "run_ldp_round", "run_smm1_round", "run_smm2_round", "LookupTable", "TrainResult",
    "build_tree", "federated_predict", "federation_from_slices", "train_ensemble",
    "ReorderingTransport", "Transport",
]
